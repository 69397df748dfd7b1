"""Character n-gram language model for shallow fusion.

Any object with ``token_logprobs(prefix_ids) -> np.ndarray`` over the full
vocabulary can be passed to the decoder; this bigram model is the bundled
stand-in.
"""

from __future__ import annotations

from typing import Protocol, Sequence

import numpy as np

from avbench.tokenizer import EOS, MARKER, Vocabulary

BOS_CHAR = "\x02"
EOS_CHAR = "\x03"


class LanguageModel(Protocol):
    def token_logprobs(self, prefix_ids: Sequence[int]) -> np.ndarray: ...


class CharBigramLM:
    """Add-k smoothed character bigram scored over subword pieces."""

    def __init__(self, texts: Sequence[str], vocab: Vocabulary, k: float = 0.1):
        self.vocab = vocab
        chars = sorted({c for t in texts for c in t.replace(" ", MARKER)} | {c for p in vocab.pieces[4:] for c in p})
        self.contexts = [BOS_CHAR] + chars
        self.outputs = chars + [EOS_CHAR]
        ci = {c: i for i, c in enumerate(self.contexts)}
        oi = {c: i for i, c in enumerate(self.outputs)}
        counts = np.full((len(self.contexts), len(self.outputs)), k)
        for t in texts:
            seq = [BOS_CHAR] + list(t.replace(" ", MARKER)) + [EOS_CHAR]
            for a, b in zip(seq, seq[1:]):
                counts[ci[a], oi[b]] += 1
        self.logp = np.log(counts / counts.sum(axis=1, keepdims=True))
        self._ci, self._oi = ci, oi
        # table[ctx, token] = log P(piece chars | ctx)
        table = np.full((len(self.contexts), vocab.size), -np.inf)
        for tok in range(4, vocab.size):
            piece = vocab.pieces[tok]
            for c0 in range(len(self.contexts)):
                lp, prev = 0.0, c0
                for ch in piece:
                    lp += self.logp[prev, oi[ch]]
                    prev = ci[ch]
                table[c0, tok] = lp
        table[:, EOS] = self.logp[:, oi[EOS_CHAR]]
        self.table = table

    def _context(self, prefix_ids: Sequence[int]) -> int:
        for tok in reversed(list(prefix_ids)):
            if tok >= 4:
                return self._ci[self.vocab.pieces[tok][-1]]
        return 0

    def token_logprobs(self, prefix_ids: Sequence[int]) -> np.ndarray:
        return self.table[self._context(prefix_ids)]

    def sequence_logprob(self, text: str) -> float:
        seq = [BOS_CHAR] + list(text.replace(" ", MARKER)) + [EOS_CHAR]
        return float(sum(self.logp[self._ci[a], self._oi[b]] for a, b in zip(seq, seq[1:])))
