"""Byte-pair-encoding subword vocabulary.

Spaces are folded into a word-boundary marker prefixed to the following
word, so ``"ab cd"`` is segmented from the chunks ``["ab", "▁cd"]`` and
decoding is lossless over the training alphabet.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from avbench.data import Manifest

BLANK, UNK, SOS, EOS = 0, 1, 2, 3
RESERVED = ("<blank>", "<unk>", "<sos>", "<eos>")
MARKER = "▁"
UNK_GLYPH = "⁇"


class VocabularyError(ValueError):
    pass


def _chunks(text: str) -> list[str]:
    s = text.replace(" ", MARKER)
    out, start = [], 0
    for i in range(1, len(s)):
        if s[i] == MARKER:
            out.append(s[start:i])
            start = i
    if s:
        out.append(s[start:])
    return out


@dataclass(frozen=True)
class Vocabulary:
    pieces: tuple[str, ...]
    _ids: dict = field(default=None, init=False, repr=False, compare=False)
    _max_len: int = field(default=0, init=False, repr=False, compare=False)

    def __post_init__(self):
        pieces = tuple(self.pieces)
        object.__setattr__(self, "pieces", pieces)
        if pieces[:4] != RESERVED:
            raise VocabularyError("first four pieces must be the reserved symbols")
        if len(set(pieces)) != len(pieces):
            raise VocabularyError("pieces must be unique")
        if len(pieces) < 5:
            raise VocabularyError("vocabulary needs at least 5 entries")
        object.__setattr__(self, "_ids", {p: i for i, p in enumerate(pieces)})
        object.__setattr__(self, "_max_len", max(len(p) for p in pieces[4:]))

    @property
    def size(self) -> int:
        return len(self.pieces)

    def __len__(self) -> int:
        return len(self.pieces)

    def encode(self, text: str) -> list[int]:
        """Greedy longest-match segmentation; unseen characters map to <unk>."""
        if not text:
            raise VocabularyError("cannot encode empty text")
        s = text.replace(" ", MARKER)
        ids, i = [], 0
        while i < len(s):
            for j in range(min(len(s), i + self._max_len), i, -1):
                pid = self._ids.get(s[i:j])
                if pid is not None and pid >= 4:
                    ids.append(pid)
                    i = j
                    break
            else:
                ids.append(UNK)
                i += 1
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        out = []
        for i in ids:
            i = int(i)
            if not 0 <= i < self.size:
                raise VocabularyError(f"token id {i} out of range [0, {self.size})")
            if i == UNK:
                out.append(UNK_GLYPH)
            elif i >= 4:
                out.append(self.pieces[i])
            # blank/sos/eos render as nothing
        return "".join(out).replace(MARKER, " ")

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w", encoding="utf-8") as f:
            for p in self.pieces:
                f.write(p + "\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path, encoding="utf-8") as f:
            return cls(tuple(line.rstrip("\n") for line in f))


def train_bpe(texts: Sequence[str], size: int) -> Vocabulary:
    """Learn ``size - 4 - |alphabet|`` merges by pair frequency.

    Ties are broken by the lexicographically smallest pair, so the result
    depends only on the multiset of chunks.
    """
    counts = Counter(c for t in texts for c in _chunks(t))
    if not counts:
        raise VocabularyError("cannot train a vocabulary on an empty corpus")
    alphabet = sorted({ch for c in counts for ch in c})
    if size < len(alphabet) + 4 or size < 5:
        raise VocabularyError(f"size {size} is smaller than alphabet ({len(alphabet)}) + 4 reserved")
    words = {tuple(c): n for c, n in counts.items()}
    pieces = list(RESERVED) + alphabet
    known = set(pieces)
    while len(pieces) < size:
        pairs: Counter = Counter()
        for w, n in words.items():
            for a, b in zip(w, w[1:]):
                pairs[a, b] += n
        # a merge that reproduces an existing piece would not grow the vocabulary
        candidates = [(n, p) for p, n in pairs.items() if p[0] + p[1] not in known]
        if not candidates:
            raise VocabularyError(f"corpus supports only {len(pieces)} pieces, {size} requested")
        best_n = max(n for n, _ in candidates)
        a, b = min(p for n, p in candidates if n == best_n)
        merged = a + b
        pieces.append(merged)
        known.add(merged)
        words = {_merge(w, a, b): n for w, n in words.items()}
    return Vocabulary(tuple(pieces))


def _merge(word: tuple, a: str, b: str) -> tuple:
    out, i = [], 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == a and word[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return tuple(out)


def train_vocab(corpus: Manifest, size: int) -> Vocabulary:
    return train_bpe([r.transcript for r in corpus if r.transcript], size)
