"""Word error rate."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence


def edit_distance(ref: Sequence, hyp: Sequence) -> int:
    """Levenshtein distance with unit costs (two-row DP)."""
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (r != h))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class WERResult:
    errors: int
    ref_words: int

    @property
    def wer(self) -> float:
        return self.errors / self.ref_words


def wer_counts(refs: Sequence[str], hyps: Sequence[str]) -> WERResult:
    if len(refs) != len(hyps):
        raise ValueError(f"got {len(refs)} references but {len(hyps)} hypotheses")
    errors = n_ref = 0
    for k, (r, h) in enumerate(zip(refs, hyps)):
        r_words = r.split()
        if not r_words:
            raise ValueError(f"reference {k} is empty")
        errors += edit_distance(r_words, h.split())
        n_ref += len(r_words)
    if n_ref == 0:
        raise ValueError("no references")
    return WERResult(errors, n_ref)


def wer(refs: Sequence[str], hyps: Sequence[str]) -> float:
    """Corpus-level WER: total word edits over total reference words."""
    return wer_counts(refs, hyps).wer
