"""Joint CTC/attention beam search with optional shallow LM fusion.

A hypothesis ``y`` is scored as

    log p_att(y) + w_ctc * log p_ctc_prefix(y) + w_lm * log p_lm(y) + w_len * |y|

where the CTC term is the prefix probability while ``y`` is open and the
full-sequence probability once ``<eos>`` has been emitted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from avbench.model.lm import LanguageModel
from avbench.tokenizer import BLANK, EOS, SOS, UNK

StepFn = Callable[[list[tuple[int, ...]]], np.ndarray]


@dataclass(frozen=True)
class DecodeConfig:
    beam: int = 10
    ctc_weight: float = 0.1
    lm_weight: float = 0.0
    length_penalty: float = 0.0
    max_len: Optional[int] = None

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam must be >= 1")


@dataclass(frozen=True)
class Hypothesis:
    ids: tuple[int, ...]
    score: float
    attention: float
    ctc: float
    lm: float
    length: int

    @property
    def components(self) -> dict[str, float]:
        return {"attention": self.attention, "ctc": self.ctc, "lm": self.lm, "length_penalty": float(self.length)}

    def weighted(self, cfg: DecodeConfig) -> float:
        return self.attention + cfg.ctc_weight * self.ctc + cfg.lm_weight * self.lm + cfg.length_penalty * self.length


@dataclass
class CTCState:
    r_n: np.ndarray  # log P(prefix, path ends in a label) per frame
    r_b: np.ndarray  # log P(prefix, path ends in blank) per frame
    last: int = -1


class CTCPrefixScorer:
    """Prefix probabilities log P(y... | x) under a CTC posterior (T, C)."""

    def __init__(self, log_probs: np.ndarray, blank: int = BLANK, eos: int = EOS):
        self.lp = np.asarray(log_probs, dtype=np.float64)
        self.blank = blank
        self.eos = eos

    def initial(self) -> CTCState:
        t = self.lp.shape[0]
        return CTCState(np.full(t, -np.inf), np.cumsum(self.lp[:, self.blank]), -1)

    def extend(self, state: CTCState, tokens: np.ndarray) -> tuple[np.ndarray, CTCState]:
        """Prefix scores of ``prefix + c`` for each c; returns batched states (T, K)."""
        tokens = np.asarray(tokens)
        lp = self.lp
        n_t = lp.shape[0]
        k = len(tokens)
        r_n = np.full((n_t, k), -np.inf)
        r_b = np.full((n_t, k), -np.inf)
        if state.last == -1:
            r_n[0] = lp[0, tokens]
        both = np.logaddexp(state.r_b, state.r_n)
        phi = np.where(tokens[None, :] == state.last, state.r_b[:, None], both[:, None])
        psi = r_n[0].copy()
        emit = lp[:, tokens]
        for t in range(1, n_t):
            r_n[t] = np.logaddexp(r_n[t - 1], phi[t - 1]) + emit[t]
            r_b[t] = np.logaddexp(r_b[t - 1], r_n[t - 1]) + lp[t, self.blank]
            psi = np.logaddexp(psi, phi[t - 1] + emit[t])
        is_eos = tokens == self.eos
        if is_eos.any():
            psi[is_eos] = both[-1]
        return psi, CTCState(r_n, r_b, -2)

    @staticmethod
    def select(batched: CTCState, j: int, token: int) -> CTCState:
        return CTCState(batched.r_n[:, j].copy(), batched.r_b[:, j].copy(), int(token))


def _excluded(vocab_size: int) -> np.ndarray:
    mask = np.zeros(vocab_size, dtype=bool)
    mask[[BLANK, UNK, SOS]] = True
    return mask


@dataclass
class _Live:
    ids: tuple[int, ...]
    att: float
    ctc: float
    lm: float
    state: Optional[CTCState] = field(default=None, repr=False)


def _expand(
    h: _Live,
    att_row: np.ndarray,
    cfg: DecodeConfig,
    scorer: Optional[CTCPrefixScorer],
    lm: Optional[LanguageModel],
    excluded: np.ndarray,
    final_step: bool,
):
    n_vocab = att_row.shape[0]
    tokens = np.flatnonzero(~excluded)
    att = h.att + att_row
    ctc = np.zeros(n_vocab)
    batched = None
    if scorer is not None:
        psi, batched = scorer.extend(h.state, tokens)
        ctc[tokens] = psi
    lmv = np.zeros(n_vocab)
    if lm is not None:
        lmv = h.lm + np.asarray(lm.token_logprobs(h.ids), dtype=np.float64)
    length = len(h.ids) + (np.arange(n_vocab) != EOS)
    score = att + cfg.ctc_weight * ctc + cfg.lm_weight * lmv + cfg.length_penalty * length
    score[excluded] = -np.inf
    if final_step:
        keep = score[EOS]
        score[:] = -np.inf
        score[EOS] = keep
    col = np.full(n_vocab, -1)
    col[tokens] = np.arange(len(tokens))
    return score, att, ctc, lmv, length, batched, col


def beam_search(
    step_fn: StepFn,
    ctc_log_probs: Optional[np.ndarray],
    cfg: DecodeConfig,
    lm: Optional[LanguageModel] = None,
) -> list[Hypothesis]:
    """Returns ended hypotheses sorted by descending score.

    ``step_fn`` maps a list of prefixes to next-token attention log-probs
    (n, C). Ended hypotheses do not free beam slots, so ``beam=1`` is greedy.
    """
    use_ctc = ctc_log_probs is not None and cfg.ctc_weight != 0.0
    scorer = CTCPrefixScorer(ctc_log_probs) if use_ctc else None
    use_lm = lm is not None and cfg.lm_weight != 0.0
    lm = lm if use_lm else None
    max_len = cfg.max_len if cfg.max_len is not None else (len(ctc_log_probs) if ctc_log_probs is not None else 100)

    live = [_Live((), 0.0, 0.0, 0.0, scorer.initial() if scorer else None)]
    ended: list[Hypothesis] = []
    excluded = None
    for step in range(max_len + 1):
        att_rows = np.asarray(step_fn([h.ids for h in live]), dtype=np.float64)
        if excluded is None:
            excluded = _excluded(att_rows.shape[1])
        expansions = [_expand(h, att_rows[i], cfg, scorer, lm, excluded, step == max_len) for i, h in enumerate(live)]
        scores = np.stack([e[0] for e in expansions])
        flat = scores.ravel()
        order = np.argsort(-flat, kind="stable")[: cfg.beam]
        new_live = []
        n_vocab = scores.shape[1]
        for idx in order:
            if not np.isfinite(flat[idx]):
                break
            i, tok = divmod(int(idx), n_vocab)
            _, att, ctc, lmv, length, batched, col = expansions[i]
            h = live[i]
            if tok == EOS:
                ended.append(Hypothesis(h.ids, float(flat[idx]), float(att[tok]), float(ctc[tok]), float(lmv[tok]), len(h.ids)))
            else:
                state = CTCPrefixScorer.select(batched, col[tok], tok) if batched is not None else None
                new_live.append(_Live(h.ids + (tok,), float(att[tok]), float(ctc[tok]), float(lmv[tok]), state))
        live = new_live
        if not live:
            break
    ended.sort(key=lambda h: -h.score)
    return ended


def greedy_search(
    step_fn: StepFn,
    ctc_log_probs: Optional[np.ndarray],
    cfg: DecodeConfig,
    lm: Optional[LanguageModel] = None,
) -> tuple[int, ...]:
    """Token-by-token argmax of the same combined score."""
    use_ctc = ctc_log_probs is not None and cfg.ctc_weight != 0.0
    scorer = CTCPrefixScorer(ctc_log_probs) if use_ctc else None
    state = scorer.initial() if scorer else None
    max_len = cfg.max_len if cfg.max_len is not None else (len(ctc_log_probs) if ctc_log_probs is not None else 100)
    ids: list[int] = []
    att_total = lm_total = 0.0
    for step in range(max_len + 1):
        att_row = np.asarray(step_fn([tuple(ids)]), dtype=np.float64)[0]
        n_vocab = att_row.shape[0]
        score = att_total + att_row + cfg.length_penalty * (len(ids) + (np.arange(n_vocab) != EOS))
        cand = np.flatnonzero(~_excluded(n_vocab))
        batched = None
        if scorer is not None:
            psi, batched = scorer.extend(state, cand)
            score[cand] += cfg.ctc_weight * psi
        lm_row = None
        if lm is not None and cfg.lm_weight != 0.0:
            lm_row = lm_total + np.asarray(lm.token_logprobs(ids), dtype=np.float64)
            score += cfg.lm_weight * lm_row
        score[_excluded(n_vocab)] = -np.inf
        best = EOS if step == max_len else int(np.argmax(score))
        if best == EOS:
            break
        att_total += att_row[best]
        if lm_row is not None:
            lm_total = lm_row[best]
        if scorer is not None:
            state = CTCPrefixScorer.select(batched, int(np.flatnonzero(cand == best)[0]), best)
        ids.append(best)
    return tuple(ids)

