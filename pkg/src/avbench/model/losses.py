"""CTC, label-smoothed cross-entropy and their weighted combination."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import torch
import torch.nn.functional as F

# stands in for log(0); keeps logsumexp gradients finite
NEG = -1e30
_INF_THRESHOLD = 1e29


@dataclass(frozen=True)
class JointLossConfig:
    ctc_weight: float = 0.1
    label_smoothing: float = 0.1

    def __post_init__(self):
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValueError("ctc_weight must lie in [0, 1]")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ValueError("label_smoothing must lie in [0, 1)")


def _lse3(a, b, c):
    m = torch.maximum(torch.maximum(a, b), c)
    return m + torch.log(torch.exp(a - m) + torch.exp(b - m) + torch.exp(c - m))


def ctc_nll(
    log_probs: torch.Tensor,
    input_lengths: torch.Tensor,
    targets: torch.Tensor,
    target_lengths: torch.Tensor,
    blank: int = 0,
) -> torch.Tensor:
    """Per-utterance CTC negative log-likelihood by the forward algorithm.

    log_probs (B, T, C) normalised per frame; targets (B, L) padded with any
    value. Returns (B,); +inf where the target cannot be emitted in the
    available frames.
    """
    b, t_max, _ = log_probs.shape
    l_max = targets.shape[1]
    s_max = 2 * l_max + 1
    dev = log_probs.device
    ext = torch.full((b, s_max), blank, dtype=torch.long, device=dev)
    if l_max:
        ext[:, 1::2] = targets.clamp_min(0)
    # skip transition s-2 -> s allowed onto a label that differs from the label two back
    skip = torch.zeros((b, s_max), dtype=torch.bool, device=dev)
    if l_max > 1:
        skip[:, 3::2] = ext[:, 3::2] != ext[:, 1:-2:2]
    neg = torch.full((b, s_max), NEG, dtype=log_probs.dtype, device=dev)

    emit = log_probs.gather(2, ext[:, None, :].expand(b, t_max, s_max))  # B,T,S
    alpha = neg.clone()
    alpha[:, 0] = emit[:, 0, 0]
    if l_max:
        alpha[:, 1] = emit[:, 0, 1]
    pad1 = torch.full((b, 1), NEG, dtype=log_probs.dtype, device=dev)
    pad2 = torch.full((b, 2), NEG, dtype=log_probs.dtype, device=dev)
    for t in range(1, t_max):
        prev1 = torch.cat([pad1, alpha[:, :-1]], dim=1)
        prev2 = torch.where(skip, torch.cat([pad2, alpha[:, :-2]], dim=1), neg)
        new = _lse3(alpha, prev1, prev2) + emit[:, t]
        active = (t < input_lengths)[:, None]
        alpha = torch.where(active, new, alpha)
    last = (2 * target_lengths).long()
    end_blank = alpha.gather(1, last[:, None]).squeeze(1)
    end_label = alpha.gather(1, (last - 1).clamp_min(0)[:, None]).squeeze(1)
    end_label = torch.where(target_lengths > 0, end_label, torch.full_like(end_label, NEG))
    ll = torch.logaddexp(end_blank, end_label)
    nll = -ll
    return torch.where(nll >= _INF_THRESHOLD, torch.full_like(nll, float("inf")), nll)


def ctc_loss(log_probs: torch.Tensor, target: Sequence[int], blank: int = 0) -> torch.Tensor:
    """-log P(target | log_probs) for a single (T, C) utterance."""
    tgt = torch.as_tensor(list(target), dtype=torch.long).view(1, -1)
    return ctc_nll(
        log_probs[None],
        torch.tensor([log_probs.shape[0]]),
        tgt,
        torch.tensor([tgt.shape[1]]),
        blank,
    )[0]


def attention_loss(logits: torch.Tensor, targets: torch.Tensor, label_smoothing: float = 0.0, ignore_index: int = -1):
    """Label-smoothed cross-entropy averaged over non-ignored target tokens.

    logits (B, L, C) or (L, C); targets of matching leading shape.
    """
    return F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        ignore_index=ignore_index,
        label_smoothing=label_smoothing,
    )


def batch_ctc_loss(log_probs, input_lengths, targets, target_lengths, blank: int = 0) -> torch.Tensor:
    """Token-normalised batch CTC loss; infeasible utterances contribute zero."""
    nll = ctc_nll(log_probs, input_lengths, targets, target_lengths, blank)
    finite = torch.isfinite(nll)
    nll = torch.where(finite, nll, torch.zeros_like(nll))
    return nll.sum() / target_lengths[finite].sum().clamp_min(1)


def joint_loss(ctc: torch.Tensor, att: torch.Tensor, cfg: JointLossConfig) -> torch.Tensor:
    return cfg.ctc_weight * ctc + (1.0 - cfg.ctc_weight) * att
