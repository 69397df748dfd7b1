"""Directional central-difference gradient check."""

import torch


def directional_rel_error(fn, x: torch.Tensor, n_dirs: int = 3, h: float = 1e-6, seed: int = 0) -> float:
    """max over random unit directions d of |g.d - fd| / max(|g.d|, |fd|, 1e-12)."""
    x = x.detach().clone().requires_grad_(True)
    (g,) = torch.autograd.grad(fn(x), x)
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    with torch.no_grad():
        for _ in range(n_dirs):
            d = torch.randn(x.shape, generator=gen, dtype=x.dtype)
            d /= d.norm()
            fd = (fn(x + h * d) - fn(x - h * d)) / (2 * h)
            an = (g * d).sum()
            worst = max(worst, float((an - fd).abs() / max(an.abs(), fd.abs(), 1e-12)))
    return worst
