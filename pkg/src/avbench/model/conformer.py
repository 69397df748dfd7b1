"""Conformer encoder.

Each block is the macaron composition
``x + ½FFN -> x + MHSA -> x + Conv -> x + ½FFN -> LayerNorm``.
Self-attention carries a learned per-head bias indexed by clipped relative
offset (``pos_enc="relative"``) or the encoder adds sinusoidal absolute
positions to its input (``pos_enc="absolute"``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F


@dataclass(frozen=True)
class EncoderConfig:
    layers: int = 2
    dim: int = 64
    ffn_dim: int = 256
    heads: int = 4
    conv_kernel: int = 15
    dropout: float = 0.1
    pos_enc: str = "relative"
    max_rel_dist: int = 64

    def __post_init__(self):
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.conv_kernel % 2 == 0:
            raise ValueError("conv_kernel must be odd")
        if self.pos_enc not in ("relative", "absolute"):
            raise ValueError(f"unknown pos_enc {self.pos_enc!r}")


def sinusoidal(length: int, dim: int, dtype=torch.float32) -> torch.Tensor:
    pos = torch.arange(length, dtype=torch.float64)[:, None]
    div = torch.exp(torch.arange(0, dim, 2, dtype=torch.float64) * (-math.log(10000.0) / dim))
    pe = torch.zeros(length, dim, dtype=torch.float64)
    pe[:, 0::2] = torch.sin(pos * div)
    pe[:, 1::2] = torch.cos(pos * div)[:, : dim // 2]
    return pe.to(dtype)


class FeedForward(nn.Module):
    def __init__(self, dim, hidden, dropout):
        super().__init__()
        self.net = nn.Sequential(
            nn.LayerNorm(dim),
            nn.Linear(dim, hidden),
            nn.SiLU(),
            nn.Dropout(dropout),
            nn.Linear(hidden, dim),
            nn.Dropout(dropout),
        )

    def forward(self, x):
        return self.net(x)


class SelfAttention(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.heads = cfg.heads
        self.d_head = cfg.dim // cfg.heads
        self.norm = nn.LayerNorm(cfg.dim)
        self.qkv = nn.Linear(cfg.dim, 3 * cfg.dim)
        self.out = nn.Linear(cfg.dim, cfg.dim)
        self.dropout = nn.Dropout(cfg.dropout)
        self.max_rel = cfg.max_rel_dist
        self.rel_bias = nn.Parameter(torch.zeros(cfg.heads, 2 * cfg.max_rel_dist + 1)) if cfg.pos_enc == "relative" else None

    def forward(self, x, key_padding_mask=None):
        b, t, d = x.shape
        q, k, v = self.qkv(self.norm(x)).view(b, t, 3, self.heads, self.d_head).permute(2, 0, 3, 1, 4)
        scores = q @ k.transpose(-1, -2) / math.sqrt(self.d_head)
        if self.rel_bias is not None:
            offs = torch.arange(t, device=x.device)
            rel = (offs[None, :] - offs[:, None]).clamp(-self.max_rel, self.max_rel) + self.max_rel
            scores = scores + self.rel_bias[:, rel]
        if key_padding_mask is not None:
            scores = scores.masked_fill(key_padding_mask[:, None, None, :], float("-inf"))
        attn = self.dropout(scores.softmax(dim=-1))
        y = (attn @ v).transpose(1, 2).reshape(b, t, d)
        return self.dropout(self.out(y))


class ConvModule(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.norm = nn.LayerNorm(cfg.dim)
        self.pw1 = nn.Conv1d(cfg.dim, 2 * cfg.dim, 1)
        self.dw = nn.Conv1d(cfg.dim, cfg.dim, cfg.conv_kernel, padding=cfg.conv_kernel // 2, groups=cfg.dim)
        self.dw_norm = nn.LayerNorm(cfg.dim)
        self.pw2 = nn.Conv1d(cfg.dim, cfg.dim, 1)
        self.dropout = nn.Dropout(cfg.dropout)

    def forward(self, x, valid=None):
        y = F.glu(self.pw1(self.norm(x).transpose(1, 2)), dim=1)
        if valid is not None:
            y = y * valid[:, None, :]
        y = self.dw(y)
        y = F.silu(self.dw_norm(y.transpose(1, 2))).transpose(1, 2)
        return self.dropout(self.pw2(y).transpose(1, 2))


class ConformerBlock(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.ff1 = FeedForward(cfg.dim, cfg.ffn_dim, cfg.dropout)
        self.attn = SelfAttention(cfg)
        self.conv = ConvModule(cfg)
        self.ff2 = FeedForward(cfg.dim, cfg.ffn_dim, cfg.dropout)
        self.norm = nn.LayerNorm(cfg.dim)

    def forward(self, x, pad_mask=None):
        valid = None if pad_mask is None else (~pad_mask).to(x.dtype)
        x = x + 0.5 * self.ff1(x)
        x = x + self.attn(x, pad_mask)
        x = x + self.conv(x, valid)
        x = x + 0.5 * self.ff2(x)
        x = self.norm(x)
        return x if valid is None else x * valid[..., None]


class ConformerEncoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.blocks = nn.ModuleList(ConformerBlock(cfg) for _ in range(cfg.layers))

    def forward(self, x: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """x (B, T, D) -> (B, T, D)."""
        if x.shape[-1] != self.cfg.dim:
            raise ValueError(f"encoder expects width {self.cfg.dim}, got {x.shape[-1]}")
        if not self.blocks:
            return x
        pad_mask = None
        if lengths is not None:
            pad_mask = torch.arange(x.shape[1], device=x.device)[None, :] >= lengths[:, None]
        if self.cfg.pos_enc == "absolute":
            x = x + sinusoidal(x.shape[1], x.shape[2], x.dtype)
        for block in self.blocks:
            x = block(x, pad_mask)
        return x
