"""Input normalisation and the audio/video front-ends.

Both front-ends emit features at 25 frames per second with width
``encoder_dim``. Padded batches are handled by zeroing every position past a
sample's valid length after each layer, so a sample's features do not depend
on what it was batched with.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from avbench.data import SAMPLE_RATE, VIDEO_FPS, Manifest

log = logging.getLogger(__name__)

EPS = 1e-8
FRAME_RATE = 25
HOP = SAMPLE_RATE // FRAME_RATE  # 640 samples per feature frame
MIN_VIDEO_SIZE = 8


@dataclass(frozen=True)
class FrontendConfig:
    encoder_dim: int = 64
    audio_channels: tuple[int, ...] = (16, 32)  # widths of all but the last strided conv
    audio_strides: tuple[int, ...] = (10, 8, 8)
    audio_res_blocks: int = 2
    video_stem_channels: int = 8
    video_stage_channels: tuple[int, ...] = (16, 32)  # one residual stage per entry
    video_blocks_per_stage: int = 1

    def __post_init__(self):
        object.__setattr__(self, "audio_channels", tuple(self.audio_channels))
        object.__setattr__(self, "audio_strides", tuple(self.audio_strides))
        object.__setattr__(self, "video_stage_channels", tuple(self.video_stage_channels))
        if math.prod(self.audio_strides) != HOP:
            raise ValueError(f"audio strides must multiply to {HOP}, got {math.prod(self.audio_strides)}")
        if any(s % 2 for s in self.audio_strides):
            raise ValueError("audio strides must be even")
        if len(self.audio_channels) != len(self.audio_strides) - 1:
            raise ValueError("need one audio channel width per stride except the last")


@dataclass
class FeatureSequence:
    """T x D features at 25 fps."""

    frames: torch.Tensor
    modality: str  # "audio" | "video" | "fused"
    rate_hz: int = FRAME_RATE

    @property
    def valid_len(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


# --- preprocessing -----------------------------------------------------------


def preprocess_audio(waveform: np.ndarray) -> np.ndarray:
    """Per-utterance z-normalisation."""
    x = np.asarray(waveform, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty waveform")
    mu, sigma = x.mean(), x.std()
    if sigma < EPS:
        log.warning("constant waveform (std %.3g); returning zeros", sigma)
        return np.zeros_like(x)
    return (x - mu) / sigma


@dataclass(frozen=True)
class VideoStats:
    mean: float
    std: float


def compute_video_stats(frame_stacks: Iterable[np.ndarray] | Manifest) -> VideoStats:
    """Pixel mean/std over a whole training set."""
    if isinstance(frame_stacks, Manifest):
        frame_stacks = (r.load_video() for r in frame_stacks)
    n = 0
    total = 0.0
    total_sq = 0.0
    for frames in frame_stacks:
        f = np.asarray(frames, dtype=np.float64)
        n += f.size
        total += f.sum()
        total_sq += np.square(f).sum()
    if n == 0:
        raise ValueError("no frames to compute statistics from")
    mean = total / n
    var = max(total_sq / n - mean * mean, 0.0)
    if var <= 0.0:
        raise ValueError("training-set pixel std is zero")
    return VideoStats(float(mean), float(math.sqrt(var)))


def preprocess_video(frames: np.ndarray, stats: VideoStats) -> np.ndarray:
    return (np.asarray(frames, dtype=np.float64) - stats.mean) / stats.std


# --- modules -----------------------------------------------------------------


def length_mask(lengths: torch.Tensor, max_len: int) -> torch.Tensor:
    """(B, max_len) bool, True on valid positions."""
    return torch.arange(max_len, device=lengths.device)[None, :] < lengths[:, None]


class ChannelNorm(nn.Module):
    """LayerNorm over the channel axis of a (B, C, ...) tensor."""

    def __init__(self, channels: int):
        super().__init__()
        self.norm = nn.LayerNorm(channels)

    def forward(self, x):
        return self.norm(x.movedim(1, -1)).movedim(-1, 1)


class ResBlock1d(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1, bias=False)
        self.norm1 = ChannelNorm(channels)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1, bias=False)
        self.norm2 = ChannelNorm(channels)

    def forward(self, x, mask):
        y = F.relu(self.norm1(self.conv1(x))) * mask
        y = self.norm2(self.conv2(y))
        return F.relu(x + y) * mask


class AudioFrontend(nn.Module):
    """Strided 1D conv stack (total stride 640) followed by residual blocks."""

    def __init__(self, cfg: FrontendConfig):
        super().__init__()
        widths = (*cfg.audio_channels, cfg.encoder_dim)
        self.down = nn.ModuleList()
        c_in = 1
        for width, stride in zip(widths, cfg.audio_strides):
            # kernel 2s, padding s/2 gives exactly floor(n / s) outputs
            self.down.append(
                nn.ModuleDict(
                    {
                        "conv": nn.Conv1d(c_in, width, 2 * stride, stride=stride, padding=stride // 2),
                        "norm": ChannelNorm(width),
                    }
                )
            )
            c_in = width
        self.strides = cfg.audio_strides
        self.blocks = nn.ModuleList(ResBlock1d(cfg.encoder_dim) for _ in range(cfg.audio_res_blocks))

    def forward(self, wav: torch.Tensor, lengths: torch.Tensor):
        """wav (B, N), lengths (B,) in samples -> (B, T, D), (B,) frames."""
        if wav.shape[-1] < HOP or bool((lengths < HOP).any()):
            raise ValueError(f"audio front-end needs at least {HOP} samples")
        x = (wav * length_mask(lengths, wav.shape[-1])).unsqueeze(1)
        lens = lengths
        for layer, stride in zip(self.down, self.strides):
            x = layer["conv"](x)
            lens = torch.div(lens, stride, rounding_mode="floor")
            mask = length_mask(lens, x.shape[-1]).unsqueeze(1).to(x.dtype)
            x = F.relu(layer["norm"](x)) * mask
        for block in self.blocks:
            x = block(x, mask)
        return x.transpose(1, 2), lens

    def features(self, waveform) -> FeatureSequence:
        wav = torch.as_tensor(np.asarray(waveform), dtype=next(self.parameters()).dtype)[None]
        out, _ = self(wav, torch.tensor([wav.shape[-1]]))
        return FeatureSequence(out[0], "audio")


class ResBlock2d(nn.Module):
    def __init__(self, c_in: int, c_out: int, stride: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False)
        self.norm1 = nn.GroupNorm(1, c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1, bias=False)
        self.norm2 = nn.GroupNorm(1, c_out)
        self.skip = None
        if stride != 1 or c_in != c_out:
            self.skip = nn.Sequential(nn.Conv2d(c_in, c_out, 1, stride=stride, bias=False), nn.GroupNorm(1, c_out))

    def forward(self, x):
        y = F.relu(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return F.relu(y + (x if self.skip is None else self.skip(x)))


class VideoFrontend(nn.Module):
    """5x7x7 spatio-temporal stem (stride 1x2x2), per-frame 2D residual stages, global pooling."""

    def __init__(self, cfg: FrontendConfig):
        super().__init__()
        c0 = cfg.video_stem_channels
        self.stem = nn.Conv3d(1, c0, (5, 7, 7), stride=(1, 2, 2), padding=(2, 3, 3), bias=False)
        self.stem_norm = nn.GroupNorm(1, c0)
        stages = []
        c_in = c0
        for i, c_out in enumerate(cfg.video_stage_channels):
            for j in range(cfg.video_blocks_per_stage):
                stride = 2 if (i > 0 and j == 0) else 1
                stages.append(ResBlock2d(c_in, c_out, stride))
                c_in = c_out
        self.stages = nn.Sequential(*stages)
        self.proj = nn.Linear(c_in, cfg.encoder_dim)

    def forward(self, frames: torch.Tensor, lengths: torch.Tensor):
        """frames (B, T, H, W), lengths (B,) -> (B, T, D), lengths."""
        b, t, h, w = frames.shape
        if h < MIN_VIDEO_SIZE or w < MIN_VIDEO_SIZE:
            raise ValueError(f"video frames must be at least {MIN_VIDEO_SIZE}x{MIN_VIDEO_SIZE}, got {h}x{w}")
        if t < 1:
            raise ValueError("need at least one frame")
        mask = length_mask(lengths, t).to(frames.dtype)
        x = (frames * mask[:, :, None, None]).unsqueeze(1)  # B,1,T,H,W
        x = self.stem(x)
        x = x.transpose(1, 2).reshape(b * t, x.shape[1], x.shape[3], x.shape[4])
        x = F.relu(self.stem_norm(x))
        x = F.max_pool2d(x, 3, stride=2, padding=1)
        x = self.stages(x)
        x = x.mean(dim=(2, 3)).reshape(b, t, -1)
        return self.proj(x) * mask[..., None], lengths

    def features(self, frames) -> FeatureSequence:
        x = torch.as_tensor(np.asarray(frames), dtype=next(self.parameters()).dtype)[None]
        out, _ = self(x, torch.tensor([x.shape[1]]))
        return FeatureSequence(out[0], "video")


def audio_frames(n_samples: int) -> int:
    return n_samples // HOP


def expected_frames(duration_s: float) -> int:
    return round(duration_s * VIDEO_FPS)
