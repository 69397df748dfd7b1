"""Training-time augmentation and SNR-controlled noise.

All functions are pure in ``(input, config, seed)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
import torch.nn.functional as F

from avbench.data import SAMPLE_RATE, VIDEO_FPS, Manifest

TRAIN_SNR_LEVELS_DB = (-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, math.inf)
EVAL_SNR_GRID_DB = (12.5, 7.5, 2.5, -2.5, -7.5)
NOISE_KINDS = ("babble", "pink", "white")
BABBLE_TALKERS = 6
_SILENT = 1e-12


@dataclass(frozen=True)
class TimeMaskConfig:
    masks_per_second: float = 1.0
    max_mask_s: float = 0.4
    fill: str = "utterance_mean"  # or "zeros"

    def __post_init__(self):
        if self.fill not in ("utterance_mean", "zeros"):
            raise ValueError(f"unknown fill {self.fill!r}")
        if self.masks_per_second < 0 or self.max_mask_s < 0:
            raise ValueError("mask rate and length must be non-negative")


@dataclass(frozen=True)
class VideoAugConfig:
    flip_prob: float = 0.5
    crop_size: int = 28  # full-scale geometry: 88 of 96
    time_mask: TimeMaskConfig = TimeMaskConfig()


@dataclass(frozen=True)
class NoiseSpec:
    kind: str = "white"
    snr_db: float = math.inf
    seed: int = 0

    def __post_init__(self):
        if self.kind not in NOISE_KINDS:
            raise ValueError(f"unknown noise kind {self.kind!r}")


def mask_spans(n_positions: int, duration_s: float, rate_hz: float, cfg: TimeMaskConfig, seed) -> list[tuple[int, int]]:
    """(start, length) of each mask; length uniform in [0, max_mask_s * rate_hz]."""
    rng = np.random.default_rng(seed)
    n_masks = math.floor(duration_s * cfg.masks_per_second + 1e-9)
    max_len = min(round(cfg.max_mask_s * rate_hz), n_positions)
    spans = []
    for _ in range(n_masks):
        length = int(rng.integers(0, max_len + 1))
        start = int(rng.integers(0, n_positions - length + 1))
        spans.append((start, length))
    return spans


def adaptive_time_mask(x: np.ndarray, cfg: TimeMaskConfig, seed, rate_hz: float = VIDEO_FPS) -> np.ndarray:
    """Mask a number of spans proportional to the duration along axis 0.

    ``rate_hz`` is the rate of axis 0: 25 for feature frames, 16000 for
    waveform samples.
    """
    x = np.asarray(x)
    n = x.shape[0]
    if n == 0:
        return x.copy()
    spans = mask_spans(n, n / rate_hz, rate_hz, cfg, seed)
    out = x.copy()
    if not spans:
        return out
    fill = x.mean(axis=0) if cfg.fill == "utterance_mean" else 0.0
    for start, length in spans:
        out[start : start + length] = fill
    return out


def flip_horizontal(frames: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(frames)[..., ::-1])


def random_crop_resize(frames: np.ndarray, crop: int, rng: np.random.Generator) -> np.ndarray:
    t, h, w = frames.shape
    if crop > h or crop > w:
        raise ValueError(f"crop {crop} larger than frame {h}x{w}")
    if crop == h and crop == w:
        return frames.copy()
    y0 = int(rng.integers(0, h - crop + 1))
    x0 = int(rng.integers(0, w - crop + 1))
    patch = torch.as_tensor(np.ascontiguousarray(frames[:, y0 : y0 + crop, x0 : x0 + crop]), dtype=torch.float64)
    out = F.interpolate(patch[:, None], size=(h, w), mode="bilinear", align_corners=False)[:, 0]
    return out.numpy().astype(frames.dtype)


def video_augment(frames: np.ndarray, seed, cfg: VideoAugConfig = VideoAugConfig(), train: bool = True) -> np.ndarray:
    """Flip (p=flip_prob), random crop resized back, then adaptive time masking."""
    frames = np.asarray(frames)
    if not train:
        return frames
    rng = np.random.default_rng(seed)
    if rng.random() < cfg.flip_prob:
        frames = flip_horizontal(frames)
    frames = random_crop_resize(frames, cfg.crop_size, rng)
    return adaptive_time_mask(frames, cfg.time_mask, rng.integers(2**32), VIDEO_FPS)


def audio_augment(waveform: np.ndarray, seed, cfg: TimeMaskConfig = TimeMaskConfig(), train: bool = True) -> np.ndarray:
    if not train:
        return np.asarray(waveform)
    return adaptive_time_mask(waveform, cfg, seed, SAMPLE_RATE)


# --- noise -------------------------------------------------------------------


def power(x: np.ndarray) -> float:
    return float(np.mean(np.square(np.asarray(x, dtype=np.float64))))


def snr_db(signal: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(power(signal) / power(noise))


def noise_segment(noise: np.ndarray, length: int, seed) -> np.ndarray:
    """``length`` samples of ``noise`` from a seeded offset, looping if it is short."""
    noise = np.asarray(noise, dtype=np.float64)
    if noise.size == 0:
        raise ValueError("empty noise")
    offset = int(np.random.default_rng(seed).integers(0, noise.size))
    idx = (offset + np.arange(length)) % noise.size
    return noise[idx]


def mix_at_snr(signal: np.ndarray, noise: np.ndarray, snr: float, seed=0) -> np.ndarray:
    """signal + g * noise_segment with g set so that the SNR is exactly ``snr`` dB."""
    if math.isinf(snr) and snr > 0:
        return signal
    s = np.asarray(signal, dtype=np.float64)
    seg = noise_segment(noise, s.size, seed)
    p_s, p_n = power(s), power(seg)
    if p_s < _SILENT:
        raise ValueError("signal is silent; SNR undefined")
    if p_n < _SILENT:
        raise ValueError("noise is silent; SNR undefined")
    g = math.sqrt(p_s / (p_n * 10.0 ** (snr / 10.0)))
    return s + g * seg


def _pink(length: int, rng: np.random.Generator) -> np.ndarray:
    # shape white noise to a 1/f power spectrum in the frequency domain
    n_fft = 1 << max(1, math.ceil(math.log2(length)))
    spec = np.fft.rfft(rng.standard_normal(n_fft))
    f = np.arange(spec.size, dtype=np.float64)
    f[0] = 1.0
    spec /= np.sqrt(f)
    spec[0] = 0.0
    return np.fft.irfft(spec, n_fft)[:length]


_babble_cache: dict = {}


def _default_babble_corpus() -> Manifest:
    from avbench.synth import SynthCorpusSpec, generate_synthetic_corpus

    key = "default"
    if key not in _babble_cache:
        spec = SynthCorpusSpec(n_samples=24, tokens_per_sample=(8, 15), seed=9001, audio_snr_db=math.inf, source="babble")
        _babble_cache[key] = generate_synthetic_corpus(spec)
    return _babble_cache[key]


def make_noise(kind: str, length: int, seed, corpus: Optional[Manifest] = None) -> np.ndarray:
    """Unit-RMS noise of ``length`` samples.

    babble mixes 6 randomly chosen, randomly offset corpus utterances.
    """
    if length <= 0:
        raise ValueError("length must be positive")
    rng = np.random.default_rng(seed)
    if kind == "white":
        x = rng.standard_normal(length)
    elif kind == "pink":
        x = _pink(length, rng)
    elif kind == "babble":
        corpus = corpus if corpus is not None else _default_babble_corpus()
        if len(corpus) == 0:
            raise ValueError("babble needs a non-empty corpus")
        picks = rng.choice(len(corpus), size=BABBLE_TALKERS, replace=len(corpus) < BABBLE_TALKERS)
        x = np.zeros(length)
        for i in picks:
            talker = corpus[int(i)].load_audio().astype(np.float64)
            x += noise_segment(talker, length, rng.integers(2**32)) / max(math.sqrt(power(talker)), 1e-12)
    else:
        raise ValueError(f"unknown noise kind {kind!r}")
    rms = math.sqrt(power(x))
    return x / rms if rms > 0 else x


def training_noise_policy(waveform: np.ndarray, seed, corpus: Optional[Manifest] = None) -> tuple[np.ndarray, float]:
    """Babble at an SNR drawn uniformly from the 7 training levels. Returns (mix, snr_db)."""
    rng = np.random.default_rng(seed)
    level = TRAIN_SNR_LEVELS_DB[int(rng.integers(len(TRAIN_SNR_LEVELS_DB)))]
    if math.isinf(level):
        return np.asarray(waveform), level
    babble = make_noise("babble", len(waveform), rng.integers(2**32), corpus)
    return mix_at_snr(waveform, babble, level, rng.integers(2**32)), level


def apply_noise(waveform: np.ndarray, spec: NoiseSpec, corpus: Optional[Manifest] = None) -> np.ndarray:
    if math.isinf(spec.snr_db) and spec.snr_db > 0:
        return waveform
    noise = make_noise(spec.kind, len(waveform), spec.seed, corpus)
    return mix_at_snr(waveform, noise, spec.snr_db, spec.seed)
