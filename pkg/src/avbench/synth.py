"""Synthetic audio-visual corpus.

Every word has a fixed 0.2 s audio signature (three Hann-windowed linear
chirps) and a fixed 5-frame visual pattern, both derived from a hash of the
word alone so that independently generated corpora share one "voice" and one
"face". A record is the concatenation of its words' signatures plus
per-record Gaussian noise (audio) and blanked frames (video).

Records are not stored: their media are ``synth://`` references rendered on
demand from ``(spec, index)``.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from urllib.parse import parse_qs, quote, urlsplit

import numpy as np

from avbench.data import HUMAN, SAMPLE_RATE, VIDEO_FPS, Manifest, SampleRecord

WORD_SECONDS = 0.2
WORD_SAMPLES = round(WORD_SECONDS * SAMPLE_RATE)  # 3200
WORD_FRAMES = round(WORD_SECONDS * VIDEO_FPS)  # 5

_CONSONANTS = "bdfgklmnprstvz"
_VOWELS = "aeiou"


def _hash_rng(*parts) -> np.random.Generator:
    digest = hashlib.sha256(":".join(map(str, parts)).encode()).digest()
    return np.random.default_rng(int.from_bytes(digest[:8], "little"))


@dataclass(frozen=True)
class SynthCorpusSpec:
    n_samples: int = 100
    tokens_per_sample: tuple[int, int] = (3, 8)
    vocab_size_words: int = 60
    seed: int = 0
    audio_snr_db: float = 20.0
    video_corruption: float = 0.1
    language_mix: dict = field(default_factory=lambda: {"eng": 1.0})
    video_size: int = 32
    source: str = "synth"

    def __post_init__(self):
        object.__setattr__(self, "tokens_per_sample", tuple(int(x) for x in self.tokens_per_sample))
        object.__setattr__(self, "language_mix", {str(k): float(v) for k, v in self.language_mix.items()})

    def validate(self) -> "SynthCorpusSpec":
        lo, hi = self.tokens_per_sample
        if self.n_samples < 0:
            raise ValueError("n_samples must be >= 0")
        if not 1 <= lo <= hi:
            raise ValueError(f"tokens_per_sample must satisfy 1 <= lo <= hi, got {self.tokens_per_sample}")
        if self.vocab_size_words < 1:
            raise ValueError("vocab_size_words must be >= 1")
        if not 0.0 <= self.video_corruption <= 1.0:
            raise ValueError("video_corruption must lie in [0, 1]")
        mix = self.language_mix
        if not mix or any(not 0.0 <= v <= 1.0 for v in mix.values()):
            raise ValueError("language_mix fractions must lie in [0, 1]")
        if abs(sum(mix.values()) - 1.0) > 1e-9:
            raise ValueError(f"language_mix must sum to 1, got {sum(mix.values())}")
        if self.video_size < 8:
            raise ValueError("video_size must be >= 8")
        return self

    def to_json(self) -> str:
        d = asdict(self)
        d["tokens_per_sample"] = list(self.tokens_per_sample)
        return json.dumps(d, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, s: str) -> "SynthCorpusSpec":
        return cls(**json.loads(s))


# --- per-word assets ---------------------------------------------------------


@lru_cache(maxsize=None)
def word_list(language: str, size: int) -> tuple[str, ...]:
    """Deterministic pseudo-words for ``language``."""
    rng = _hash_rng("words", language)
    words: list[str] = []
    seen = set()
    while len(words) < size:
        n_syl = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return tuple(words)


@lru_cache(maxsize=4096)
def word_signature(word: str) -> np.ndarray:
    """0.2 s multi-tone chirp, peak amplitude 0.5."""
    rng = _hash_rng("audio", word)
    t = np.arange(WORD_SAMPLES) / SAMPLE_RATE
    sig = np.zeros(WORD_SAMPLES)
    for _ in range(3):
        f0, f1 = rng.uniform(200.0, 3800.0, size=2)
        amp = rng.uniform(0.5, 1.0)
        phase = 2 * np.pi * (f0 * t + 0.5 * (f1 - f0) / WORD_SECONDS * t**2) + rng.uniform(0, 2 * np.pi)
        sig += amp * np.sin(phase)
    sig *= np.hanning(WORD_SAMPLES)
    sig *= 0.5 / np.abs(sig).max()
    sig.setflags(write=False)
    return sig


@lru_cache(maxsize=4096)
def word_pattern(word: str, size: int = 32) -> np.ndarray:
    """WORD_FRAMES x size x size frames in [0, 1]; resolution independent."""
    rng = _hash_rng("video", word)
    yy, xx = np.meshgrid(np.linspace(-1, 1, size), np.linspace(-1, 1, size), indexing="ij")
    frames = np.zeros((WORD_FRAMES, size, size))
    # an opening/closing ellipse plus two drifting gratings
    openness = rng.uniform(0.15, 0.9, size=WORD_FRAMES)
    width = rng.uniform(0.3, 0.8)
    gratings = [(rng.uniform(0, np.pi), rng.uniform(1.5, 4.0), rng.uniform(-1, 1), rng.uniform(0, 2 * np.pi)) for _ in range(2)]
    for k in range(WORD_FRAMES):
        ellipse = ((xx / width) ** 2 + (yy / openness[k]) ** 2) < 1.0
        g = sum(
            np.cos(np.pi * freq * (xx * np.cos(theta) + yy * np.sin(theta)) + phase + drift * k)
            for theta, freq, drift, phase in gratings
        )
        frames[k] = 0.5 + 0.25 * np.tanh(g) - 0.35 * ellipse
    frames = np.clip(frames, 0.0, 1.0).astype(np.float32)
    frames.setflags(write=False)
    return frames


# --- corpus ------------------------------------------------------------------


def _record_rng(spec: SynthCorpusSpec, index: int, stream: str) -> np.random.Generator:
    streams = {"words": 0, "audio": 1, "video": 2}
    return np.random.default_rng([spec.seed, index, streams[stream]])


def record_words(spec: SynthCorpusSpec, index: int) -> tuple[str, list[str]]:
    """(language, ground-truth words) of record ``index``."""
    rng = _record_rng(spec, index, "words")
    langs = sorted(spec.language_mix)
    probs = np.array([spec.language_mix[k] for k in langs])
    lang = langs[min(int(np.searchsorted(np.cumsum(probs), rng.random(), side="right")), len(langs) - 1)]
    lo, hi = spec.tokens_per_sample
    n = int(rng.integers(lo, hi + 1))
    vocab = word_list(lang, spec.vocab_size_words)
    return lang, [vocab[i] for i in rng.integers(len(vocab), size=n)]


def render_audio(spec: SynthCorpusSpec, index: int) -> np.ndarray:
    _, words = record_words(spec, index)
    clean = np.concatenate([word_signature(w) for w in words])
    rng = _record_rng(spec, index, "audio")
    p_signal = np.mean(clean**2)
    if np.isfinite(spec.audio_snr_db):
        sigma = np.sqrt(p_signal / 10 ** (spec.audio_snr_db / 10))
        clean = clean + sigma * rng.standard_normal(clean.size)
    return np.clip(clean, -1.0, 1.0).astype(np.float32)


def render_video(spec: SynthCorpusSpec, index: int) -> np.ndarray:
    _, words = record_words(spec, index)
    frames = np.concatenate([word_pattern(w, spec.video_size) for w in words])
    n_blank = round(spec.video_corruption * len(frames))
    if n_blank:
        rng = _record_rng(spec, index, "video")
        frames[rng.choice(len(frames), size=n_blank, replace=False)] = 0.0
    return frames


def synth_ref(spec: SynthCorpusSpec, index: int, kind: str) -> str:
    return f"synth://{kind}/{index}?spec={quote(spec.to_json(), safe='')}"


@lru_cache(maxsize=64)
def _spec_from_json(s: str) -> SynthCorpusSpec:
    return SynthCorpusSpec.from_json(s)


def render_ref(ref: str) -> np.ndarray:
    parts = urlsplit(ref)
    spec = _spec_from_json(parse_qs(parts.query)["spec"][0])
    index = int(parts.path.strip("/"))
    if parts.netloc == "audio":
        return render_audio(spec, index)
    if parts.netloc == "video":
        return render_video(spec, index)
    raise ValueError(f"bad synth reference {ref[:40]!r}")


def make_record(spec: SynthCorpusSpec, index: int) -> SampleRecord:
    lang, words = record_words(spec, index)
    return SampleRecord(
        id=f"{spec.source}-s{spec.seed}-{index:06d}",
        audio=synth_ref(spec, index, "audio"),
        video=synth_ref(spec, index, "video"),
        transcript=" ".join(words),
        language=lang,
        duration_s=round(len(words) * WORD_SECONDS, 10),
        provenance=HUMAN,
        source=spec.source,
    )


def generate_synthetic_corpus(spec: SynthCorpusSpec, name: str | None = None) -> Manifest:
    spec.validate()
    return Manifest(
        tuple(make_record(spec, i) for i in range(spec.n_samples)),
        name if name is not None else f"{spec.source}-s{spec.seed}",
    )


def signature_bank(languages=("eng",), vocab_size_words: int = 60) -> tuple[list[str], np.ndarray]:
    words = [w for lang in languages for w in word_list(lang, vocab_size_words)]
    bank = np.stack([word_signature(w) for w in words])
    return words, bank


def classify_words(waveform: np.ndarray, words: list[str], bank: np.ndarray) -> list[str]:
    """Nearest-signature decoding of consecutive 0.2 s chunks."""
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.size == 0 or waveform.size % WORD_SAMPLES:
        raise ValueError(f"waveform length {waveform.size} is not a positive multiple of {WORD_SAMPLES}")
    chunks = waveform.reshape(-1, WORD_SAMPLES)
    norms = np.linalg.norm(bank, axis=1)
    scores = chunks @ bank.T / norms
    return [words[i] for i in scores.argmax(axis=1)]
