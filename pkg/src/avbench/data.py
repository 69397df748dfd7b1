"""Sample records, manifests and their on-disk formats.

A manifest is a JSON-lines file, one record per line. Media may be held
inline (numpy arrays), as paths to binary files (16-bit PCM WAV for audio,
AVF frame containers for video) or as ``synth://`` references that are
re-rendered on demand by :mod:`avbench.synth`.
"""

from __future__ import annotations

import json
import logging
import math
import os
import struct
import wave
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Iterator, Sequence, Union

import numpy as np

log = logging.getLogger(__name__)

SAMPLE_RATE = 16_000
VIDEO_FPS = 25
AVF_MAGIC = b"AVF1"
_AVF_HEADER = struct.Struct("<4sIII")

MediaRef = Union[str, np.ndarray]


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class LabelProvenance:
    kind: str = "human"  # "human" | "auto"
    transcriber_id: str = ""
    corruption_rate: float = 0.0

    def __post_init__(self):
        if self.kind not in ("human", "auto"):
            raise ValueError(f"unknown provenance kind {self.kind!r}")
        if (self.kind == "auto") != bool(self.transcriber_id):
            raise ValueError("transcriber_id must be set iff kind == 'auto'")
        if not 0.0 <= self.corruption_rate <= 1.0:
            raise ValueError("corruption_rate must lie in [0, 1]")

    @classmethod
    def auto(cls, transcriber_id: str, corruption_rate: float = 0.0) -> "LabelProvenance":
        return cls("auto", transcriber_id, corruption_rate)


HUMAN = LabelProvenance()


@dataclass(frozen=True, eq=False)
class SampleRecord:
    """One audio-visual clip with its transcript and label provenance."""

    id: str
    audio: MediaRef
    video: MediaRef
    transcript: str
    language: str
    duration_s: float
    provenance: LabelProvenance = HUMAN
    source: str = ""

    def __post_init__(self):
        if not self.duration_s > 0:
            raise ValueError(f"{self.id}: duration_s must be positive")

    @property
    def n_frames(self) -> int:
        return round(self.duration_s * VIDEO_FPS)

    @property
    def n_samples(self) -> int:
        return round(self.duration_s * SAMPLE_RATE)

    def load_audio(self) -> np.ndarray:
        return load_media(self.audio, "audio")

    def load_video(self) -> np.ndarray:
        return load_media(self.video, "video")

    def with_label(self, transcript: str, provenance: LabelProvenance) -> "SampleRecord":
        return replace(self, transcript=transcript, provenance=provenance)

    def same_as(self, other: "SampleRecord") -> bool:
        """Field-for-field equality, comparing inline media by value."""
        for name in ("id", "transcript", "language", "duration_s", "provenance", "source"):
            if getattr(self, name) != getattr(other, name):
                return False
        return _media_equal(self.audio, other.audio) and _media_equal(self.video, other.video)


def _media_equal(a: MediaRef, b: MediaRef) -> bool:
    if isinstance(a, str) or isinstance(b, str):
        return a == b
    return a.shape == b.shape and np.array_equal(a, b)


@dataclass(frozen=True)
class Manifest:
    records: tuple[SampleRecord, ...] = ()
    name: str = ""
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        records = tuple(self.records)
        object.__setattr__(self, "records", records)
        index = {}
        for i, r in enumerate(records):
            if r.id in index:
                raise ManifestError(f"duplicate record id {r.id!r}")
            index[r.id] = i
        object.__setattr__(self, "_index", index)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[SampleRecord]:
        return iter(self.records)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.records[self._index[key]]
        return self.records[key]

    def __contains__(self, rid: str) -> bool:
        return rid in self._index

    @property
    def ids(self) -> list[str]:
        return [r.id for r in self.records]

    @property
    def exact_seconds(self) -> Fraction:
        # exact rational sum of the float durations, so additivity holds exactly
        return sum((Fraction(r.duration_s) for r in self.records), Fraction(0))

    @property
    def total_hours(self) -> float:
        return float(self.exact_seconds / 3600)

    def same_as(self, other: "Manifest") -> bool:
        """Record-by-record equality; the name is a label and is ignored."""
        return (
            len(self) == len(other)
            and all(a.same_as(b) for a, b in zip(self.records, other.records))
        )


def merge_manifests(parts: Sequence[Manifest], name: str | None = None) -> Manifest:
    if not parts:
        raise ManifestError("merge_manifests needs at least one part")
    seen: set[str] = set()
    records: list[SampleRecord] = []
    for part in parts:
        for r in part:
            if r.id in seen:
                raise ManifestError(f"duplicate record id {r.id!r} across merged parts")
            seen.add(r.id)
            records.append(r)
    return Manifest(tuple(records), name if name is not None else "+".join(p.name for p in parts))


def subset_by_fraction(m: Manifest, fraction: float, seed: int) -> Manifest:
    """Seeded shuffle, then the first ceil(fraction * N) records.

    For a fixed seed the subsets are nested in ``fraction``.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(m)
    # guard against 0.3 * 10 = 3.0000000000000004 style round-up
    k = min(n, math.ceil(round(fraction * n, 9)))
    order = np.random.default_rng(seed).permutation(n)
    return Manifest(tuple(m.records[i] for i in order[:k]), f"{m.name}@{fraction:g}")


# --- media containers -------------------------------------------------------


def write_wav(path: str | os.PathLike, waveform: np.ndarray) -> None:
    pcm = np.clip(np.round(np.asarray(waveform, dtype=np.float64) * 32767.0), -32768, 32767)
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(pcm.astype("<i2").tobytes())


def read_wav(path: str | os.PathLike) -> np.ndarray:
    with wave.open(str(path), "rb") as w:
        if w.getnchannels() != 1 or w.getsampwidth() != 2:
            raise ManifestError(f"{path}: expected mono 16-bit PCM")
        if w.getframerate() != SAMPLE_RATE:
            raise ManifestError(f"{path}: expected {SAMPLE_RATE} Hz, got {w.getframerate()}")
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float32) / 32767.0


def write_avf(path: str | os.PathLike, frames: np.ndarray) -> None:
    frames = np.asarray(frames, dtype="<f4")
    if frames.ndim != 3:
        raise ValueError("frames must be T x H x W")
    t, h, w = frames.shape
    with open(path, "wb") as f:
        f.write(_AVF_HEADER.pack(AVF_MAGIC, t, h, w))
        f.write(frames.tobytes())


def read_avf(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as f:
        header = f.read(_AVF_HEADER.size)
        if len(header) != _AVF_HEADER.size:
            raise ManifestError(f"{path}: truncated AVF header")
        magic, t, h, w = _AVF_HEADER.unpack(header)
        if magic != AVF_MAGIC:
            raise ManifestError(f"{path}: bad magic {magic!r}")
        data = np.frombuffer(f.read(), dtype="<f4")
    if data.size != t * h * w:
        raise ManifestError(f"{path}: expected {t * h * w} values, found {data.size}")
    return data.reshape(t, h, w).astype(np.float32)


def load_media(ref: MediaRef, kind: str) -> np.ndarray:
    if isinstance(ref, np.ndarray):
        return ref
    if ref.startswith("synth://"):
        from avbench.synth import render_ref

        return render_ref(ref)
    if kind == "audio":
        return read_wav(ref)
    return read_avf(ref)


# --- JSON-lines manifests ---------------------------------------------------

_REQUIRED = ("id", "audio", "video", "transcript", "language", "duration_s", "provenance", "source")


def _media_field(ref: MediaRef, kind: str, rid: str, media_dir: Path, base: Path, materialize: bool) -> str:
    if isinstance(ref, str) and not (materialize and ref.startswith("synth://")):
        return ref
    array = load_media(ref, kind)
    media_dir.mkdir(parents=True, exist_ok=True)
    target = media_dir / (f"{rid}.wav" if kind == "audio" else f"{rid}.avf")
    (write_wav if kind == "audio" else write_avf)(target, array)
    return os.path.relpath(target, base)


def record_to_dict(r: SampleRecord) -> dict:
    return {
        "id": r.id,
        "audio": r.audio,
        "video": r.video,
        "transcript": r.transcript,
        "language": r.language,
        "duration_s": r.duration_s,
        "provenance": {
            "kind": r.provenance.kind,
            "transcriber_id": r.provenance.transcriber_id,
            "corruption_rate": r.provenance.corruption_rate,
        },
        "source": r.source,
    }


def save_manifest(m: Manifest, path: str | os.PathLike, materialize: bool = False) -> None:
    """Write ``m`` as JSON lines.

    Inline arrays are always written out as media files next to the manifest;
    ``synth://`` references are kept unless ``materialize`` is set.
    """
    path = Path(path)
    base = path.parent
    media_dir = base / f"{path.stem}_media"
    base.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for r in m:
            d = record_to_dict(r)
            d["audio"] = _media_field(r.audio, "audio", r.id, media_dir, base, materialize)
            d["video"] = _media_field(r.video, "video", r.id, media_dir, base, materialize)
            f.write(json.dumps(d, ensure_ascii=False) + "\n")


def _resolve(ref: str, base: Path) -> str:
    if ref.startswith("synth://") or os.path.isabs(ref):
        return ref
    return str(base / ref)


def record_from_dict(d: dict, base: Path | None = None) -> SampleRecord:
    missing = [k for k in _REQUIRED if k not in d]
    if missing:
        raise KeyError(f"missing field(s) {', '.join(missing)}")
    prov = d["provenance"]
    audio, video = d["audio"], d["video"]
    if base is not None:
        audio, video = _resolve(audio, base), _resolve(video, base)
    return SampleRecord(
        id=str(d["id"]),
        audio=audio,
        video=video,
        transcript=str(d["transcript"]),
        language=str(d["language"]),
        duration_s=float(d["duration_s"]),
        provenance=LabelProvenance(
            prov.get("kind", "human"), prov.get("transcriber_id", ""), float(prov.get("corruption_rate", 0.0))
        ),
        source=str(d["source"]),
    )


def load_manifest(path: str | os.PathLike, name: str | None = None) -> Manifest:
    path = Path(path)
    records = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                records.append(record_from_dict(json.loads(line), path.parent))
            except (ValueError, KeyError, TypeError, AttributeError) as e:
                raise ManifestError(f"{path}:{lineno}: {e}") from e
    try:
        return Manifest(tuple(records), name if name is not None else path.stem)
    except ManifestError as e:
        raise ManifestError(f"{path}: {e}") from e


def concat(parts: Iterable[Manifest], name: str = "") -> Manifest:
    parts = list(parts)
    return merge_manifests(parts, name) if parts else Manifest((), name)
