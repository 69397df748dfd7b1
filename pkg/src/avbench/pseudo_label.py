"""Automatic transcription of unlabelled clips and training-pool assembly.

One pass only: filter by language, transcribe the survivors with a
pre-trained transcriber, take a seeded fraction and append it to the
labelled data.
"""

from __future__ import annotations

import hashlib
import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Protocol, Sequence

import numpy as np

from avbench.data import LabelProvenance, Manifest, SampleRecord, concat, merge_manifests, subset_by_fraction
from avbench.synth import classify_words, signature_bank, word_list

log = logging.getLogger(__name__)


class Transcriber(Protocol):
    id: str

    def transcribe(self, waveform: np.ndarray) -> str: ...


class LanguageFilter(Protocol):
    def classify(self, record: SampleRecord) -> tuple[str, float]: ...


class CorruptionOracle:
    """Stand-in for a pre-trained ASR model of known quality.

    Words are recovered from the synthetic audio by nearest-signature
    matching, then corrupted: each reference word independently becomes a
    substitution, a deletion or gains a following insertion with total
    probability ``target_wer``.
    """

    def __init__(
        self,
        target_wer: float,
        mix: tuple[float, float, float] = (0.70, 0.15, 0.15),
        seed: int = 0,
        languages: Sequence[str] = ("eng",),
        vocab_size_words: int = 60,
    ):
        if not 0.0 <= target_wer <= 1.0:
            raise ValueError("target_wer must lie in [0, 1]")
        if len(mix) != 3 or any(p < 0 for p in mix) or abs(sum(mix) - 1.0) > 1e-9:
            raise ValueError("sub/ins/del mix must be three non-negative fractions summing to 1")
        self.target_wer = target_wer
        self.mix = tuple(float(p) for p in mix)
        self.seed = seed
        self.words, self.bank = signature_bank(tuple(languages), vocab_size_words)
        # substitutions come from the (first) corpus language's vocabulary
        self.vocabulary = list(word_list(languages[0], vocab_size_words))
        self.id = f"oracle:wer={target_wer:g}"

    def corrupt(self, words: Sequence[str], rng: np.random.Generator) -> list[str]:
        p_sub, p_ins, p_del = (self.target_wer * p for p in self.mix)
        out: list[str] = []
        for w in words:
            u = rng.random()
            if u < p_sub:
                choices = [v for v in self.vocabulary if v != w]
                out.append(choices[rng.integers(len(choices))])
            elif u < p_sub + p_del:
                continue
            elif u < p_sub + p_del + p_ins:
                out.append(w)
                out.append(self.vocabulary[rng.integers(len(self.vocabulary))])
            else:
                out.append(w)
        return out

    def _rng(self, waveform: np.ndarray) -> np.random.Generator:
        digest = hashlib.sha256(np.ascontiguousarray(waveform, dtype=np.float32).tobytes()).digest()
        return np.random.default_rng([self.seed, int.from_bytes(digest[:8], "little")])

    def transcribe(self, waveform: np.ndarray) -> str:
        words = classify_words(waveform, self.words, self.bank)
        return " ".join(self.corrupt(words, self._rng(waveform)))


def make_transcriber(name: str, seed: int = 0, languages: Sequence[str] = ("eng",)) -> Transcriber:
    """Build a transcriber from its id, e.g. ``oracle:wer=0.1``."""
    kind, _, args = name.partition(":")
    if kind != "oracle":
        raise ValueError(f"unknown transcriber {name!r}; only 'oracle:wer=<rate>' is bundled")
    params = dict(kv.split("=", 1) for kv in args.split(",") if kv)
    unknown = set(params) - {"wer"}
    if unknown or "wer" not in params:
        raise ValueError(f"bad transcriber spec {name!r}; expected oracle:wer=<rate>")
    return CorruptionOracle(float(params["wer"]), seed=seed, languages=languages)


class OracleLanguageFilter:
    """Reads the generator's language tag; reports a fixed confidence."""

    def __init__(self, confidence: float = 1.0):
        if not 0.0 <= confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        self.confidence = confidence

    def classify(self, record: SampleRecord) -> tuple[str, float]:
        return record.language, self.confidence


def _transcribe(t: Transcriber, record: SampleRecord) -> Optional[str]:
    try:
        return t.transcribe(record.load_audio())
    except Exception as e:  # transcriber failures drop the record
        log.warning("transcriber %s failed on %s: %s", t.id, record.id, e)
        return None


def auto_label(m: Manifest, t: Transcriber, workers: int = 1) -> Manifest:
    """Replace transcripts with ``t``'s output and mark them as automatic.

    Records the transcriber fails on are dropped; output order follows input.
    """
    rate = getattr(t, "target_wer", 0.0)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            texts = list(pool.map(lambda r: _transcribe(t, r), m.records))
    else:
        texts = [_transcribe(t, r) for r in m.records]
    prov = LabelProvenance.auto(t.id, rate)
    out = [r.with_label(text, prov) for r, text in zip(m.records, texts) if text is not None]
    dropped = len(m) - len(out)
    if dropped:
        log.warning("auto_label dropped %d of %d records", dropped, len(m))
    return Manifest(tuple(out), m.name)


def filter_language(m: Manifest, f: LanguageFilter, keep: str, min_conf: float) -> Manifest:
    kept = []
    for r in m:
        lang, conf = f.classify(r)
        if lang == keep and conf >= min_conf:
            kept.append(r)
    return Manifest(tuple(kept), m.name)


@dataclass
class PoolStats:
    hours_by_provenance: dict[str, float] = field(default_factory=dict)
    hours_by_source: dict[str, float] = field(default_factory=dict)
    records_by_provenance: dict[str, int] = field(default_factory=dict)
    total_hours: float = 0.0
    labelled_hours: float = 0.0
    auto_hours: float = 0.0
    filtered_out: int = 0
    dropped: int = 0

    @property
    def provenance_split(self) -> dict[str, float]:
        if not self.total_hours:
            return {k: 0.0 for k in self.hours_by_provenance}
        return {k: v / self.total_hours for k, v in self.hours_by_provenance.items()}

    def to_dict(self) -> dict:
        return {
            "total_hours": self.total_hours,
            "labelled_hours": self.labelled_hours,
            "auto_hours": self.auto_hours,
            "hours_by_provenance": self.hours_by_provenance,
            "provenance_split": self.provenance_split,
            "hours_by_source": self.hours_by_source,
            "records_by_provenance": self.records_by_provenance,
            "filtered_out": self.filtered_out,
            "dropped": self.dropped,
        }


def pool_stats(pool: Manifest) -> PoolStats:
    by_prov: dict[str, Fraction] = defaultdict(Fraction)
    by_src: dict[str, Fraction] = defaultdict(Fraction)
    counts: dict[str, int] = defaultdict(int)
    for r in pool:
        d = Fraction(r.duration_s)
        by_prov[r.provenance.kind] += d
        by_src[r.source] += d
        counts[r.provenance.kind] += 1
    return PoolStats(
        hours_by_provenance={k: float(v / 3600) for k, v in sorted(by_prov.items())},
        hours_by_source={k: float(v / 3600) for k, v in sorted(by_src.items())},
        records_by_provenance=dict(sorted(counts.items())),
        total_hours=pool.total_hours,
        labelled_hours=float(by_prov.get("human", Fraction(0)) / 3600),
        auto_hours=float(by_prov.get("auto", Fraction(0)) / 3600),
    )


def label_unlabelled(
    unlabelled: Sequence[Manifest],
    transcriber: Transcriber,
    lang_filter: LanguageFilter,
    keep: str = "eng",
    min_conf: float = 0.0,
    workers: int = 1,
) -> tuple[Manifest, int, int]:
    """auto_label(filter_language(concat(unlabelled))) -> (manifest, filtered_out, dropped)."""
    raw = concat(unlabelled, "unlabelled")
    filtered = filter_language(raw, lang_filter, keep, min_conf)
    labelled_auto = auto_label(filtered, transcriber, workers)
    return labelled_auto, len(raw) - len(filtered), len(filtered) - len(labelled_auto)


def assemble_pool(labelled: Manifest, auto: Manifest, fraction: float, seed: int) -> Manifest:
    extra = subset_by_fraction(auto, fraction, seed)
    return merge_manifests([labelled, extra], name=f"pool@{fraction:g}")


def build_training_pool(
    labelled: Manifest,
    unlabelled: Sequence[Manifest],
    transcriber: Transcriber,
    lang_filter: LanguageFilter,
    keep: str = "eng",
    min_conf: float = 0.0,
    fraction: float = 1.0,
    seed: int = 0,
    workers: int = 1,
) -> tuple[Manifest, PoolStats]:
    """labelled + subset(auto_label(filter_language(concat(unlabelled))))."""
    auto, filtered_out, dropped = label_unlabelled(unlabelled, transcriber, lang_filter, keep, min_conf, workers)
    pool = assemble_pool(labelled, auto, fraction, seed)
    stats = pool_stats(pool)
    stats.filtered_out = filtered_out
    stats.dropped = dropped
    return pool, stats
