"""Training loop, evaluation and checkpoints."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from avbench import augment as aug
from avbench.config import AugmentConfig, ExperimentConfig, TrainConfig, from_dict, to_dict
from avbench.data import Manifest, SampleRecord
from avbench.frontend import VideoStats, compute_video_stats, preprocess_audio, preprocess_video
from avbench.metrics import wer_counts
from avbench.model.decoding import DecodeConfig
from avbench.model.network import AVSRModel, Batch, ModelConfig
from avbench.tokenizer import Vocabulary

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    def __init__(self, message: str, checkpoint: Optional["Checkpoint"] = None):
        super().__init__(message)
        self.checkpoint = checkpoint


def lr_schedule(step: int, total_steps: int, warmup_steps: int, peak: float) -> float:
    """Linear warm-up to ``peak``, then half-cosine decay to 0 at ``total_steps``."""
    if warmup_steps >= total_steps:
        raise ValueError(f"warmup_steps ({warmup_steps}) must be < total_steps ({total_steps})")
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if step < warmup_steps:
        return peak * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return peak * 0.5 * (1.0 + math.cos(math.pi * progress))


def make_batches(manifest: Manifest, max_frames: int) -> list[list[int]]:
    """Greedy packing of records sorted by length (longest first).

    Returns lists of record indices; each batch holds at most ``max_frames``
    video frames in total.
    """
    frames = [r.n_frames for r in manifest]
    for r, n in zip(manifest, frames):
        if n > max_frames:
            raise ValueError(f"record {r.id!r} has {n} frames, more than the batch cap {max_frames}")
    order = sorted(range(len(frames)), key=lambda i: (-frames[i], manifest[i].id))
    batches: list[list[int]] = []
    cur: list[int] = []
    used = 0
    for i in order:
        if cur and used + frames[i] > max_frames:
            batches.append(cur)
            cur, used = [], 0
        cur.append(i)
        used += frames[i]
    if cur:
        batches.append(cur)
    return batches


# --- featurisation -----------------------------------------------------------


@dataclass
class Featurizer:
    """Renders a record into normalised model inputs, with optional augmentation and noise."""

    vocab: Vocabulary
    video_stats: Optional[VideoStats]
    modality: str
    augment: AugmentConfig = AugmentConfig()
    babble_corpus: Optional[Manifest] = None

    def __call__(
        self,
        record: SampleRecord,
        seed=None,
        train: bool = False,
        babble: bool = False,
        noise: Optional[aug.NoiseSpec] = None,
        noise_corpus: Optional[Manifest] = None,
        blank_modality: Optional[str] = None,
    ):
        rng = np.random.default_rng(seed)
        audio = video = None
        if "A" in self.modality:
            wav = record.load_audio().astype(np.float64)
            if train and babble:
                wav, _ = aug.training_noise_policy(wav, rng.integers(2**32), self.babble_corpus)
            if noise is not None:
                wav = aug.apply_noise(wav, noise, noise_corpus)
            wav = preprocess_audio(wav)
            if train:
                wav = aug.audio_augment(wav, rng.integers(2**32), self.augment.audio_time_mask)
            if blank_modality == "A":
                wav = np.zeros_like(wav)
            audio = wav.astype(np.float32)
        if "V" in self.modality:
            frames = record.load_video()
            if train:
                frames = aug.video_augment(frames, rng.integers(2**32), self.augment.video)
            frames = preprocess_video(frames, self.video_stats)
            if blank_modality == "V":
                frames = np.zeros_like(frames)
            video = frames.astype(np.float32)
        ids = self.vocab.encode(record.transcript) if record.transcript else []
        return audio, video, ids


def collate(items, dtype=torch.float32) -> Batch:
    audio = video = a_lens = v_lens = None
    if items[0][0] is not None:
        a_lens = torch.tensor([len(a) for a, _, _ in items])
        audio = torch.zeros((len(items), int(a_lens.max())), dtype=dtype)
        for i, (a, _, _) in enumerate(items):
            audio[i, : len(a)] = torch.from_numpy(a)
    if items[0][1] is not None:
        v_lens = torch.tensor([len(v) for _, v, _ in items])
        _, h, w = items[0][1].shape
        video = torch.zeros((len(items), int(v_lens.max()), h, w), dtype=dtype)
        for i, (_, v, _) in enumerate(items):
            video[i, : len(v)] = torch.from_numpy(v)
    t_lens = torch.tensor([len(ids) for _, _, ids in items])
    targets = torch.full((len(items), max(int(t_lens.max()), 1)), -1, dtype=torch.long)
    for i, (_, _, ids) in enumerate(items):
        targets[i, : len(ids)] = torch.tensor(ids, dtype=torch.long)
    return Batch(audio, a_lens, video, v_lens, targets, t_lens)


# --- checkpoints -------------------------------------------------------------


@dataclass
class Checkpoint:
    model: AVSRModel
    vocab: Vocabulary
    video_stats: Optional[VideoStats]
    config: ExperimentConfig

    def save(self, path: str | os.PathLike) -> None:
        """Named weight arrays plus a JSON config snapshot in one .npz file."""
        arrays = {f"param/{k}": v.detach().cpu().numpy() for k, v in self.model.state_dict().items()}
        meta = {
            "config": to_dict(self.config),
            "model": to_dict(self.model.cfg),
            "vocab": list(self.vocab.pieces),
            "video_stats": None if self.video_stats is None else [self.video_stats.mean, self.video_stats.std],
        }
        arrays["__meta__"] = np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)
        with open(path, "wb") as f:
            np.savez(f, **arrays)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Checkpoint":
        with np.load(path) as z:
            meta = json.loads(z["__meta__"].tobytes().decode())
            state = {k[len("param/") :]: torch.from_numpy(z[k].copy()) for k in z.files if k.startswith("param/")}
        vocab = Vocabulary(tuple(meta["vocab"]))
        model = AVSRModel(from_dict(ModelConfig, meta["model"]), vocab.size)
        model.load_state_dict(state)
        model.eval()
        stats = None if meta["video_stats"] is None else VideoStats(*meta["video_stats"])
        return cls(model, vocab, stats, from_dict(ExperimentConfig, meta["config"]))


# --- reports -----------------------------------------------------------------


@dataclass
class RunReport:
    config: dict
    epoch_losses: list[float] = field(default_factory=list)
    eval: dict = field(default_factory=dict)
    wall_time_s: float = 0.0
    rows: list[dict] = field(default_factory=list)
    title: str = ""

    def to_csv(self) -> str:
        if not self.rows:
            return ""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(self.rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(self.rows)
        return buf.getvalue()

    def to_markdown(self) -> str:
        lines = [f"## {self.title}", ""] if self.title else []
        if self.rows:
            cols = list(self.rows[0])
            lines.append("| " + " | ".join(cols) + " |")
            lines.append("|" + "|".join("---" for _ in cols) + "|")
            for row in self.rows:
                lines.append("| " + " | ".join(_fmt(row[c]) for c in cols) + " |")
        return "\n".join(lines) + "\n"

    def write(self, out_dir: str | os.PathLike, stem: str = "report") -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}.csv").write_text(self.to_csv())
        (out / f"{stem}.md").write_text(self.to_markdown())
        (out / f"{stem}.json").write_text(
            json.dumps(
                {
                    "title": self.title,
                    "config": self.config,
                    "epoch_losses": self.epoch_losses,
                    "eval": self.eval,
                    "wall_time_s": self.wall_time_s,
                    "rows": self.rows,
                },
                indent=2,
            )
        )


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4g}"
    return str(v)


# --- training ----------------------------------------------------------------


def _set_seed(seed: int) -> None:
    torch.manual_seed(seed)
    np.random.seed(seed % 2**32)


def train(
    pool: Manifest,
    vocab: Vocabulary,
    cfg: ExperimentConfig,
    video_stats: Optional[VideoStats] = None,
    babble_corpus: Optional[Manifest] = None,
    checkpoint_path: Optional[str | os.PathLike] = None,
) -> tuple[Checkpoint, RunReport]:
    """AdamW with warm-up + cosine schedule over frame-capped batches."""
    if len(pool) == 0:
        raise ValueError("training pool is empty")
    tc: TrainConfig = cfg.train
    model_cfg = replace(cfg.model, modality=tc.modality)
    cfg = replace(cfg, model=model_cfg)
    start = time.perf_counter()
    _set_seed(tc.seed)
    if "V" in tc.modality and video_stats is None:
        video_stats = compute_video_stats(pool)
    model = AVSRModel(model_cfg, vocab.size)
    featurize = Featurizer(vocab, video_stats, tc.modality, cfg.augment, babble_corpus)
    batches = make_batches(pool, tc.max_frames_per_batch)
    steps_per_epoch = len(batches)
    total = tc.epochs * steps_per_epoch
    warmup = tc.warmup_epochs * steps_per_epoch
    opt = torch.optim.AdamW(model.parameters(), lr=0.0, weight_decay=tc.weight_decay)
    ckpt = Checkpoint(model, vocab, video_stats, cfg)
    report = RunReport(config=to_dict(cfg), title=f"train {tc.modality}")
    step = 0
    for epoch in range(tc.epochs):
        model.train()
        order = np.random.default_rng([tc.seed, epoch]).permutation(steps_per_epoch)
        total_loss, n_loss = 0.0, 0
        for b in order:
            items = [
                featurize(pool[i], seed=[tc.seed, epoch, i], train=tc.augment, babble=tc.babble_noise)
                for i in batches[b]
            ]
            batch = collate(items)
            for group in opt.param_groups:
                group["lr"] = lr_schedule(step, total, warmup, tc.peak_lr)
            terms = model.losses(batch)
            if not torch.isfinite(terms.loss):
                model.eval()
                if checkpoint_path:
                    ckpt.save(checkpoint_path)
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}", ckpt)
            opt.zero_grad()
            terms.loss.backward()
            if tc.grad_clip:
                torch.nn.utils.clip_grad_norm_(model.parameters(), tc.grad_clip)
            opt.step()
            step += 1
            total_loss += float(terms.loss.detach())
            n_loss += 1
        report.epoch_losses.append(total_loss / max(n_loss, 1))
        log.info("epoch %d/%d loss %.4f", epoch + 1, tc.epochs, report.epoch_losses[-1])
    model.eval()
    report.wall_time_s = time.perf_counter() - start
    if checkpoint_path:
        ckpt.save(checkpoint_path)
    return ckpt, report


# --- evaluation --------------------------------------------------------------


@dataclass
class EvalResult:
    wer: float
    errors: int
    ref_words: int
    hypotheses: list[str]


def evaluate(
    ckpt: Checkpoint,
    manifest: Manifest,
    decode_cfg: DecodeConfig,
    noise: Optional[aug.NoiseSpec] = None,
    lm=None,
    noise_corpus: Optional[Manifest] = None,
    blank_modality: Optional[str] = None,
) -> EvalResult:
    """Decode every record (noise mixed per record if given) and score corpus WER."""
    if len(manifest) == 0:
        raise ValueError("cannot evaluate on an empty manifest")
    model = ckpt.model
    model.eval()
    featurize = Featurizer(ckpt.vocab, ckpt.video_stats, model.cfg.modality)
    dtype = next(model.parameters()).dtype
    hyps, refs = [], []
    for k, r in enumerate(manifest):
        rec_noise = None
        if noise is not None:
            rec_noise = replace(noise, seed=int(np.random.default_rng([noise.seed, k]).integers(2**31)))
        item = featurize(r, noise=rec_noise, noise_corpus=noise_corpus, blank_modality=blank_modality)
        batch = collate([item], dtype)
        ids = model.transcribe_ids(batch, decode_cfg, lm)
        hyps.append(ckpt.vocab.decode(ids).strip())
        refs.append(r.transcript)
    counts = wer_counts(refs, hyps)
    return EvalResult(counts.wer, counts.errors, counts.ref_words, hyps)
