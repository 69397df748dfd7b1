"""Desk-scale ablation presets.

``scaling``      trains V models on the labelled set plus a growing share of
                 auto-labelled data.
``transcriber``  trains models of the configured modality on pools
                 labelled by oracles of different quality.
``noise``        trains A and AV models with babble augmentation and scores
                 them across an SNR grid.

Each preset returns a :class:`RunReport` whose rows form the result table.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

from avbench.augment import NoiseSpec
from avbench.config import ExperimentConfig, to_dict
from avbench.data import Manifest
from avbench.metrics import wer_counts
from avbench.pseudo_label import OracleLanguageFilter, assemble_pool, label_unlabelled, make_transcriber
from avbench.synth import generate_synthetic_corpus
from avbench.tokenizer import Vocabulary, train_vocab
from avbench.train import Checkpoint, RunReport, evaluate, train

log = logging.getLogger(__name__)

KINDS = ("scaling", "transcriber", "noise")


@dataclass
class Corpora:
    labelled: Manifest
    unlabelled: Manifest
    test: Manifest


def desk_corpora(cfg: ExperimentConfig) -> Corpora:
    c = cfg.corpus
    return Corpora(
        generate_synthetic_corpus(c.labelled, "labelled"),
        generate_synthetic_corpus(c.unlabelled, "unlabelled"),
        generate_synthetic_corpus(c.test, "test"),
    )


def auto_labelled(cfg: ExperimentConfig, corpora: Corpora, transcriber: Optional[str] = None) -> Manifest:
    p = cfg.pseudo
    t = make_transcriber(transcriber or p.transcriber, seed=p.seed, languages=(p.keep_lang,))
    auto, _, _ = label_unlabelled([corpora.unlabelled], t, OracleLanguageFilter(), p.keep_lang, p.min_conf)
    return auto


def _train_eval(pool: Manifest, vocab: Vocabulary, cfg: ExperimentConfig, test: Manifest, ckpt_path=None):
    ckpt, report = train(pool, vocab, cfg, checkpoint_path=ckpt_path)
    result = evaluate(ckpt, test, cfg.decode)
    return ckpt, report, result


def _ckpt_path(out_dir, name):
    if out_dir is None:
        return None
    Path(out_dir).mkdir(parents=True, exist_ok=True)
    return Path(out_dir) / f"{name}.npz"


def scaling(cfg: ExperimentConfig, corpora: Optional[Corpora] = None, vocab=None, out_dir=None) -> RunReport:
    corpora = corpora or desk_corpora(cfg)
    vocab = vocab or train_vocab(corpora.labelled, cfg.vocab_size)
    auto = auto_labelled(cfg, corpora)
    start = time.perf_counter()
    report = RunReport(config=to_dict(cfg), title=f"scaling ({cfg.train.modality})")
    for fraction in cfg.scaling_fractions:
        pool = assemble_pool(corpora.labelled, auto, fraction, cfg.pseudo.seed)
        _, run, result = _train_eval(pool, vocab, cfg, corpora.test, _ckpt_path(out_dir, f"scaling-{fraction:g}"))
        log.info("scaling fraction %g: %.3f h, WER %.4f", fraction, pool.total_hours, result.wer)
        report.rows.append(
            {
                "fraction": fraction,
                "auto_hours": round(pool.total_hours - corpora.labelled.total_hours, 6),
                "total_hours": round(pool.total_hours, 6),
                "final_loss": run.epoch_losses[-1],
                "wer": result.wer,
            }
        )
        report.epoch_losses.append(run.epoch_losses[-1])
    report.eval = {f"wer@{r['fraction']:g}": r["wer"] for r in report.rows}
    report.wall_time_s = time.perf_counter() - start
    return report


def transcriber(cfg: ExperimentConfig, corpora: Optional[Corpora] = None, vocab=None, out_dir=None) -> RunReport:
    corpora = corpora or desk_corpora(cfg)
    vocab = vocab or train_vocab(corpora.labelled, cfg.vocab_size)
    truth = {r.id: r.transcript for r in corpora.unlabelled}
    start = time.perf_counter()
    report = RunReport(config=to_dict(cfg), title=f"transcriber quality ({cfg.train.modality})")
    for rate in cfg.transcriber_wers:
        name = f"oracle:wer={rate:g}"
        auto = auto_labelled(cfg, corpora, name)
        label_wer = wer_counts([truth[r.id] for r in auto], [r.transcript for r in auto]).wer if len(auto) else 0.0
        pool = assemble_pool(corpora.labelled, auto, cfg.transcriber_fraction, cfg.pseudo.seed)
        _, run, result = _train_eval(pool, vocab, cfg, corpora.test, _ckpt_path(out_dir, f"transcriber-{rate:g}"))
        log.info("transcriber %s: label WER %.4f, WER %.4f", name, label_wer, result.wer)
        report.rows.append(
            {
                "transcriber": name,
                "corruption": rate,
                "label_wer": label_wer,
                "total_hours": round(pool.total_hours, 6),
                "final_loss": run.epoch_losses[-1],
                "wer": result.wer,
            }
        )
        report.epoch_losses.append(run.epoch_losses[-1])
    report.eval = {f"wer@{r['corruption']:g}": r["wer"] for r in report.rows}
    report.wall_time_s = time.perf_counter() - start
    return report


def noise(
    cfg: ExperimentConfig,
    corpora: Optional[Corpora] = None,
    vocab=None,
    out_dir=None,
    checkpoints: Optional[dict[str, Checkpoint]] = None,
) -> RunReport:
    """Babble-trained A and AV models scored on ``cfg.noise_kinds`` over ``cfg.snr_grid``.

    Pass ``checkpoints={"A": ..., "AV": ...}`` to skip training.
    """
    corpora = corpora or desk_corpora(cfg)
    start = time.perf_counter()
    ckpts = dict(checkpoints or {})
    for modality in ("A", "AV"):
        if modality in ckpts:
            continue
        vocab = vocab or train_vocab(corpora.labelled, cfg.vocab_size)
        run_cfg = replace(cfg, train=replace(cfg.train, modality=modality, babble_noise=True))
        ckpts[modality], _ = train(
            corpora.labelled,
            vocab,
            run_cfg,
            babble_corpus=corpora.labelled,
            checkpoint_path=_ckpt_path(out_dir, f"noise-{modality}"),
        )
    report = RunReport(config=to_dict(cfg), title="noise robustness (A vs AV)")
    clean = {m: evaluate(c, corpora.test, cfg.decode).wer for m, c in ckpts.items()}
    report.rows.append({"noise": "clean", "snr_db": math.inf, "wer_A": clean["A"], "wer_AV": clean["AV"]})
    for kind in cfg.noise_kinds:
        for snr in cfg.snr_grid:
            spec = NoiseSpec(kind, snr, seed=cfg.train.seed)
            row = {"noise": kind, "snr_db": snr}
            for m, c in ckpts.items():
                row[f"wer_{m}"] = evaluate(c, corpora.test, cfg.decode, noise=spec).wer
            log.info("noise %s %g dB: A %.4f AV %.4f", kind, snr, row["wer_A"], row["wer_AV"])
            report.rows.append(row)
    report.eval = {f"{r['noise']}@{r['snr_db']:g}": {"A": r["wer_A"], "AV": r["wer_AV"]} for r in report.rows}
    report.wall_time_s = time.perf_counter() - start
    return report


def ablate(kind: str, cfg: ExperimentConfig, out_dir=None, **kwargs) -> RunReport:
    presets = {"scaling": scaling, "transcriber": transcriber, "noise": noise}
    if kind not in presets:
        raise ValueError(f"unknown ablation {kind!r}; choose from {KINDS}")
    report = presets[kind](cfg, out_dir=out_dir, **kwargs)
    if out_dir is not None:
        report.write(out_dir, f"ablate-{kind}")
    return report
