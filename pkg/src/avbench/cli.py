"""Command-line entry point: ``avbench <verb> [options]``.

Every verb takes ``--seed``; any failure exits with status 1.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

log = logging.getLogger("avbench")


def _config(args):
    from avbench.config import ExperimentConfig, load_config

    return load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()


def _with_seed(cfg, seed: int):
    return replace(cfg, train=replace(cfg.train, seed=seed))


def cmd_prepare(args) -> int:
    from avbench.data import save_manifest
    from avbench.synth import generate_synthetic_corpus

    cfg = _config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}
    for split in ("labelled", "unlabelled", "test"):
        spec = getattr(cfg.corpus, split)
        spec = replace(spec, seed=spec.seed + args.seed)
        m = generate_synthetic_corpus(spec, split)
        save_manifest(m, out / f"{split}.jsonl", materialize=args.materialize)
        summary[split] = {"records": len(m), "hours": m.total_hours}
    print(json.dumps(summary, indent=2))
    return 0


def cmd_train_vocab(args) -> int:
    from avbench.data import concat, load_manifest
    from avbench.tokenizer import train_vocab

    corpus = concat([load_manifest(p) for p in args.manifest], "vocab")
    vocab = train_vocab(corpus, args.size)
    vocab.save(args.out)
    print(json.dumps({"size": vocab.size, "out": str(args.out)}))
    return 0


def cmd_pseudo_label(args) -> int:
    from avbench.data import Manifest, load_manifest, save_manifest
    from avbench.pseudo_label import OracleLanguageFilter, build_training_pool, make_transcriber

    labelled = load_manifest(args.labelled) if args.labelled else Manifest((), "labelled")
    unlabelled = [load_manifest(p) for p in args.inputs]
    transcriber = make_transcriber(args.transcriber, seed=args.seed, languages=(args.keep_lang,))
    pool, stats = build_training_pool(
        labelled,
        unlabelled,
        transcriber,
        OracleLanguageFilter(),
        keep=args.keep_lang,
        min_conf=args.min_conf,
        fraction=args.fraction,
        seed=args.seed,
        workers=args.workers,
    )
    save_manifest(pool, args.out)
    print(json.dumps(stats.to_dict(), indent=2))
    return 0


def cmd_train(args) -> int:
    from avbench.data import load_manifest
    from avbench.tokenizer import Vocabulary
    from avbench.train import train

    cfg = _with_seed(_config(args), args.seed)
    overrides = {k: v for k, v in {"modality": args.modality, "epochs": args.epochs}.items() if v is not None}
    if args.babble:
        overrides["babble_noise"] = True
    cfg = replace(cfg, train=replace(cfg.train, **overrides))
    pool = load_manifest(args.pool)
    vocab = Vocabulary.load(args.vocab)
    _, report = train(pool, vocab, cfg, babble_corpus=pool if args.babble else None, checkpoint_path=args.out)
    report.rows = [{"epoch": i + 1, "loss": loss} for i, loss in enumerate(report.epoch_losses)]
    if args.report_dir:
        report.write(args.report_dir, "train")
    print(json.dumps({"checkpoint": str(args.out), "epoch_losses": report.epoch_losses, "wall_time_s": report.wall_time_s}))
    return 0


def cmd_evaluate(args) -> int:
    from avbench.augment import EVAL_SNR_GRID_DB, NoiseSpec
    from avbench.data import load_manifest
    from avbench.model.decoding import DecodeConfig
    from avbench.model.lm import CharBigramLM
    from avbench.train import Checkpoint, RunReport, evaluate

    ckpt = Checkpoint.load(args.checkpoint)
    manifest = load_manifest(args.manifest)
    decode = DecodeConfig(
        beam=args.beam, ctc_weight=args.ctc_weight, lm_weight=args.lm_weight, length_penalty=args.length_penalty
    )
    lm = None
    if args.lm_corpus:
        lm = CharBigramLM([r.transcript for r in load_manifest(args.lm_corpus)], ckpt.vocab)
    if args.snr_grid:
        levels = [math.inf, *EVAL_SNR_GRID_DB]
    elif args.snr is not None:
        levels = [args.snr]
    else:
        levels = [math.inf]
    rows = []
    for snr in levels:
        noise = None if math.isinf(snr) else NoiseSpec(args.noise, snr, args.seed)
        result = evaluate(ckpt, manifest, decode, noise=noise, lm=lm, blank_modality=args.blank)
        rows.append({"noise": "clean" if noise is None else args.noise, "snr_db": snr, "wer": result.wer,
                     "errors": result.errors, "ref_words": result.ref_words})
    report = RunReport(config={"checkpoint": str(args.checkpoint), "decode": vars(decode)}, rows=rows, title="evaluate")
    report.eval = {f"{r['noise']}@{r['snr_db']:g}": r["wer"] for r in rows}
    if args.report_dir:
        report.write(args.report_dir, "evaluate")
    print(report.to_markdown(), end="")
    return 0


def cmd_ablate(args) -> int:
    from avbench.ablate import ablate

    cfg = _with_seed(_config(args), args.seed)
    if args.epochs is not None:
        cfg = replace(cfg, train=replace(cfg.train, epochs=args.epochs))
    report = ablate(args.kind, cfg, out_dir=args.out)
    print(report.to_markdown(), end="")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="avbench", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, fn, help):
        s = sub.add_parser(name, help=help)
        s.add_argument("--seed", type=int, default=0, help="RNG seed (prepare: offset added to the corpus seeds)")
        s.set_defaults(fn=fn)
        return s

    s = verb("prepare", cmd_prepare, "generate the synthetic labelled, unlabelled and test manifests")
    s.add_argument("--config")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--materialize", action="store_true", help="write WAV/AVF files instead of synth:// references")

    s = verb("train-vocab", cmd_train_vocab, "learn a subword vocabulary from manifest transcripts")
    s.add_argument("--manifest", nargs="+", required=True)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--out", required=True)

    s = verb("pseudo-label", cmd_pseudo_label, "filter, auto-transcribe and pool unlabelled data")
    s.add_argument("--in", dest="inputs", nargs="+", required=True)
    s.add_argument("--labelled", help="human-labelled manifest to prepend to the pool")
    s.add_argument("--out", required=True)
    s.add_argument("--transcriber", default="oracle:wer=0.1")
    s.add_argument("--keep-lang", default="eng")
    s.add_argument("--min-conf", type=float, default=0.0)
    s.add_argument("--fraction", type=float, default=1.0)
    s.add_argument("--workers", type=int, default=1)

    s = verb("train", cmd_train, "train a recogniser and write an .npz checkpoint")
    s.add_argument("--pool", required=True)
    s.add_argument("--vocab", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--config")
    s.add_argument("--modality", choices=("A", "V", "AV"))
    s.add_argument("--epochs", type=int)
    s.add_argument("--babble", action="store_true", help="babble noise augmentation from the pool itself")
    s.add_argument("--report-dir")

    s = verb("evaluate", cmd_evaluate, "decode a manifest and report WER")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--beam", type=int, default=10)
    s.add_argument("--ctc-weight", type=float, default=0.1)
    s.add_argument("--lm-weight", type=float, default=0.0)
    s.add_argument("--length-penalty", type=float, default=0.0)
    s.add_argument("--lm-corpus", help="manifest whose transcripts train the bundled bigram LM")
    s.add_argument("--noise", default="white", choices=("white", "pink", "babble"))
    s.add_argument("--snr", type=float)
    s.add_argument("--snr-grid", action="store_true", help="clean plus the standard SNR grid")
    s.add_argument("--blank", choices=("A", "V"), help="zero out one modality")
    s.add_argument("--report-dir")

    s = verb("ablate", cmd_ablate, "run an ablation preset")
    s.add_argument("kind", choices=("scaling", "transcriber", "noise"))
    s.add_argument("--config")
    s.add_argument("--epochs", type=int)
    s.add_argument("--out", required=True)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except Exception as e:  # report, never traceback, at the CLI boundary
        print(f"avbench {args.verb}: error: {e}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
