"""Run the desk ablations and write CSV/Markdown/JSON reports.

    python scripts/run_ablations.py --out runs/ablations
    python scripts/run_ablations.py --kinds noise --epochs 5 --config configs/desk.ini
"""

import argparse
import logging
import time
from dataclasses import replace
from pathlib import Path

from avbench.ablate import KINDS, ablate, desk_corpora
from avbench.config import ExperimentConfig, load_config
from avbench.tokenizer import train_vocab


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config")
    p.add_argument("--kinds", nargs="+", default=list(KINDS), choices=KINDS)
    p.add_argument("--epochs", type=int, help="override train.epochs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="runs/ablations")
    args = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    cfg = replace(cfg, train=replace(cfg.train, seed=args.seed, **({"epochs": args.epochs} if args.epochs else {})))
    corpora = desk_corpora(cfg)
    vocab = train_vocab(corpora.labelled, cfg.vocab_size)
    for kind in args.kinds:
        start = time.perf_counter()
        report = ablate(kind, cfg, out_dir=Path(args.out) / kind, corpora=corpora, vocab=vocab)
        print(report.to_markdown())
        print(f"{kind}: {time.perf_counter() - start:.0f}s")


if __name__ == "__main__":
    main()
