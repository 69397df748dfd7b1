import json
import pytest

from avbench.cli import main
from avbench.config import CorpusConfig, ExperimentConfig, TrainConfig, model_config, save_config
from avbench.data import load_manifest
from avbench.synth import SynthCorpusSpec
from avbench.train import Checkpoint


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    cfg = ExperimentConfig(
        corpus=CorpusConfig(
            labelled=SynthCorpusSpec(n_samples=16, tokens_per_sample=(2, 4), seed=1, source="lrs"),
            unlabelled=SynthCorpusSpec(
                n_samples=16, tokens_per_sample=(2, 4), seed=2, language_mix={"eng": 0.5, "spa": 0.5}, source="avspeech"
            ),
            test=SynthCorpusSpec(n_samples=3, tokens_per_sample=(2, 4), seed=3, source="test"),
        ),
        vocab_size=64,
        model=model_config("A", dim=16, layers=1, heads=2, ffn=32, audio_channels=(8, 8), audio_res_blocks=1,
                           video_stem_channels=4, video_stage_channels=(8, 8)),
        train=TrainConfig(epochs=2, warmup_epochs=1, modality="A"),
    )
    save_config(cfg, d / "tiny.ini")
    return d


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_pipeline(workdir, capsys):
    d = workdir
    code, out, _ = _run(capsys, "prepare", "--config", d / "tiny.ini", "--out", d / "data", "--materialize", "--seed", 0)
    assert code == 0 and json.loads(out)["labelled"]["records"] == 16
    assert any((d / "data").rglob("*.wav")) and any((d / "data").rglob("*.avf"))

    code, _, _ = _run(capsys, "train-vocab", "--manifest", d / "data/labelled.jsonl", d / "data/unlabelled.jsonl",
                      "--size", 64, "--out", d / "vocab.txt", "--seed", 0)
    assert code == 0

    code, out, _ = _run(capsys, "pseudo-label", "--in", d / "data/unlabelled.jsonl", "--labelled", d / "data/labelled.jsonl",
                        "--out", d / "pool.jsonl", "--transcriber", "oracle:wer=0.1", "--seed", 3)
    stats = json.loads(out)
    assert code == 0 and stats["filtered_out"] > 0
    pool = load_manifest(d / "pool.jsonl")
    assert stats["total_hours"] == pytest.approx(pool.total_hours)
    assert {r.provenance.kind for r in pool} == {"human", "auto"}

    code, out, _ = _run(capsys, "train", "--pool", d / "pool.jsonl", "--vocab", d / "vocab.txt", "--out", d / "m.npz",
                        "--config", d / "tiny.ini", "--report-dir", d / "rep", "--seed", 1)
    assert code == 0 and len(json.loads(out)["epoch_losses"]) == 2
    assert Checkpoint.load(d / "m.npz").config.train.seed == 1
    assert (d / "rep/train.csv").read_text().startswith("epoch,loss")

    code, out, _ = _run(capsys, "evaluate", "--checkpoint", d / "m.npz", "--manifest", d / "data/test.jsonl",
                        "--beam", 2, "--snr-grid", "--lm-corpus", d / "data/labelled.jsonl", "--report-dir", d / "rep",
                        "--seed", 0)
    assert code == 0
    rows = (d / "rep/evaluate.csv").read_text().splitlines()
    assert rows[0] == "noise,snr_db,wer,errors,ref_words" and len(rows) == 7
    assert "| clean | inf |" in out


def test_prepare_seed_offsets_corpus(workdir, capsys):
    d = workdir
    _run(capsys, "prepare", "--config", d / "tiny.ini", "--out", d / "s0", "--seed", 0)
    _run(capsys, "prepare", "--config", d / "tiny.ini", "--out", d / "s1", "--seed", 1)
    a, b = load_manifest(d / "s0/test.jsonl"), load_manifest(d / "s1/test.jsonl")
    assert [r.transcript for r in a] != [r.transcript for r in b]


def test_errors_exit_nonzero(workdir, capsys):
    code, _, err = _run(capsys, "evaluate", "--checkpoint", workdir / "missing.npz", "--manifest", "x.jsonl")
    assert code == 1 and err.startswith("avbench evaluate: error:")
    code, _, err = _run(capsys, "pseudo-label", "--in", workdir / "data/unlabelled.jsonl", "--out", workdir / "p.jsonl",
                        "--transcriber", "whisper")
    assert code == 1 and "unknown transcriber" in err


def test_every_verb_takes_seed():
    from avbench.cli import build_parser

    sub = next(a for a in build_parser()._actions if a.dest == "verb")
    assert set(sub.choices) == {"prepare", "train-vocab", "pseudo-label", "train", "evaluate", "ablate"}
    for parser in sub.choices.values():
        assert any("--seed" in a.option_strings for a in parser._actions)
