import math

import pytest

from avbench.config import CorpusConfig, ExperimentConfig, TrainConfig, load_config, full_scale_experiment, save_config
from avbench.synth import generate_synthetic_corpus


@pytest.mark.parametrize("cfg", [ExperimentConfig(), full_scale_experiment()], ids=["desk", "full"])
def test_ini_round_trip(cfg, tmp_path):
    path = tmp_path / "c.ini"
    save_config(cfg, path)
    assert load_config(path) == cfg


def test_infinite_values_survive(tmp_path):
    from dataclasses import replace

    cfg = replace(ExperimentConfig(), snr_grid=(math.inf, 0.0, -5.0))
    save_config(cfg, tmp_path / "c.ini")
    assert load_config(tmp_path / "c.ini").snr_grid == (math.inf, 0.0, -5.0)


def test_partial_file_uses_defaults(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[experiment]\nvocab_size = 128\n\n[train]\nepochs = 7\nmodality = \"AV\"\n")
    cfg = load_config(path)
    assert cfg.vocab_size == 128 and cfg.train.epochs == 7 and cfg.train.modality == "AV"
    assert cfg.model == ExperimentConfig().model


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[train]\nepoch = 7\n")
    with pytest.raises(ValueError, match="epoch"):
        load_config(path)


def test_desk_corpus_hours():
    # generated lazily, so only durations are computed
    c = CorpusConfig()
    assert generate_synthetic_corpus(c.labelled).total_hours == pytest.approx(2.0, abs=0.01)
    assert generate_synthetic_corpus(c.unlabelled).total_hours == pytest.approx(8.0, abs=0.02)


def test_full_scale_presets():
    cfg = full_scale_experiment()
    assert (cfg.train.epochs, cfg.train.warmup_epochs, cfg.train.peak_lr, cfg.train.max_frames_per_batch) == (
        75, 5, 1e-3, 1800,
    )
    assert cfg.model.encoder.dim == 768 and cfg.model.encoder.layers == 12
    assert cfg.decode.beam == 10
    assert TrainConfig().epochs in range(5, 16)
