"""Experiment configuration.

Configs are nested frozen dataclasses. On disk they are INI files whose
section names are dotted paths into the config (``[model.encoder]``) and
whose values are JSON literals, bare strings also accepted::

    [train]
    epochs = 10
    modality = V

    [model.encoder]
    layers = 2
"""

from __future__ import annotations

import configparser
import dataclasses
import json
import math
import os
import typing
from dataclasses import dataclass

from avbench.augment import EVAL_SNR_GRID_DB, TimeMaskConfig, VideoAugConfig
from avbench.frontend import FrontendConfig
from avbench.model.conformer import EncoderConfig
from avbench.model.decoding import DecodeConfig
from avbench.model.losses import JointLossConfig
from avbench.model.network import DecoderConfig, FusionConfig, ModelConfig
from avbench.synth import SynthCorpusSpec


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 5
    warmup_epochs: int = 1
    peak_lr: float = 2e-3
    max_frames_per_batch: int = 300
    weight_decay: float = 0.01
    seed: int = 0
    modality: str = "V"
    babble_noise: bool = False
    grad_clip: float = 5.0
    augment: bool = True

    def __post_init__(self):
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"warmup_epochs ({self.warmup_epochs}) must be < epochs ({self.epochs})")
        if self.max_frames_per_batch < 1:
            raise ValueError("max_frames_per_batch must be positive")


@dataclass(frozen=True)
class AugmentConfig:
    audio_time_mask: TimeMaskConfig = TimeMaskConfig()
    video: VideoAugConfig = VideoAugConfig()


@dataclass(frozen=True)
class PseudoLabelConfig:
    transcriber: str = "oracle:wer=0.1"
    keep_lang: str = "eng"
    min_conf: float = 0.0
    fraction: float = 1.0
    seed: int = 17


@dataclass(frozen=True)
class CorpusConfig:
    """Desk corpus: 2 h labelled, 8 h unlabelled of which 6 h is English, 100 test clips."""

    labelled: SynthCorpusSpec = SynthCorpusSpec(n_samples=7200, tokens_per_sample=(3, 7), seed=1, source="lrs")
    unlabelled: SynthCorpusSpec = SynthCorpusSpec(
        n_samples=28800, tokens_per_sample=(3, 7), seed=2, language_mix={"eng": 0.75, "spa": 0.25}, source="avspeech"
    )
    test: SynthCorpusSpec = SynthCorpusSpec(n_samples=100, tokens_per_sample=(3, 7), seed=3, source="test")


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig = CorpusConfig()
    pseudo: PseudoLabelConfig = PseudoLabelConfig()
    vocab_size: int = 256
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    augment: AugmentConfig = AugmentConfig()
    decode: DecodeConfig = DecodeConfig(beam=1)
    noise_kinds: tuple[str, ...] = ("white",)
    snr_grid: tuple[float, ...] = EVAL_SNR_GRID_DB
    scaling_fractions: tuple[float, ...] = (0.0, 0.5, 1.0)
    transcriber_wers: tuple[float, ...] = (0.0, 0.1, 0.3)
    transcriber_fraction: float = 1.0


def model_config(modality: str, dim: int = 64, layers: int = 2, heads: int = 4, ffn: int = 256, **frontend) -> ModelConfig:
    return ModelConfig(
        modality=modality,
        frontend=FrontendConfig(encoder_dim=dim, **frontend),
        encoder=EncoderConfig(layers=layers, dim=dim, ffn_dim=ffn, heads=heads),
        decoder=DecoderConfig(layers=layers, dim=dim, ffn_dim=ffn, heads=heads),
        fusion=FusionConfig(hidden=4 * dim, out=dim),
        loss=JointLossConfig(),
    )


def full_scale_model_config(modality: str = "AV") -> ModelConfig:
    """Full-size geometry; documented, never trained in CI."""
    return ModelConfig(
        modality=modality,
        frontend=FrontendConfig(
            encoder_dim=768,
            audio_channels=(64, 128, 256),
            audio_strides=(4, 4, 4, 10),
            audio_res_blocks=8,
            video_stem_channels=64,
            video_stage_channels=(64, 128, 256, 512),
            video_blocks_per_stage=2,
        ),
        encoder=EncoderConfig(layers=12, dim=768, ffn_dim=3072, heads=16, conv_kernel=31),
        decoder=DecoderConfig(layers=6, dim=768, ffn_dim=3072, heads=16),
        fusion=FusionConfig(hidden=8192, out=768),
    )


def full_scale_train_config(modality: str = "V") -> TrainConfig:
    return TrainConfig(epochs=75, warmup_epochs=5, peak_lr=1e-3, max_frames_per_batch=1800, modality=modality)


def full_scale_experiment() -> ExperimentConfig:
    return ExperimentConfig(
        vocab_size=5000,
        model=full_scale_model_config("V"),
        train=full_scale_train_config("V"),
        augment=AugmentConfig(video=VideoAugConfig(crop_size=88)),
        decode=DecodeConfig(beam=10, lm_weight=0.1),
    )


# --- (de)serialisation ---------------------------------------------------------


def to_dict(obj) -> typing.Any:
    if dataclasses.is_dataclass(obj):
        return {f.name: to_dict(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [to_dict(x) for x in obj]
    if isinstance(obj, dict):
        return {k: to_dict(v) for k, v in obj.items()}
    if isinstance(obj, float) and math.isinf(obj):
        return "inf" if obj > 0 else "-inf"
    return obj


def _coerce(tp, value):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        return from_dict(tp, value)
    if tp is float:
        return float(value)
    if tp is int:
        return int(value)
    if tp is bool:
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes")
    if origin is tuple:
        args = typing.get_args(tp)
        inner = args[0] if args else typing.Any
        return tuple(_coerce(inner, v) for v in value)
    if origin is typing.Union:
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _coerce(args[0], value)
    return value


def from_dict(cls, d: dict):
    if d is None:
        return cls()
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in d and f.init:
            kwargs[f.name] = _coerce(hints[f.name], d[f.name])
    unknown = set(d) - {f.name for f in dataclasses.fields(cls)}
    if unknown:
        raise ValueError(f"{cls.__name__}: unknown keys {sorted(unknown)}")
    return cls(**kwargs)


def _parse_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    with open(path, encoding="utf-8") as f:
        parser.read_file(f)
    tree: dict = {}
    for section in parser.sections():
        node = tree
        if section != "experiment":
            for part in section.split("."):
                node = node.setdefault(part, {})
        for key, raw in parser[section].items():
            node[key] = _parse_value(raw)
    return from_dict(ExperimentConfig, tree)


def save_config(cfg: ExperimentConfig, path: str | os.PathLike) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str

    def walk(prefix: str, d: dict):
        flat = {k: v for k, v in d.items() if not isinstance(v, dict) or k == "language_mix"}
        if flat:
            name = prefix or "experiment"
            parser[name] = {k: json.dumps(v) for k, v in flat.items()}
        for k, v in d.items():
            if isinstance(v, dict) and k != "language_mix":
                walk(f"{prefix}.{k}" if prefix else k, v)

    walk("", to_dict(cfg))
    with open(path, "w", encoding="utf-8") as f:
        parser.write(f)
