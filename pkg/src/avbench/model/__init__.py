from avbench.model.conformer import ConformerEncoder, EncoderConfig
from avbench.model.decoding import DecodeConfig, Hypothesis, beam_search, greedy_search
from avbench.model.losses import JointLossConfig, attention_loss, ctc_loss, joint_loss
from avbench.model.network import AVSRModel, Batch, DecoderConfig, FusionConfig, ModelConfig, fuse

__all__ = [
    "AVSRModel",
    "Batch",
    "ConformerEncoder",
    "DecodeConfig",
    "DecoderConfig",
    "EncoderConfig",
    "FusionConfig",
    "Hypothesis",
    "JointLossConfig",
    "ModelConfig",
    "attention_loss",
    "beam_search",
    "ctc_loss",
    "fuse",
    "greedy_search",
    "joint_loss",
]
