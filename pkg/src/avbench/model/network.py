"""Audio-only, visual-only and audio-visual recognisers.

All three variants share the same parts: modality front-end(s), one
Conformer encoder per modality, an MLP fusing the two encoder outputs (AV
only, added to the mean of both streams), a CTC projection and an autoregressive Transformer decoder.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import torch
from torch import nn
import torch.nn.functional as F

from avbench.frontend import AudioFrontend, FeatureSequence, FrontendConfig, VideoFrontend, length_mask
from avbench.model.conformer import ConformerEncoder, EncoderConfig, sinusoidal
from avbench.model.decoding import DecodeConfig, beam_search, greedy_search
from avbench.model.losses import JointLossConfig, attention_loss, batch_ctc_loss, joint_loss
from avbench.tokenizer import EOS, SOS

MODALITIES = ("A", "V", "AV")


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class FusionConfig:
    hidden: int = 256
    out: int = 64


@dataclass(frozen=True)
class DecoderConfig:
    layers: int = 2
    dim: int = 64
    ffn_dim: int = 256
    heads: int = 4
    dropout: float = 0.1


@dataclass(frozen=True)
class ModelConfig:
    modality: str = "AV"
    frontend: FrontendConfig = field(default_factory=FrontendConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    decoder: DecoderConfig = field(default_factory=DecoderConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    loss: JointLossConfig = field(default_factory=JointLossConfig)

    def __post_init__(self):
        if self.modality not in MODALITIES:
            raise ValueError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        d = self.encoder.dim
        if self.frontend.encoder_dim != d or self.fusion.out != d or self.decoder.dim != d:
            raise ValueError("front-end, fusion output and decoder widths must equal the encoder dim")


class FusionMLP(nn.Module):
    def __init__(self, dim: int, cfg: FusionConfig):
        super().__init__()
        if cfg.out != dim:
            raise ValueError("fusion output width must equal the encoder dim")
        self.fc1 = nn.Linear(2 * dim, cfg.hidden)
        self.fc2 = nn.Linear(cfg.hidden, cfg.out)
        # keeps the fused memory on the same scale as a single encoder's output
        self.norm = nn.LayerNorm(cfg.out)

    def forward(self, x):
        return self.norm(self.fc2(F.relu(self.fc1(x))))


def fuse_batch(audio, audio_lens, video, video_lens, mlp: FusionMLP):
    """Per frame (truncated to the shorter stream): mean(a, v) + MLP([a; v]).

    The skip path lets the decoder see both encoders from the first step;
    without it the randomly initialised MLP stalls early training.
    """
    gap = (audio_lens - video_lens).abs()
    if bool((gap > 1).any()):
        raise AlignmentError(f"audio/video feature lengths differ by {int(gap.max())} frames (max 1)")
    lens = torch.minimum(audio_lens, video_lens)
    t = min(audio.shape[1], video.shape[1])
    a, v = audio[:, :t], video[:, :t]
    out = (0.5 * (a + v) + mlp(torch.cat([a, v], dim=-1))) * length_mask(lens, t)[..., None].to(a.dtype)
    return out, lens


def fuse(audio: FeatureSequence, video: FeatureSequence, mlp: FusionMLP) -> FeatureSequence:
    if audio.dim != video.dim:
        raise ValueError("audio and video feature widths differ")
    out, _ = fuse_batch(
        audio.frames[None], torch.tensor([audio.valid_len]), video.frames[None], torch.tensor([video.valid_len]), mlp
    )
    return FeatureSequence(out[0], "fused")


class TransformerDecoder(nn.Module):
    def __init__(self, vocab_size: int, cfg: DecoderConfig):
        super().__init__()
        self.dim = cfg.dim
        self.embed = nn.Embedding(vocab_size, cfg.dim)
        layer = nn.TransformerDecoderLayer(
            cfg.dim, cfg.heads, cfg.ffn_dim, cfg.dropout, batch_first=True, norm_first=True
        )
        self.layers = nn.TransformerDecoder(layer, cfg.layers)
        self.norm = nn.LayerNorm(cfg.dim)
        self.out = nn.Linear(cfg.dim, vocab_size)

    def forward(self, tokens, token_pad_mask, memory, memory_pad_mask):
        """tokens (B, L) -> logits (B, L, V)."""
        n = tokens.shape[1]
        x = self.embed(tokens) * math.sqrt(self.dim) + sinusoidal(n, self.dim, memory.dtype)
        causal = torch.triu(torch.ones(n, n, dtype=torch.bool, device=tokens.device), diagonal=1)
        y = self.layers(
            x,
            memory,
            tgt_mask=causal,
            tgt_key_padding_mask=token_pad_mask,
            memory_key_padding_mask=memory_pad_mask,
        )
        return self.out(self.norm(y))


@dataclass
class Batch:
    """Padded model inputs; absent modalities are None."""

    audio: Optional[torch.Tensor]
    audio_lens: Optional[torch.Tensor]
    video: Optional[torch.Tensor]
    video_lens: Optional[torch.Tensor]
    targets: torch.Tensor  # (B, L) padded with -1
    target_lens: torch.Tensor


@dataclass
class LossTerms:
    loss: torch.Tensor
    ctc: torch.Tensor
    attention: torch.Tensor


class AVSRModel(nn.Module):
    def __init__(self, cfg: ModelConfig, vocab_size: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size = vocab_size
        d = cfg.encoder.dim
        if "A" in cfg.modality:
            self.audio_frontend = AudioFrontend(cfg.frontend)
            self.audio_encoder = ConformerEncoder(cfg.encoder)
        if "V" in cfg.modality:
            self.video_frontend = VideoFrontend(cfg.frontend)
            self.video_encoder = ConformerEncoder(cfg.encoder)
        if cfg.modality == "AV":
            self.fusion = FusionMLP(d, cfg.fusion)
        self.ctc_head = nn.Linear(d, vocab_size)
        self.decoder = TransformerDecoder(vocab_size, cfg.decoder)

    @property
    def uses_audio(self) -> bool:
        return "A" in self.cfg.modality

    @property
    def uses_video(self) -> bool:
        return "V" in self.cfg.modality

    def encode(self, batch: Batch):
        """-> memory (B, T, D), lengths (B,)."""
        a = v = None
        if self.uses_audio:
            a, a_lens = self.audio_frontend(batch.audio, batch.audio_lens)
            a = self.audio_encoder(a, a_lens)
        if self.uses_video:
            v, v_lens = self.video_frontend(batch.video, batch.video_lens)
            v = self.video_encoder(v, v_lens)
        if a is not None and v is not None:
            return fuse_batch(a, a_lens, v, v_lens, self.fusion)
        return (a, a_lens) if a is not None else (v, v_lens)

    def ctc_log_probs(self, memory):
        return self.ctc_head(memory).log_softmax(dim=-1)

    def losses(self, batch: Batch) -> LossTerms:
        memory, lens = self.encode(batch)
        lp = self.ctc_log_probs(memory)
        tgt = batch.targets
        ctc = batch_ctc_loss(lp, lens, tgt, batch.target_lens)

        b = tgt.shape[0]
        sos = torch.full((b, 1), SOS, dtype=torch.long, device=tgt.device)
        dec_in = torch.cat([sos, tgt.clamp_min(0)], dim=1)
        dec_out = torch.cat([tgt, torch.full((b, 1), -1, dtype=torch.long, device=tgt.device)], dim=1)
        dec_out[torch.arange(b), batch.target_lens] = EOS
        in_pad = ~length_mask(batch.target_lens + 1, dec_in.shape[1])
        mem_pad = ~length_mask(lens, memory.shape[1])
        logits = self.decoder(dec_in, in_pad, memory, mem_pad)
        att = attention_loss(logits, dec_out, self.cfg.loss.label_smoothing)
        return LossTerms(joint_loss(ctc, att, self.cfg.loss), ctc, att)

    # --- inference ---------------------------------------------------------

    def step_fn(self, memory: torch.Tensor):
        """Next-token log-probs for a list of prefixes given one utterance's memory (1, T, D)."""

        def step(prefixes):
            n = len(prefixes)
            width = max(len(p) for p in prefixes) + 1
            tokens = torch.zeros((n, width), dtype=torch.long)
            lens = torch.tensor([len(p) + 1 for p in prefixes])
            for i, p in enumerate(prefixes):
                tokens[i, 0] = SOS
                tokens[i, 1 : len(p) + 1] = torch.tensor(p, dtype=torch.long)
            pad = ~length_mask(lens, width)
            mem = memory.expand(n, -1, -1)
            with torch.no_grad():
                logits = self.decoder(tokens, pad, mem, None)
            last = logits[torch.arange(n), lens - 1]
            return last.log_softmax(dim=-1).double().numpy()

        return step

    @torch.no_grad()
    def decode_one(self, batch: Batch, cfg: DecodeConfig, lm=None, greedy: bool = False):
        """Decode a single-utterance batch; returns a list of hypotheses (or ids if greedy)."""
        memory, lens = self.encode(batch)
        memory = memory[:, : int(lens[0])]
        lp = self.ctc_log_probs(memory)[0].double().numpy()
        step = self.step_fn(memory)
        if greedy:
            return greedy_search(step, lp, cfg, lm)
        return beam_search(step, lp, cfg, lm)

    @torch.no_grad()
    def transcribe_ids(self, batch: Batch, cfg: DecodeConfig, lm=None) -> tuple[int, ...]:
        hyps = self.decode_one(batch, cfg, lm)
        return hyps[0].ids if hyps else ()
