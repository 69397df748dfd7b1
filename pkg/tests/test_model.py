import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from torch.func import functional_call

from avbench.frontend import FeatureSequence
from avbench.model.conformer import ConformerEncoder, EncoderConfig
from avbench.model.decoding import DecodeConfig
from avbench.model.network import AlignmentError, FusionConfig, FusionMLP, ModelConfig, fuse
from avbench.tokenizer import BLANK, SOS, UNK
from gradcheck import directional_rel_error
from helpers import TINY_VOCAB, tiny_batch, tiny_model


def _enc(layers=2, dim=8, **kw):
    torch.manual_seed(0)
    cfg = EncoderConfig(layers=layers, dim=dim, ffn_dim=2 * dim, heads=2, conv_kernel=3, **kw)
    return ConformerEncoder(cfg).double().eval()


class TestEncoder:
    def test_zero_layers_is_identity(self):
        x = torch.randn(2, 5, 8, dtype=torch.float64)
        assert torch.equal(_enc(layers=0)(x), x)

    def test_single_frame(self):
        out = _enc()(torch.randn(1, 1, 8, dtype=torch.float64))
        assert out.shape == (1, 1, 8) and torch.isfinite(out).all()

    def test_width_mismatch(self):
        with pytest.raises(ValueError):
            _enc()(torch.randn(1, 3, 6, dtype=torch.float64))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EncoderConfig(dim=10, heads=4)
        with pytest.raises(ValueError):
            EncoderConfig(conv_kernel=4)

    @pytest.mark.parametrize("pos_enc", ["relative", "absolute"])
    def test_gradient(self, pos_enc):
        enc = _enc(pos_enc=pos_enc)
        w = torch.randn(4, 8, dtype=torch.float64)
        x = torch.randn(1, 4, 8, dtype=torch.float64)
        assert directional_rel_error(lambda v: (enc(v) * w).sum(), x) < 1e-5

    def test_padding_does_not_leak(self):
        enc = _enc()
        x = torch.randn(1, 6, 8, dtype=torch.float64)
        padded = torch.cat([x, torch.randn(1, 3, 8, dtype=torch.float64)], dim=1)
        got = enc(padded, torch.tensor([6]))[:, :6]
        assert torch.allclose(got, enc(x, torch.tensor([6])), atol=1e-10)

    @given(st.integers(1, 3), st.integers(1, 9))
    def test_shape_preserved(self, b, t):
        assert _enc(layers=1)(torch.randn(b, t, 8, dtype=torch.float64)).shape == (b, t, 8)


class TestFusion:
    mlp = FusionMLP(8, FusionConfig(hidden=16, out=8))

    def _seq(self, t):
        return FeatureSequence(torch.randn(t, 8), "audio")

    def test_equal_lengths(self):
        assert fuse(self._seq(25), self._seq(25), self.mlp).valid_len == 25

    def test_off_by_one_truncates(self):
        assert fuse(self._seq(25), self._seq(24), self.mlp).valid_len == 24

    def test_large_gap_raises(self):
        with pytest.raises(AlignmentError):
            fuse(self._seq(25), self._seq(20), self.mlp)

    def test_output_width_must_match(self):
        with pytest.raises(ValueError):
            FusionMLP(8, FusionConfig(hidden=16, out=4))

    @given(st.integers(1, 40), st.integers(-3, 3))
    def test_length_rule(self, t, gap):
        ta, tv = t, max(1, t + gap)
        if abs(ta - tv) > 1:
            with pytest.raises(AlignmentError):
                fuse(self._seq(ta), self._seq(tv), self.mlp)
        else:
            out = fuse(self._seq(ta), self._seq(tv), self.mlp)
            assert out.valid_len == min(ta, tv) and out.dim == 8


class TestNetwork:
    def test_widths_must_agree(self):
        from avbench.config import model_config

        cfg = model_config("AV", dim=8, heads=2, ffn=16)
        with pytest.raises(ValueError):
            ModelConfig(modality="AV", encoder=cfg.encoder)  # default front-end is 64 wide
        with pytest.raises(ValueError):
            ModelConfig(modality="AVX")

    @pytest.mark.parametrize("modality", ["A", "V", "AV"])
    def test_probabilities_normalised(self, modality):
        model = tiny_model(modality)
        memory, lens = model.encode(tiny_batch())
        lp = model.ctc_log_probs(memory)
        assert torch.allclose(lp.logsumexp(-1), torch.zeros_like(lp[..., 0]), atol=1e-10)
        rows = model.step_fn(memory[:1])([(), (4,), (4, 5)])
        assert np.allclose(np.logaddexp.reduce(rows, axis=1), 0.0, atol=1e-10)

    def test_joint_loss_gradient(self):
        model = tiny_model("AV")
        batch = tiny_batch()
        names = [n for n, _ in model.named_parameters()]
        shapes = [p.shape for _, p in model.named_parameters()]
        flat = torch.cat([p.detach().reshape(-1) for p in model.parameters()])

        def loss(vec):
            params, i = {}, 0
            for n, s in zip(names, shapes):
                k = int(np.prod(s))
                params[n] = vec[i : i + k].reshape(s)
                i += k
            return functional_call(model, params, (batch,), strict=True).loss

        model.forward = model.losses  # functional_call dispatches through forward
        assert directional_rel_error(loss, flat, n_dirs=3) < 1e-5

    @pytest.mark.parametrize("blank", ["audio", "video"])
    def test_blanked_modality_still_decodes(self, blank):
        model = tiny_model("AV")
        b = tiny_batch(frames=(5,), targets=((4,),))
        if blank == "audio":
            b.audio = torch.zeros_like(b.audio)
        else:
            b.video = torch.zeros_like(b.video)
        hyps = model.decode_one(b, DecodeConfig(beam=3))
        assert hyps
        for h in hyps:
            assert all(4 <= i < TINY_VOCAB.size for i in h.ids)
            assert not {BLANK, UNK, SOS} & set(h.ids)

    def test_padded_batch_matches_single(self):
        model = tiny_model("AV")
        batch = tiny_batch(frames=(5, 3), targets=((4, 5), (6,)))
        memory, lens = model.encode(batch)
        single = tiny_batch(frames=(3,), targets=((6,),))
        single.audio = batch.audio[1:, : 3 * 640]
        single.video = batch.video[1:, :3]
        mem1, _ = model.encode(single)
        assert torch.allclose(memory[1, :3], mem1[0], atol=1e-8)
