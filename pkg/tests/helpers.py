import torch

from avbench.config import model_config
from avbench.model.network import AVSRModel, Batch
from avbench.tokenizer import RESERVED, Vocabulary

TINY_VOCAB = Vocabulary(RESERVED + ("a", "b", "c", "▁"))


def tiny_model(modality="AV", vocab_size=TINY_VOCAB.size, dim=8, layers=2, seed=0, dtype=torch.float64):
    torch.manual_seed(seed)
    cfg = model_config(
        modality, dim=dim, layers=layers, heads=2, ffn=2 * dim,
        audio_channels=(4, 4), audio_res_blocks=1, video_stem_channels=4, video_stage_channels=(4, 4),
    )
    return AVSRModel(cfg, vocab_size).to(dtype).eval()


def tiny_batch(frames=(5, 4), targets=((4, 5), (6,)), size=16, seed=0, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    b = len(frames)
    t = max(frames)
    audio = torch.randn(b, t * 640, generator=g, dtype=dtype)
    video = torch.randn(b, t, size, size, generator=g, dtype=dtype)
    lens = torch.tensor(frames)
    tl = torch.tensor([len(y) for y in targets])
    tgt = torch.full((b, int(tl.max())), -1, dtype=torch.long)
    for i, y in enumerate(targets):
        tgt[i, : len(y)] = torch.tensor(y)
    return Batch(audio, lens * 640, video, lens, tgt, tl)
