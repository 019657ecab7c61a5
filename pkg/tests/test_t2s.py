import math

import numpy as np
import pytest
import torch

from covomix.errors import DimensionError
from covomix.pipeline import train_t2s
from covomix.t2s import (IGNORE, StreamPair, T2SConfig, T2SModel, collate, comix_config, cosingle_config, shift_right,
                         t2s_forward, t2s_generate, t2s_loss, teacher_forced_accuracy, with_silence_streams)
from covomix.tokenizer import SemanticTokenStream, Vocab, tokenize_text

from test_nn import ref_attention, ref_gelu, ref_linear, ref_rms


@pytest.fixture(autouse=True)
def _double():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    torch.manual_seed(0)
    yield
    torch.set_default_dtype(old)


def tiny(C=2, variant="mix", K=6, **kw):
    kw = {**dict(enc_layers=1, dec_layers=1, enc_dim=8, dec_dim=8, n_heads=2), **kw}
    if variant == "single":
        return T2SModel(cosingle_config(10, semantic_vocab=K, **kw))
    return T2SModel(comix_config(10, semantic_vocab=K, n_streams=C, **kw))


def rand_batch(C=2, K=6, T=5, seed=0):
    rng = np.random.default_rng(seed)
    return rng.integers(4, 10, size=7), rng.integers(0, K, size=(T, C))


# --- straight-line forward ----------------------------------------------------------

def ref_norm(x, layer):
    return ref_rms(x) * layer.weight.detach().numpy()


def ref_t2s(model, text, targets):
    cfg = model.cfg
    x = model.text_emb.weight.detach().numpy()[text]
    for blk in model.encoder:
        x = x + ref_attention(ref_norm(x, blk.norm_attn), blk.attn)
        x = x + ref_linear(ref_gelu(ref_linear(ref_norm(x, blk.norm_ff), blk.ff.up)), blk.ff.down)
    mem = ref_norm(x, model.enc_norm)
    if model.memory_proj is not None:
        mem = ref_linear(mem, model.memory_proj)
    prev = shift_right(targets, cfg.bos_id)
    embs = [model.token_emb[c].weight.detach().numpy()[prev[:, c]] for c in range(cfg.n_streams)]
    y = ref_linear(np.concatenate(embs, 1), model.fuse) if model.fuse is not None else embs[0]
    for blk in model.decoder:
        y = y + ref_attention(ref_norm(y, blk.norm_attn), blk.attn, causal=True)
        y = y + ref_attention(ref_norm(y, blk.norm_cross), blk.cross_attn, memory=mem)
        y = y + ref_linear(ref_gelu(ref_linear(ref_norm(y, blk.norm_ff), blk.ff.up)), blk.ff.down)
    h = ref_norm(y, model.dec_norm)
    if cfg.variant == "single":
        return ref_linear(h, model.head)[:, None, :]
    W, b = model.head.weight.detach().numpy(), model.head.bias.detach().numpy()
    d = cfg.dec_dim // cfg.n_streams
    out = np.zeros((len(h), cfg.n_streams, cfg.semantic_vocab))
    for c in range(cfg.n_streams):
        out[:, c] = h[:, c * d:(c + 1) * d] @ W[c].T + b[c]
    return out


@pytest.mark.parametrize("C,variant", [(2, "mix"), (1, "mix"), (1, "single")])
def test_forward_matches_straight_line(C, variant):
    model = tiny(C, variant, enc_dim=4)
    text, tgt = rand_batch(C)
    b = collate([(text, tgt)], model.cfg.bos_id)
    got = model(b.text, b.dec_in, b.text_pad, b.frame_pad)[0].detach().numpy()
    assert got.shape == (5, C, 6)
    assert np.allclose(got, ref_t2s(model, text, tgt), atol=1e-10)


def test_split_head_chunks_are_independent():
    model = tiny(2)
    h = torch.randn(1, 3, 8)
    base = model.head(h)
    h2 = h.clone()
    h2[..., 4:] += 1.0
    out = model.head(h2)
    assert torch.equal(out[:, :, 0], base[:, :, 0]) and not torch.allclose(out[:, :, 1], base[:, :, 1])


def test_zero_head_gives_uniform_loss():
    model = T2SModel(comix_config(10, semantic_vocab=64, enc_layers=1, dec_layers=1, enc_dim=8, dec_dim=8,
                                  n_heads=2), zero_head=True)
    text, tgt = rand_batch(K=64)
    b = collate([(text, tgt)], model.cfg.bos_id)
    loss = t2s_loss(model(b.text, b.dec_in, b.text_pad, b.frame_pad), b.targets)
    assert abs(loss.item() - math.log(64)) < 1e-12
    assert abs(math.log(64) - 4.159) < 1e-3


def test_loss_hand_cases():
    tgt = torch.tensor([[0], [2]])
    onehot = torch.full((2, 1, 3), -1e4)
    onehot[0, 0, 0] = onehot[1, 0, 2] = 1e4
    assert t2s_loss(onehot, tgt).item() == 0.0
    logits = torch.tensor([[[1.0, 2.0, 0.5]], [[0.0, -1.0, 3.0]]])
    e = [[math.exp(v) for v in row] for row in ([1.0, 2.0, 0.5], [0.0, -1.0, 3.0])]
    hand = (-math.log(e[0][0] / sum(e[0])) - math.log(e[1][2] / sum(e[1]))) / 2
    assert abs(t2s_loss(logits, tgt).item() - hand) < 1e-14
    assert abs(t2s_loss(logits, tgt, "sum").item() - 2 * hand) < 1e-14
    padded = torch.tensor([[0], [IGNORE]])
    assert abs(t2s_loss(logits, padded).item() - (-math.log(e[0][0] / sum(e[0])))) < 1e-14
    with pytest.raises(DimensionError):
        t2s_loss(logits, torch.zeros((3, 1), dtype=torch.long))


def test_loss_decomposes_over_streams():
    model = tiny(2)
    text, tgt = rand_batch()
    b = collate([(text, tgt)], model.cfg.bos_id)
    logits = model(b.text, b.dec_in, b.text_pad, b.frame_pad)
    total = t2s_loss(logits, b.targets, "sum")
    parts = sum(t2s_loss(logits[:, :, c:c + 1], b.targets[:, :, c:c + 1], "sum") for c in range(2))
    assert abs(total.item() - parts.item()) < 1e-10


def test_decoder_is_causal():
    model = tiny(2)
    text, tgt = rand_batch(T=8)
    b = collate([(text, tgt)], model.cfg.bos_id)
    base = model(b.text, b.dec_in, b.text_pad, b.frame_pad)
    for j in (1, 4, 7):
        dec = b.dec_in.clone()
        dec[0, j] = (dec[0, j] + 1) % 6
        out = model(b.text, dec, b.text_pad, b.frame_pad)
        assert torch.equal(out[:, :j], base[:, :j])
        assert not torch.allclose(out[:, j:], base[:, j:])


def test_padding_in_batch_matches_single_example():
    model = tiny(2)
    ex = [rand_batch(T=5, seed=1), rand_batch(T=9, seed=2)]
    ex[0] = (ex[0][0][:4], ex[0][1])
    b = collate(ex, model.cfg.bos_id)
    batched = model(b.text, b.dec_in, b.text_pad, b.frame_pad)
    for i, (t, s) in enumerate(ex):
        one = collate([(t, s)], model.cfg.bos_id)
        alone = model(one.text, one.dec_in, one.text_pad, one.frame_pad)[0]
        assert torch.allclose(batched[i, :len(s)], alone, atol=1e-12)


def test_stream_pair_and_config_errors():
    with pytest.raises(DimensionError):
        StreamPair([SemanticTokenStream([1, 2], 4), SemanticTokenStream([1], 4)])
    with pytest.raises(DimensionError):
        comix_config(5, n_streams=2, dec_dim=7)
    with pytest.raises(ValueError):
        T2SConfig(5, variant="other")
    model = tiny(2)
    with pytest.raises(DimensionError):
        model.decode(torch.zeros(1, 2, 8), torch.zeros(1, 3, 1, dtype=torch.long))


def test_generate_length_determinism_and_single_padding():
    vocab = Vocab.build(["a b c"])
    text = tokenize_text("a b c", vocab)
    model = T2SModel(comix_config(len(vocab), semantic_vocab=6, enc_layers=1, dec_layers=1, enc_dim=8,
                                  dec_dim=8, n_heads=2))
    out = t2s_generate(model, text, 10)
    assert len(out) <= 10 and out.n_streams == 2
    assert np.array_equal(out.as_array(), t2s_generate(model, text, 10).as_array())
    with pytest.raises(ValueError):
        t2s_generate(model, text, 0)
    single = T2SModel(cosingle_config(len(vocab), semantic_vocab=6, enc_layers=1, dec_layers=1, enc_dim=8,
                                      dec_dim=8, n_heads=2))
    one = t2s_generate(single, text, 7)
    assert one.n_streams == 1
    two = with_silence_streams(one, 2, silence_id=3)
    assert np.all(two.as_array()[:, 1] == 3) and np.array_equal(two.as_array()[:, 0], one.as_array()[:, 0])


def test_generation_stops_on_silence_run():
    vocab = Vocab.build(["a"])
    model = T2SModel(comix_config(len(vocab), semantic_vocab=6, enc_layers=1, dec_layers=1, enc_dim=8,
                                  dec_dim=8, n_heads=2, silence_id=2, stop_run=3), zero_head=True)
    with torch.no_grad():
        model.head.bias[:, 2] = 5.0
    out = t2s_generate(model, tokenize_text("a", vocab), 50)
    assert len(out) == 3 and np.all(out.as_array() == 2)


def test_overfit_one_pair_then_greedy_reproduces():
    vocab = Vocab.build(["hi there you"])
    text = tokenize_text("hi there [spkchange] you", vocab)
    rng = np.random.default_rng(0)
    tgt = rng.integers(0, 6, size=(12, 2))
    model = T2SModel(comix_config(len(vocab), semantic_vocab=6, enc_layers=1, dec_layers=2, enc_dim=16,
                                  dec_dim=32, n_heads=2, stop_run=100))
    train_t2s(model, [(text.ids, tgt)], steps=150, lr=3e-3)
    logits = t2s_forward(model, text, StreamPair.from_array(tgt, 6))
    assert teacher_forced_accuracy(logits, torch.as_tensor(tgt)) == 1.0
    out = t2s_generate(model, text, 12)
    assert np.array_equal(out.as_array(), tgt)
