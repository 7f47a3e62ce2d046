import itertools

import numpy as np
import pytest

from lakeprompt import prompt_codec as pc
from lakeprompt.errors import ContractError
from lakeprompt.numerics import ParamStore, Tensor, grad_check, make_rng, ops
from lakeprompt.numerics.fourier import fourier_encode, pixel_coords
from lakeprompt.promptgen import BoxPrompt, MaskPrompt, PointPrompt, PromptSet

from oracles import iptb_ref


def make_store(cfg, seed=0):
    store = ParamStore(np.float64)
    pc.init_codec(store, cfg, make_rng("test", seed))
    return store


def perturb(store, rng, scale=0.3):
    """Move every parameter off its init so residual branches are non-trivial."""
    for name, t in store.items():
        t.data = t.data + scale * rng.standard_normal(t.data.shape)


def full_prompts(size=16):
    mask = np.zeros((size, size), np.uint8)
    mask[3:12, 4:13] = 1
    return PromptSet(points=PointPrompt("random", [(3, 4), (9, 9), (12, 2)]),
                     box=BoxPrompt(2, 3, 13, 12), mask=MaskPrompt("filled", mask))


@pytest.mark.parametrize("r", [1, 2])
def test_iptb_matches_naive_reference(rng, r):
    cfg = pc.CodecConfig(channels=8, heads=2, reduction=r)
    store = make_store(cfg)
    perturb(store, rng)
    P = {n: t.data for n, t in store.items()}
    pe = store.buffers["prompt.pe_matrix"]
    tokens = rng.standard_normal((1, 6, 8))
    dense = rng.standard_normal((1, 8, 4, 4))
    for blk in range(2):
        t_out, d_out = pc.iptb_forward(Tensor(tokens), Tensor(dense), store, cfg, blk)
        t_ref, d_ref = iptb_ref(tokens[0], dense[0], P, pe, blk, r, 2)
        assert t_out.shape == tokens.shape and d_out.shape == dense.shape
        assert np.abs(t_out.data[0] - t_ref).max() <= 1e-6
        assert np.abs(d_out.data[0] - d_ref).max() <= 1e-6


def test_reduction_override_equals_r1_model(rng):
    cfg2 = pc.CodecConfig(channels=8, heads=2, reduction=2)
    cfg1 = pc.CodecConfig(channels=8, heads=2, reduction=1)
    store = make_store(cfg2)
    tokens, dense = Tensor(rng.standard_normal((1, 5, 8))), Tensor(rng.standard_normal((1, 8, 4, 4)))
    a = pc.iptb_forward(tokens, dense, store, cfg2, 0, reduction=1)
    b = pc.iptb_forward(tokens, dense, store, cfg1, 0)
    assert np.array_equal(a[1].data, b[1].data)


# --- token arithmetic ------------------------------------------------------------

def test_token_counts_enumerated():
    cfg = pc.CodecConfig(channels=8, heads=1)
    store = make_store(cfg)
    mask = np.zeros((16, 16), np.uint8)
    mask[4:8, 4:8] = 1
    counts = set()
    for has_pts, has_box, has_mask in itertools.product([0, 1], repeat=3):
        for k in range(10):
            ps = PromptSet(points=PointPrompt("random", [(i, i) for i in range(k)]) if has_pts and k else None,
                           box=BoxPrompt(1, 1, 9, 9) if has_box else None,
                           mask=MaskPrompt("filled", mask) if has_mask else None)
            tokens, dense = pc.encode_prompts(ps, 16, 16, store, cfg)
            n = tokens.shape[1]
            assert n == pc.sparse_token_count(k if has_pts else 0, bool(has_box))
            assert 1 <= n <= 12
            assert dense.shape == (1, 8, 4, 4)
            counts.add(n)
    assert max(counts) == 12
    full = PromptSet(points=PointPrompt("random", [(i, i) for i in range(9)]), box=BoxPrompt(1, 1, 9, 9))
    assert pc.encode_prompts(full, 16, 16, store, cfg)[0].shape[1] == 12


def test_no_mask_embedding_broadcast():
    cfg = pc.CodecConfig(channels=8, heads=1)
    store = make_store(cfg)
    _, dense = pc.encode_prompts(PromptSet(), 16, 16, store, cfg)
    nm = store["prompt.embed.no_mask"].data
    assert np.allclose(dense.data[0], nm[:, None, None])


def test_point_token_is_fourier_plus_type_embedding():
    cfg = pc.CodecConfig(channels=8, heads=1)
    store = make_store(cfg)
    ps = PromptSet(points=PointPrompt("center", [(5, 7)]))
    tokens, _ = pc.encode_prompts(ps, 16, 16, store, cfg)
    enc = fourier_encode(pixel_coords([(5, 7)], 16, 16), store.buffers["prompt.pe_matrix"])[0]
    assert np.allclose(tokens.data[0, 1], enc + store["prompt.embed.point"].data)
    assert np.allclose(tokens.data[0, 0], store["prompt.query"].data[0])


def test_encoder_contracts():
    cfg = pc.CodecConfig(channels=8, heads=1)
    store = make_store(cfg)
    with pytest.raises(ContractError):
        pc.encode_prompts(PromptSet(points=PointPrompt("random", [(16, 0)])), 16, 16, store, cfg)
    with pytest.raises(ContractError):
        pc.encode_prompts(PromptSet(mask=MaskPrompt("filled", np.zeros((8, 8)))), 16, 16, store, cfg)
    with pytest.raises(ContractError):
        pc.CodecConfig(channels=10, heads=3)


# --- parameter counts --------------------------------------------------------------

def hand_count(c, heads, r, mlp_ratio=2):
    cm, hid = c // 4, mlp_ratio * c
    embeds = c + 6 * c                                      # query + six type embeddings
    mask_path = 9 + cm + cm + 9 * cm + cm * c + c           # dw1, pw1+b, dw2, pw2+b
    fuse = c * c * 9 + c
    attn = 3 * (3 * (c * c + c) + (c * c + c))              # q, k, v and output projections
    mlp = c * hid + hid + hid * c + c
    norms = 4 * 2 * c
    sr = (c * c * r * r + c + 2 * c) if r > 1 else 0
    return embeds + mask_path + fuse + 2 * (attn + mlp + norms + sr)


@pytest.mark.parametrize("c,heads,r", [(8, 1, 1), (8, 1, 2), (32, 2, 2), (16, 4, 1)])
def test_param_count_closed_form(c, heads, r):
    cfg = pc.CodecConfig(channels=c, heads=heads, reduction=r)
    store = make_store(cfg)
    assert pc.count_prompt_params(store) == pc.codec_param_count(cfg) == hand_count(c, heads, r)
    # the positional-encoding matrix is a fixed buffer, not a learnable parameter
    assert "prompt.pe_matrix" not in store.names()


def test_attention_weights_scale_quadratically():
    def attn_weights(c):
        store = make_store(pc.CodecConfig(channels=c, heads=1))
        return sum(store[n].data.size for n in store.names() if n.split(".")[-1] in ("wq", "wk", "wv", "wo"))
    assert attn_weights(32) == 4 * attn_weights(16)


# --- identities and gradients ----------------------------------------------------------

def test_zeroed_outputs_make_decoder_identity(rng):
    cfg = pc.CodecConfig(channels=8, heads=2)
    store = make_store(cfg)
    perturb(store, rng)
    pc.zero_output_projections(store)
    c = 8
    fuse = np.zeros((c, c, 3, 3))
    fuse[np.arange(c), np.arange(c), 1, 1] = 1
    store["prompt.fuse.w"].data = fuse
    store["prompt.fuse.b"].data = np.zeros(c)
    f = Tensor(rng.standard_normal((1, 8, 4, 4)))
    zero_dense = Tensor(np.zeros((1, 8, 4, 4)))
    tokens, _ = pc.encode_prompts(full_prompts(), 16, 16, store, cfg)
    out = pc.prompt_decode(f, tokens, zero_dense, store, cfg)
    assert np.allclose(out.data, f.data, atol=1e-12)
    # identity-initialised fusion: output = F + O_d
    d = Tensor(rng.standard_normal((1, 8, 4, 4)))
    assert np.allclose(pc.fuse_dense(f, d, store).data, f.data + d.data)


def test_decode_is_fuse_then_two_blocks(rng):
    cfg = pc.CodecConfig(channels=8, heads=2)
    store = make_store(cfg)
    perturb(store, rng)
    f = Tensor(rng.standard_normal((1, 8, 4, 4)))
    tokens, dense = pc.encode_prompts(full_prompts(), 16, 16, store, cfg)
    d = pc.fuse_dense(f, dense, store)
    t = tokens
    for blk in range(2):
        t, d = pc.iptb_forward(t, d, store, cfg, blk)
    assert np.array_equal(pc.prompt_decode(f, tokens, dense, store, cfg).data, d.data)


def test_fuse_gradient_reaches_both_inputs(rng):
    cfg = pc.CodecConfig(channels=8, heads=2)
    store = make_store(cfg)
    f = Tensor(rng.standard_normal((1, 8, 4, 4)), requires_grad=True)
    d = Tensor(rng.standard_normal((1, 8, 4, 4)), requires_grad=True)
    ops.sum(ops.mul(pc.fuse_dense(f, d, store), Tensor(rng.standard_normal((1, 8, 4, 4))))).backward()
    assert np.abs(f.grad).sum() > 0 and np.abs(d.grad).sum() > 0


def test_decoder_grad_check(rng):
    cfg = pc.CodecConfig(channels=8, heads=2)
    store = make_store(cfg, seed=1)
    f = Tensor(rng.standard_normal((1, 8, 4, 4)))
    head = Tensor(rng.standard_normal((1, 8, 4, 4)))
    ps = full_prompts()

    def loss():
        tokens, dense = pc.encode_prompts(ps, 16, 16, store, cfg)
        return ops.sum(ops.mul(pc.prompt_decode(f, tokens, dense, store, cfg), head))
    rep = grad_check(loss, store, sample=20)
    assert rep.passed, (rep.worst, rep.max_rel_err)


def test_batch_encoding_requires_equal_counts():
    cfg = pc.CodecConfig(channels=8, heads=1)
    store = make_store(cfg)
    a = PromptSet(points=PointPrompt("random", [(1, 1)]))
    b = PromptSet(points=PointPrompt("random", [(1, 1), (2, 2)]))
    with pytest.raises(ContractError):
        pc.encode_batch([a, b], 16, 16, store, cfg)
    tokens, dense = pc.encode_batch([a, a], 16, 16, store, cfg)
    assert tokens.shape == (2, 3, 8) and dense.shape == (2, 8, 4, 4)
