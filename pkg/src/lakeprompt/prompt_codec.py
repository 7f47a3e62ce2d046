"""Prompt encoder and the two-block image-prompt transformer decoder.

The encoder turns a ``PromptSet`` into a sparse token sequence
``[query, points | no_point, box_tl + box_br | no_box]`` and a dense map at a
quarter of the image resolution (mask path or broadcast ``no_mask``). The
decoder fuses the dense map into the image embedding with a 3x3 conv, then
runs two blocks of: token self-attention, token-to-image cross-attention,
token MLP, image-to-token cross-attention. Every step is pre-normalized with
a residual connection, so zeroed output projections make a block the
identity. Image-side keys/values are spatially reduced by ``reduction``.

All learnable names start with ``prompt.``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, NonFiniteError
from .numerics import ops
from .numerics.fourier import fourier_encode, gaussian_matrix, grid_pe, pixel_coords
from .numerics.params import ParamStore
from .numerics.tensor import Tensor
from .promptgen import MAX_POINTS

PREFIX = "prompt."
EMBED_NAMES = ("point", "box_tl", "box_br", "no_point", "no_box", "no_mask")
N_BLOCKS = 2


@dataclass(frozen=True)
class CodecConfig:
    channels: int = 32
    heads: int = 2
    reduction: int = 2
    mlp_ratio: int = 2
    pe_seed: int = 0

    def __post_init__(self):
        c = self.channels
        if c % 4 or c % self.heads:
            raise ContractError(f"channels {c} must be divisible by 4 and by heads {self.heads}")
        if self.reduction < 1:
            raise ContractError("reduction must be >= 1")

    @property
    def mask_hidden(self):
        return self.channels // 4

    @property
    def mlp_hidden(self):
        return self.mlp_ratio * self.channels


def _attn_names(p):
    return [f"{p}.{n}" for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]


def init_codec(store: ParamStore, cfg: CodecConfig, rng) -> None:
    c, cm, hid = cfg.channels, cfg.mask_hidden, cfg.mlp_hidden

    def normal(shape, std):
        return rng.normal(0.0, std, shape)

    store.add(PREFIX + "query", normal((1, c), 1.0))
    for n in EMBED_NAMES:
        store.add(PREFIX + "embed." + n, normal((c,), 1.0))
    store.add(PREFIX + "mask.dw1", normal((1, 1, 3, 3), 1.0 / 3.0))
    store.add(PREFIX + "mask.pw1", normal((cm, 1, 1, 1), 1.0))
    store.add(PREFIX + "mask.pw1_b", np.zeros(cm))
    store.add(PREFIX + "mask.dw2", normal((cm, 1, 3, 3), 1.0 / 3.0))
    store.add(PREFIX + "mask.pw2", normal((c, cm, 1, 1), np.sqrt(2.0 / cm)))
    store.add(PREFIX + "mask.pw2_b", np.zeros(c))
    store.add_buffer(PREFIX + "pe_matrix", gaussian_matrix(c, cfg.pe_seed))

    fuse = np.zeros((c, c, 3, 3))
    fuse[np.arange(c), np.arange(c), 1, 1] = 1.0
    store.add(PREFIX + "fuse.w", fuse)
    store.add(PREFIX + "fuse.b", np.zeros(c))

    for b in range(N_BLOCKS):
        p = f"{PREFIX}iptb{b}"
        for attn in ("self_attn", "t2i", "i2t"):
            for n in _attn_names(f"{p}.{attn}"):
                kind = n.rsplit(".", 1)[1]
                if kind.startswith("b"):
                    store.add(n, np.zeros(c))
                elif kind == "wo":
                    store.add(n, normal((c, c), 0.02))
                else:
                    store.add(n, normal((c, c), 1.0 / np.sqrt(c)))
        store.add(f"{p}.mlp.w1", normal((c, hid), np.sqrt(2.0 / c)))
        store.add(f"{p}.mlp.b1", np.zeros(hid))
        store.add(f"{p}.mlp.w2", normal((hid, c), 0.02))
        store.add(f"{p}.mlp.b2", np.zeros(c))
        for i in range(1, 5):
            store.add(f"{p}.ln{i}.g", np.ones(c))
            store.add(f"{p}.ln{i}.b", np.zeros(c))
        if cfg.reduction > 1:
            r = cfg.reduction
            store.add(f"{p}.sr.w", normal((c, c, r, r), np.sqrt(1.0 / (c * r * r))))
            store.add(f"{p}.sr.b", np.zeros(c))
            store.add(f"{p}.sr_ln.g", np.ones(c))
            store.add(f"{p}.sr_ln.b", np.zeros(c))


def codec_param_count(cfg: CodecConfig) -> int:
    """Closed-form number of learnable prompt scalars."""
    c, cm, hid, r = cfg.channels, cfg.mask_hidden, cfg.mlp_hidden, cfg.reduction
    encoder = c + len(EMBED_NAMES) * c + (9 + cm + cm) + (9 * cm + c * cm + c)
    fuse = 9 * c * c + c
    block = 3 * (4 * c * c + 4 * c) + (c * hid + hid + hid * c + c) + 4 * 2 * c
    if r > 1:
        block += c * c * r * r + c + 2 * c
    return encoder + fuse + N_BLOCKS * block


def count_prompt_params(store: ParamStore) -> int:
    return store.count(PREFIX)


def zero_output_projections(store: ParamStore) -> None:
    """Zero every residual-branch output (attention ``wo``/``bo``, MLP ``w2``/``b2``)."""
    for n in store.names(PREFIX):
        if n.endswith((".wo", ".bo", ".mlp.w2", ".mlp.b2")):
            store[n].data[...] = 0.0


# --- encoder ----------------------------------------------------------------

def sparse_token_count(n_points: int, has_box: bool) -> int:
    return 1 + (n_points if n_points > 0 else 1) + (2 if has_box else 1)


def _const(x, dtype):
    return Tensor(np.asarray(x, dtype=dtype))


def encode_prompts(prompts, height: int, width: int, store: ParamStore, cfg: CodecConfig):
    """One prompt set -> sparse tokens (1, N, C) and dense token (1, C, H/4, W/4)."""
    if height % 4 or width % 4:
        raise ContractError(f"image dims {(height, width)} must be divisible by 4")
    c, dt = cfg.channels, store.dtype
    pe = store.buffers[PREFIX + "pe_matrix"]
    emb = {n: store[PREFIX + "embed." + n] for n in EMBED_NAMES}
    parts = [store[PREFIX + "query"]]

    pts = [] if prompts is None or prompts.points is None else list(prompts.points.points)
    if len(pts) > MAX_POINTS:
        raise ContractError(f"{len(pts)} points exceeds the maximum of {MAX_POINTS}")
    for x, y in pts:
        if not (0 <= x < width and 0 <= y < height):
            raise ContractError(f"point {(x, y)} outside {width}x{height}")
    if pts:
        enc = _const(fourier_encode(pixel_coords(pts, width, height), pe), dt)
        parts.append(ops.add(enc, emb["point"]))
    else:
        parts.append(ops.reshape(emb["no_point"], (1, c)))

    box = None if prompts is None else prompts.box
    if box is not None:
        if not (0 <= box.x_min <= box.x_max < width and 0 <= box.y_min <= box.y_max < height):
            raise ContractError(f"box {box} outside {width}x{height}")
        corners = _const(fourier_encode(
            pixel_coords([(box.x_min, box.y_min), (box.x_max, box.y_max)], width, height), pe), dt)
        kinds = ops.concat([ops.reshape(emb["box_tl"], (1, c)), ops.reshape(emb["box_br"], (1, c))], axis=0)
        parts.append(ops.add(corners, kinds))
    else:
        parts.append(ops.reshape(emb["no_box"], (1, c)))

    tokens = ops.concat(parts, axis=0)
    tokens = ops.reshape(tokens, (1,) + tokens.shape)

    mask = None if prompts is None or prompts.mask is None else prompts.mask.raster
    h4, w4 = height // 4, width // 4
    if mask is not None:
        m = np.asarray(mask)
        if m.shape != (height, width):
            raise ContractError(f"mask prompt {m.shape} does not match {(height, width)}")
        x = _const(m.reshape(1, 1, height, width), dt)
        x = ops.depthwise_separable_conv(x, store[PREFIX + "mask.dw1"], store[PREFIX + "mask.pw1"],
                                         store[PREFIX + "mask.pw1_b"], stride=2)
        x = ops.gelu(x)
        dense = ops.depthwise_separable_conv(x, store[PREFIX + "mask.dw2"], store[PREFIX + "mask.pw2"],
                                             store[PREFIX + "mask.pw2_b"], stride=2)
    else:
        dense = ops.broadcast_to(ops.reshape(emb["no_mask"], (1, c, 1, 1)), (1, c, h4, w4))
    return tokens, dense


# --- decoder ----------------------------------------------------------------

def attention(q_in, k_in, v_in, store, prefix, heads):
    """Multi-head attention on (B, L, C) sequences with output projection."""
    p = lambda n: store[f"{prefix}.{n}"]  # noqa: E731
    b, lq, c = q_in.shape
    lk = k_in.shape[1]
    d = c // heads

    def split(t, length):
        return ops.transpose(ops.reshape(t, (b, length, heads, d)), (0, 2, 1, 3))

    q = split(ops.linear(q_in, p("wq"), p("bq")), lq)
    k = split(ops.linear(k_in, p("wk"), p("bk")), lk)
    v = split(ops.linear(v_in, p("wv"), p("bv")), lk)
    scores = ops.scale(ops.matmul(q, ops.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(d))
    out = ops.matmul(ops.softmax(scores, axis=-1), v)
    out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, lq, c))
    return ops.linear(out, p("wo"), p("bo"))


def _ln(x, store, name):
    return ops.layer_norm(x, store[name + ".g"], store[name + ".b"])


def _finite(t, step):
    if not np.isfinite(t.data).all():
        raise NonFiniteError(f"IPTB step {step} produced non-finite activations")
    return t


def iptb_forward(tokens, dense, store: ParamStore, cfg: CodecConfig, block: int, reduction=None):
    """One image-prompt block on tokens (B, N, C) and dense map (B, C, h, w)."""
    r = cfg.reduction if reduction is None else reduction
    p = f"{PREFIX}iptb{block}"
    b, c, h, w = dense.shape
    if tokens.shape[0] != b or tokens.shape[2] != c:
        raise ContractError(f"iptb: tokens {tokens.shape} vs dense {dense.shape}")
    if h % r or w % r:
        raise ContractError(f"iptb: map {(h, w)} not divisible by reduction {r}")
    pe_mat = store.buffers[PREFIX + "pe_matrix"]
    dt = store.dtype
    img = ops.transpose(ops.reshape(dense, (b, c, h * w)), (0, 2, 1))  # (B, hw, C)
    img_pe = _const(grid_pe(h, w, pe_mat), dt)

    # (1) token self-attention
    t = _ln(tokens, store, f"{p}.ln1")
    tokens = _finite(ops.add(tokens, attention(t, t, t, store, f"{p}.self_attn", cfg.heads)), 1)

    # (2) tokens attend to the (reduced) image
    if r > 1:
        red = ops.conv2d(dense, store[f"{p}.sr.w"], store[f"{p}.sr.b"], stride=r)
        hr, wr = h // r, w // r
        kv = ops.transpose(ops.reshape(red, (b, c, hr * wr)), (0, 2, 1))
        kv = _ln(kv, store, f"{p}.sr_ln")
        kv_pe = _const(grid_pe(hr, wr, pe_mat), dt)
    else:
        kv, kv_pe = img, img_pe
    q = _ln(tokens, store, f"{p}.ln2")
    tokens = _finite(ops.add(tokens, attention(q, ops.add(kv, kv_pe), kv, store, f"{p}.t2i", cfg.heads)), 2)

    # (3) point-wise MLP on tokens
    t = _ln(tokens, store, f"{p}.ln3")
    hid = ops.gelu(ops.linear(t, store[f"{p}.mlp.w1"], store[f"{p}.mlp.b1"]))
    tokens = _finite(ops.add(tokens, ops.linear(hid, store[f"{p}.mlp.w2"], store[f"{p}.mlp.b2"])), 3)

    # (4) image attends to tokens
    qi = ops.add(_ln(img, store, f"{p}.ln4"), img_pe)
    img = _finite(ops.add(img, attention(qi, tokens, tokens, store, f"{p}.i2t", cfg.heads)), 4)

    dense = ops.reshape(ops.transpose(img, (0, 2, 1)), (b, c, h, w))
    return tokens, dense


def fuse_dense(image_embedding, dense, store: ParamStore) -> Tensor:
    """3x3 channel-preserving conv of ``image_embedding + dense``."""
    if image_embedding.shape != dense.shape:
        raise ContractError(f"fuse_dense: {image_embedding.shape} vs {dense.shape}")
    return ops.conv2d(ops.add(image_embedding, dense), store[PREFIX + "fuse.w"],
                      store[PREFIX + "fuse.b"], padding=1)


def prompt_decode(image_embedding, tokens, dense, store: ParamStore, cfg: CodecConfig) -> Tensor:
    """Fuse, run both blocks, return the final dense map as the output token."""
    d = fuse_dense(image_embedding, dense, store)
    for blk in range(N_BLOCKS):
        tokens, d = iptb_forward(tokens, d, store, cfg, blk)
    return d


def encode_batch(prompt_sets, height, width, store, cfg):
    """Encode a batch whose members share the sparse token count."""
    enc = [encode_prompts(ps, height, width, store, cfg) for ps in prompt_sets]
    counts = {t.shape[1] for t, _ in enc}
    if len(counts) != 1:
        raise ContractError(f"encode_batch needs equal token counts, got {sorted(counts)}")
    if len(enc) == 1:
        return enc[0]
    return ops.concat([t for t, _ in enc], axis=0), ops.concat([d for _, d in enc], axis=0)
