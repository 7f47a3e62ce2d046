"""Toy segmentation backbone and the model wrapper exposing both forward modes.

Encoder: three stride-2 3x3 conv + GELU stages (H/2, H/4, H/8); the last stage
is bilinearly upsampled x2 to give the image embedding at H/4. Decoder:
concat with the H/4 skip, conv, upsample, concat with the H/2 skip, conv,
upsample to full size, 3x3 conv to two-class logits.

Prompt-free mode feeds the image embedding straight into the decoder, so it
touches no ``prompt.`` parameter.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import prompt_codec as pc
from .errors import ContractError
from .numerics import ops
from .numerics.params import ParamStore
from .numerics.rng import make_rng
from .numerics.tensor import Tensor

PREFIX = "backbone."


@dataclass(frozen=True)
class ModelConfig:
    channels: int = 32
    multipliers: tuple = (0.5, 1.0, 1.0)
    heads: int = 2
    size: int = 32
    reduction: int = 2
    mlp_ratio: int = 2
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "multipliers", tuple(self.multipliers))
        if self.size % 8:
            raise ContractError(f"input size must be divisible by 8, got {self.size}")
        if len(self.multipliers) != 3:
            raise ContractError("need three stage multipliers")
        self.codec  # validates channel/head arithmetic

    @property
    def stage_channels(self):
        return tuple(max(1, int(round(self.channels * m))) for m in self.multipliers)

    @property
    def codec(self) -> pc.CodecConfig:
        return pc.CodecConfig(channels=self.channels, heads=self.heads, reduction=self.reduction,
                              mlp_ratio=self.mlp_ratio, pe_seed=self.seed)

    def to_dict(self):
        d = asdict(self)
        d["multipliers"] = list(self.multipliers)
        return d


def backbone_param_count(cfg: ModelConfig) -> int:
    """Closed-form number of learnable backbone scalars."""
    c1, c2, c3 = cfg.stage_channels
    c = cfg.channels
    enc = (27 * c1 + c1) + (9 * c1 * c2 + c2) + (9 * c2 * c3 + c3)
    dec = (9 * (c + c2) * c + c) + (9 * (c + c1) * c1 + c1) + (9 * c1 * 2 + 2)
    return enc + dec


def _he(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def init_backbone(store: ParamStore, cfg: ModelConfig, rng) -> None:
    c1, c2, c3 = cfg.stage_channels
    c = cfg.channels
    if c3 != c:
        raise ContractError("last stage must have `channels` outputs")
    layers = {
        "enc1": (c1, 3), "enc2": (c2, c1), "enc3": (c3, c2),
        "dec1": (c, c + c2), "dec2": (c1, c + c1),
    }
    for name, (co, ci) in layers.items():
        store.add(f"{PREFIX}{name}.w", _he(rng, (co, ci, 3, 3)))
        store.add(f"{PREFIX}{name}.b", np.zeros(co))
    # small head so the initial loss sits near ln 2
    store.add(f"{PREFIX}head.w", rng.normal(0.0, 1e-3, (2, c1, 3, 3)))
    store.add(f"{PREFIX}head.b", np.zeros(2))


class LakeModel:
    """Backbone plus prompt codec sharing one ``ParamStore``."""

    def __init__(self, config: ModelConfig = ModelConfig(), store: ParamStore | None = None):
        self.config = config
        if store is None:
            store = ParamStore(np.dtype(config.dtype))
            init_backbone(store, config, make_rng("init.backbone", config.seed))
            pc.init_codec(store, config.codec, make_rng("init.prompt", config.seed))
        self.params = store

    @property
    def dtype(self):
        return self.params.dtype

    def _conv(self, x, name, stride=1):
        p = self.params
        return ops.conv2d(x, p[f"{PREFIX}{name}.w"], p[f"{PREFIX}{name}.b"], stride=stride, padding=1)

    def _images(self, images):
        x = np.asarray(images.data if isinstance(images, Tensor) else images, dtype=self.dtype)
        if x.ndim == 3:
            x = x[None]
        s = self.config.size
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] % 8 or x.shape[3] % 8:
            raise ContractError(f"images must be (B, 3, H, W) with H, W divisible by 8; got {x.shape}")
        if x.shape[2:] != (s, s):
            raise ContractError(f"model configured for {s}x{s}, got {x.shape[2:]}")
        return Tensor(x)

    def vie_forward(self, images):
        """Returns ``(skip_h2, skip_h4, F)``; F is the x2-upsampled H/8 stage."""
        x = self._images(images)
        s1 = ops.gelu(self._conv(x, "enc1", 2))
        s2 = ops.gelu(self._conv(s1, "enc2", 2))
        s3 = ops.gelu(self._conv(s2, "enc3", 2))
        return s1, s2, ops.bilinear_upsample(s3, 2)

    def vid_forward(self, embedding, skips):
        s1, s2 = skips
        if embedding.shape[2:] != s2.shape[2:]:
            raise ContractError(f"embedding {embedding.shape} does not match skip {s2.shape}")
        x = ops.gelu(self._conv(ops.concat([embedding, s2], axis=1), "dec1"))
        x = ops.bilinear_upsample(x, 2)
        x = ops.gelu(self._conv(ops.concat([x, s1], axis=1), "dec2"))
        x = ops.bilinear_upsample(x, 2)
        return self._conv(x, "head")

    def forward_prompt_free(self, images) -> Tensor:
        s1, s2, f = self.vie_forward(images)
        return self.vid_forward(f, (s1, s2))

    def forward_prompted(self, images, prompt_sets) -> Tensor:
        s1, s2, f = self.vie_forward(images)
        if len(prompt_sets) != f.shape[0]:
            raise ContractError(f"{len(prompt_sets)} prompt sets for a batch of {f.shape[0]}")
        e = self.decode_prompts(f, prompt_sets)
        return self.vid_forward(e, (s1, s2))

    def decode_prompts(self, f, prompt_sets) -> Tensor:
        """Output token for every batch member, grouping members by token count."""
        size = self.config.size
        cfg = self.config.codec
        groups: dict[int, list[int]] = {}
        for i, ps in enumerate(prompt_sets):
            n_pts = 0 if ps is None or ps.points is None else len(ps.points.points)
            has_box = ps is not None and ps.box is not None
            groups.setdefault(pc.sparse_token_count(n_pts, has_box), []).append(i)
        if len(groups) == 1:
            tokens, dense = pc.encode_batch(prompt_sets, size, size, self.params, cfg)
            return pc.prompt_decode(f, tokens, dense, self.params, cfg)
        outs, order = [], []
        for idx in groups.values():
            tokens, dense = pc.encode_batch([prompt_sets[i] for i in idx], size, size, self.params, cfg)
            sel = np.array(idx)
            outs.append(pc.prompt_decode(ops.getitem(f, sel), tokens, dense, self.params, cfg))
            order.extend(idx)
        inverse = np.argsort(np.array(order))
        return ops.getitem(ops.concat(outs, axis=0), inverse)

    def count_params(self, include_prompt: bool = False) -> int:
        n = self.params.count(PREFIX)
        return n + pc.count_prompt_params(self.params) if include_prompt else n

    def predict(self, images) -> np.ndarray:
        """Prompt-free argmax masks, (B, H, W) uint8."""
        logits = self.forward_prompt_free(images)
        return np.argmax(logits.data, axis=1).astype(np.uint8)
