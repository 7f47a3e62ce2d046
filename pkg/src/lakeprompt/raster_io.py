"""Mask and image I/O, overlay rendering and the synthetic lake generator.

A binary mask is a ``uint8`` array of shape ``(H, W)`` with values in {0, 1};
pixel ``(x, y)`` lives at ``mask[y, x]``.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError, FormatError
from .numerics.rng import make_rng

PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"


def as_mask(arr) -> np.ndarray:
    """Validate and return ``arr`` as a 2-D uint8 {0,1} mask."""
    m = np.asarray(arr)
    if m.ndim != 2:
        raise ContractError(f"mask must be 2-D, got shape {m.shape}")
    if m.size and not np.isin(m, (0, 1)).all():
        raise ContractError("mask values must be 0 or 1")
    return m.astype(np.uint8, copy=False)


def load_mask(path) -> np.ndarray:
    """Read a mask from an 8-bit grayscale PNG or the ``W H`` text grid."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(PNG_SIGNATURE))
    if head == PNG_SIGNATURE:
        return _load_png_mask(path)
    return _load_text_mask(path)


def _load_png_mask(path):
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I;16L", "I"):
            raise FormatError(f"{path}: unsupported bit depth (mode {im.mode}); expected 8-bit")
        if im.mode == "1":
            raise FormatError(f"{path}: unsupported bit depth 1; expected 8-bit")
        if im.mode != "L":
            raise FormatError(f"{path}: expected single-channel grayscale, got mode {im.mode} "
                              f"with {len(im.getbands())} channels")
        arr = np.asarray(im, dtype=np.uint8)
    return (arr > 127).astype(np.uint8)


def _load_text_mask(path):
    try:
        lines = Path(path).read_text(encoding="ascii").split("\n")
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: neither PNG nor text grid") from exc
    try:
        w, h = (int(v) for v in lines[0].split())
    except ValueError as exc:
        raise FormatError(f"{path}: header must be 'W H', got {lines[0]!r}") from exc
    rows = lines[1:1 + h]
    if len(rows) != h or any(len(r) != w for r in rows):
        raise FormatError(f"{path}: expected {h} rows of width {w}")
    if any(set(r) - {"0", "1"} for r in rows):
        raise FormatError(f"{path}: grid characters must be 0 or 1")
    if h == 0:
        return np.zeros((0, w), dtype=np.uint8)
    return np.array([[c == "1" for c in r] for r in rows], dtype=np.uint8).reshape(h, w)


def save_mask(mask, path) -> None:
    """Write ``mask`` as PNG (0/255), or as a text grid when ``path`` ends in ``.txt``."""
    m = as_mask(mask)
    path = Path(path)
    try:
        if path.suffix == ".txt":
            h, w = m.shape
            body = "".join("".join("1" if v else "0" for v in row) + "\n" for row in m)
            path.write_text(f"{w} {h}\n{body}", encoding="ascii")
        else:
            _write_png(m * 255, path, "L")
    except OSError as exc:
        raise OSError(f"cannot write mask to {path}: {exc}") from exc


def _write_png(arr, path, mode):
    # pinned encoder settings keep output byte-identical across runs
    Image.fromarray(np.ascontiguousarray(arr, dtype=np.uint8), mode).save(
        path, format="PNG", optimize=False, compress_level=6)


def load_image(path) -> np.ndarray:
    """Read an 8-bit RGB PNG into ``(H, W, 3)`` floats in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def save_image(image, path) -> None:
    img = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    _write_png(np.rint(img * 255.0), path, "RGB")


@dataclass
class Scene:
    """One sample: RGB image in [0, 1] and its ground-truth mask."""
    image: np.ndarray
    mask: np.ndarray
    id: str

    def __post_init__(self):
        self.mask = as_mask(self.mask)
        if self.image.shape != self.mask.shape + (3,):
            raise ContractError(f"scene {self.id}: image {self.image.shape} does not match "
                                f"mask {self.mask.shape}")


@dataclass(frozen=True)
class SynthConfig:
    count: int = 16
    size: int = 32
    seed: int = 0
    blob_count_range: tuple = (1, 3)
    noise_std: float = 0.08

    def __post_init__(self):
        lo, hi = self.blob_count_range
        if self.count < 0:
            raise ContractError("count must be >= 0")
        if self.size < 16:
            raise ContractError("size must be >= 16")
        if not 1 <= lo <= hi:
            raise ContractError(f"bad blob_count_range {self.blob_count_range}")
        if self.noise_std < 0:
            raise ContractError("noise_std must be >= 0")


_WATER = np.array([0.12, 0.28, 0.45])
_LAND = np.array([0.46, 0.42, 0.30])


def _ellipse(rng, size, yy, xx):
    cy, cx = rng.uniform(0, size, 2)
    a, b = rng.uniform(0.08 * size, 0.3 * size, 2)
    t = rng.uniform(0, np.pi)
    dy, dx = yy - cy, xx - cx
    u = (dx * np.cos(t) + dy * np.sin(t)) / a
    v = (-dx * np.sin(t) + dy * np.cos(t)) / b
    return u * u + v * v <= 1.0


def _walk(rng, size, yy, xx):
    n = int(rng.integers(size // 2, 2 * size))
    steps = rng.integers(-1, 2, size=(n, 2))
    pos = np.cumsum(steps, axis=0) + rng.uniform(0.2 * size, 0.8 * size, 2)
    pos = np.clip(pos, 0, size - 1)
    r = rng.uniform(1.0, 0.1 * size + 1.0)
    out = np.zeros(yy.shape, dtype=bool)
    for py, px in pos:
        out |= (yy - py) ** 2 + (xx - px) ** 2 <= r * r
    return out


def _synth_mask(rng, cfg):
    size = cfg.size
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    lo, hi = cfg.blob_count_range
    for _ in range(32):
        mask = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(lo, hi + 1))):
            draw = _ellipse if rng.random() < 0.5 else _walk
            mask |= draw(rng, size, yy, xx)
        frac = mask.mean()
        if 0 < frac < 0.9:
            return mask.astype(np.uint8)
    # fallback after repeated rejections: a centred disc
    c = (size - 1) / 2.0
    return ((yy - c) ** 2 + (xx - c) ** 2 <= (size / 4.0) ** 2).astype(np.uint8)


def gen_synthetic_dataset(cfg: SynthConfig) -> list[Scene]:
    """Lake-like scenes: union of ellipse/random-walk blobs plus noisy colour.

    Scene ``i`` draws from its own stream keyed by ``(cfg.seed, i)``, so the
    result is a pure function of ``cfg``.
    """
    scenes = []
    for i in range(cfg.count):
        rng = make_rng("synth", cfg.seed, i)
        mask = _synth_mask(rng, cfg)
        jitter = rng.uniform(-0.05, 0.05, 3)
        base = np.where(mask[..., None] != 0, _WATER, _LAND) + jitter
        noise = rng.normal(0.0, cfg.noise_std, base.shape) if cfg.noise_std > 0 else 0.0
        image = np.clip(base + noise, 0.0, 1.0)
        scenes.append(Scene(image=image, mask=mask, id=f"scene_{i:05d}"))
    return scenes


def save_scene(scene: Scene, directory) -> tuple[Path, Path]:
    d = Path(directory)
    img_path, mask_path = d / f"{scene.id}.img.png", d / f"{scene.id}.mask.png"
    save_image(scene.image, img_path)
    save_mask(scene.mask, mask_path)
    return img_path, mask_path


def load_scene_dir(directory) -> list[Scene]:
    """Pair every ``<id>.img.png`` with ``<id>.mask.png``; sorted by id."""
    d = Path(directory)
    if not d.is_dir():
        raise FormatError(f"{d}: not a directory")
    scenes = []
    for img_path in sorted(d.glob("*.img.png")):
        sid = img_path.name[: -len(".img.png")]
        mask_path = d / f"{sid}.mask.png"
        if not mask_path.exists():
            raise FormatError(f"{img_path}: missing paired mask {mask_path.name}")
        scenes.append(Scene(image=load_image(img_path), mask=load_mask(mask_path), id=sid))
    return scenes


def boundary_pixels(mask) -> np.ndarray:
    """Foreground pixels with a background 4-neighbour or on the image edge."""
    m = as_mask(mask) != 0
    padded = np.pad(m, 1, constant_values=False)
    interior = padded[:-2, 1:-1] & padded[2:, 1:-1] & padded[1:-1, :-2] & padded[1:-1, 2:]
    return (m & ~interior).astype(np.uint8)


GT_TINT = np.array([0.1, 0.4, 1.0])
MASK_PROMPT_COLOR = np.array([0.0, 1.0, 1.0])
PRED_COLOR = np.array([1.0, 0.0, 0.0])
BOX_COLOR = np.array([1.0, 0.0, 1.0])
POINT_COLOR = np.array([1.0, 1.0, 0.0])
POINT_RADIUS = 2


def render_overlay(scene: Scene, prompts=None, prediction=None) -> np.ndarray:
    """Draw ground truth, prompts and prediction boundary over the scene image.

    Returns a new ``(H, W, 3)`` float image; inputs are left untouched.
    """
    h, w = scene.mask.shape
    out = np.array(scene.image, dtype=np.float64, copy=True)
    gt = scene.mask != 0
    out[gt] = 0.6 * out[gt] + 0.4 * GT_TINT

    if prompts is not None and prompts.mask is not None:
        pm = as_mask(prompts.mask.raster)
        if pm.shape != (h, w):
            raise ContractError(f"mask prompt {pm.shape} does not match scene {(h, w)}")
        sel = pm != 0
        out[sel] = 0.5 * out[sel] + 0.5 * MASK_PROMPT_COLOR

    if prediction is not None:
        pred = as_mask(prediction)
        if pred.shape != (h, w):
            raise ContractError(f"prediction {pred.shape} does not match scene {(h, w)}")
        out[boundary_pixels(pred) != 0] = PRED_COLOR

    if prompts is not None and prompts.box is not None:
        b = prompts.box
        if not (0 <= b.x_min <= b.x_max < w and 0 <= b.y_min <= b.y_max < h):
            raise ContractError(f"box {b} outside {w}x{h}")
        out[b.y_min, b.x_min:b.x_max + 1] = BOX_COLOR
        out[b.y_max, b.x_min:b.x_max + 1] = BOX_COLOR
        out[b.y_min:b.y_max + 1, b.x_min] = BOX_COLOR
        out[b.y_min:b.y_max + 1, b.x_max] = BOX_COLOR

    if prompts is not None and prompts.points is not None:
        yy, xx = np.mgrid[0:h, 0:w]
        for px, py in prompts.points.points:
            if not (0 <= px < w and 0 <= py < h):
                raise ContractError(f"point {(px, py)} outside {w}x{h}")
            disc = (xx - px) ** 2 + (yy - py) ** 2 <= POINT_RADIUS ** 2
            out[disc] = POINT_COLOR
    return out
