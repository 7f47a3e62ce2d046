"""Prompt benchmark synthesis from ground-truth masks.

Five prompt variants per scene: random points, centre points, one global box,
an unfilled mask (sparse seeds grown by dilate + close) and its hole-filled
counterpart. Everything is a deterministic function of the mask, the master
seed and the parameters.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .clustering import DbscanParams, bounding_extremes, dbscan
from .errors import ContractError, FormatError
from .morphology import DEFAULT_SE, StructuringElement, close, dilate, fill_contours, trace_contours
from .numerics.rng import derive_seed, make_rng
from .raster_io import as_mask, load_mask, save_mask

MAX_POINTS = 9
MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "lakeprompt-benchmark"
VARIANTS = ("points_random", "points_center", "box", "mask_unfilled", "mask_filled")
POINT_KINDS = ("random", "center")


@dataclass
class PointPrompt:
    kind: str
    points: list  # (x, y)
    flags: tuple = ()

    def __post_init__(self):
        if self.kind not in POINT_KINDS:
            raise ContractError(f"unknown point kind {self.kind!r}")
        if len(self.points) > MAX_POINTS:
            raise ContractError(f"{len(self.points)} points exceeds the maximum of {MAX_POINTS}")


@dataclass(frozen=True)
class BoxPrompt:
    x_min: int
    y_min: int
    x_max: int
    y_max: int

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ContractError(f"degenerate box {self}")

    def as_list(self):
        return [self.x_min, self.y_min, self.x_max, self.y_max]


@dataclass
class MaskPrompt:
    kind: str  # "filled" | "unfilled"
    raster: np.ndarray
    seed_count: int = 0


@dataclass
class PromptSet:
    points: PointPrompt | None = None
    box: BoxPrompt | None = None
    mask: MaskPrompt | None = None
    flags: tuple = ()


def _union_pixels(clusters):
    pix = [p for c in clusters for p in c.pixels]
    if not pix:
        return np.zeros((0, 2), dtype=np.int64)
    arr = np.asarray(pix, dtype=np.int64)
    order = np.lexsort((arr[:, 0], arr[:, 1]))  # row-major
    return arr[order]


def _check_k(k):
    if not 1 <= k <= MAX_POINTS:
        raise ContractError(f"k must be in 1..{MAX_POINTS}, got {k}")


def gen_random_points(mask, clusters, k: int, rng_seed: int) -> PointPrompt:
    """``k`` distinct clustered pixels, uniformly without replacement."""
    _check_k(k)
    if not clusters:
        raise ContractError("gen_random_points needs at least one cluster")
    pix = _union_pixels(clusters)
    rng = make_rng("random_points", rng_seed)
    n = min(k, len(pix))
    pick = rng.choice(len(pix), size=n, replace=False)
    flags = ("few_pixels",) if n < k else ()
    return PointPrompt("random", [(int(x), int(y)) for x, y in pix[pick]], flags)


def _nearest(pix, x, y):
    d = (pix[:, 0] - x) ** 2 + (pix[:, 1] - y) ** 2
    return pix[int(np.argmin(d))]  # argmin keeps the first (row-major) tie


def gen_center_points(mask, clusters, k: int, rng_seed: int, shift: int = 2) -> PointPrompt:
    """The ``k`` clustered pixels nearest the centroid, each nudged by up to ``shift`` px.

    A nudged point that lands on background snaps to the nearest clustered pixel.
    """
    _check_k(k)
    if not clusters:
        raise ContractError("gen_center_points needs at least one cluster")
    m = as_mask(mask)
    h, w = m.shape
    pix = _union_pixels(clusters)
    cx, cy = pix.mean(axis=0)
    dist = (pix[:, 0] - cx) ** 2 + (pix[:, 1] - cy) ** 2
    nearest = pix[np.argsort(dist, kind="stable")[:k]]
    rng = make_rng("center_points", rng_seed)
    offs = rng.integers(-shift, shift + 1, size=nearest.shape) if shift > 0 else np.zeros_like(nearest)
    points = []
    for (x, y), (dx, dy) in zip(nearest, offs):
        nx = min(max(int(x + dx), 0), w - 1)
        ny = min(max(int(y + dy), 0), h - 1)
        if m[ny, nx] == 0:
            nx, ny = (int(v) for v in _nearest(pix, nx, ny))
        points.append((nx, ny))
    flags = ("few_pixels",) if len(points) < k else ()
    return PointPrompt("center", points, flags)


def gen_box(mask, clusters) -> BoxPrompt | None:
    """One box spanning every clustered pixel; ``None`` without clusters."""
    if not clusters:
        return None
    return BoxPrompt(*bounding_extremes([p for c in clusters for p in c.pixels]))


def mask_seed_count(fg_count: int, ratio: float = 0.008) -> int:
    """``ceil(ratio * fg_count)``, at least 1, in exact arithmetic."""
    return max(1, math.ceil(Fraction(str(ratio)) * fg_count))


def gen_unfilled_mask(gt, rng_seed: int, *, ratio: float = 0.008, shift: int = 2,
                      se: StructuringElement = DEFAULT_SE, iterations: int = 2) -> MaskPrompt:
    """Sparse shifted seeds from the foreground, grown by dilation then closing."""
    m = as_mask(gt)
    h, w = m.shape
    ys, xs = np.nonzero(m)
    if ys.size == 0:
        raise ContractError("gen_unfilled_mask needs at least one foreground pixel")
    n = mask_seed_count(ys.size, ratio)
    rng = make_rng("unfilled_mask", rng_seed)
    pick = rng.choice(ys.size, size=n, replace=False)
    offs = rng.integers(-shift, shift + 1, size=(n, 2)) if shift > 0 else np.zeros((n, 2), int)
    seeds = np.zeros_like(m)
    px = np.clip(xs[pick] + offs[:, 0], 0, w - 1)
    py = np.clip(ys[pick] + offs[:, 1], 0, h - 1)
    seeds[py, px] = 1
    raster = close(dilate(seeds, se, iterations), se)
    return MaskPrompt("unfilled", raster, seed_count=n)


def gen_filled_mask(unfilled: MaskPrompt) -> MaskPrompt:
    if unfilled.kind != "unfilled":
        raise ContractError(f"expected an unfilled mask prompt, got {unfilled.kind!r}")
    h, w = unfilled.raster.shape
    filled = fill_contours(trace_contours(unfilled.raster), w, h)
    return MaskPrompt("filled", filled, seed_count=unfilled.seed_count)


@dataclass
class PromptRasters:
    points: np.ndarray
    box: np.ndarray
    mask: np.ndarray
    absent: dict = field(default_factory=dict)


def box_outline(box: BoxPrompt, width: int, height: int) -> np.ndarray:
    r = np.zeros((height, width), dtype=np.uint8)
    r[box.y_min, box.x_min:box.x_max + 1] = 1
    r[box.y_max, box.x_min:box.x_max + 1] = 1
    r[box.y_min:box.y_max + 1, box.x_min] = 1
    r[box.y_min:box.y_max + 1, box.x_max] = 1
    return r


def rasterize(prompts: PromptSet, width: int, height: int) -> PromptRasters:
    """Single-channel point, box-outline and mask rasters; absent prompts stay zero."""
    pp = np.zeros((height, width), dtype=np.uint8)
    pb = np.zeros((height, width), dtype=np.uint8)
    pm = np.zeros((height, width), dtype=np.uint8)
    if prompts.points is not None:
        for x, y in prompts.points.points:
            if not (0 <= x < width and 0 <= y < height):
                raise ContractError(f"point {(x, y)} outside {width}x{height}")
            pp[y, x] = 1
    if prompts.box is not None:
        b = prompts.box
        if not (b.x_max < width and b.y_max < height and b.x_min >= 0 and b.y_min >= 0):
            raise ContractError(f"box {b} outside {width}x{height}")
        pb = box_outline(b, width, height)
    if prompts.mask is not None:
        pm = as_mask(prompts.mask.raster).copy()
        if pm.shape != (height, width):
            raise ContractError(f"mask prompt {pm.shape} does not match {(height, width)}")
    absent = {"points": prompts.points is None, "box": prompts.box is None,
              "mask": prompts.mask is None}
    return PromptRasters(pp, pb, pm, absent)


# --- benchmark assembly ---------------------------------------------------

def scene_prompts(mask, seed: int, params: DbscanParams = DbscanParams(), k: int = MAX_POINTS,
                  point_kinds=POINT_KINDS, shift: int = 2, ratio: float = 0.008) -> dict:
    """All five variants for one mask; ``None`` marks an absent or disabled variant."""
    m = as_mask(mask)
    out = dict.fromkeys(VARIANTS)
    flags = []
    if not m.any():
        return {"prompts": out, "flags": ["empty_mask"]}
    clusters = dbscan(m, params)
    if clusters:
        if "random" in point_kinds:
            out["points_random"] = gen_random_points(m, clusters, k, derive_seed(seed, "random"))
            flags += [f"points_random:{f}" for f in out["points_random"].flags]
        if "center" in point_kinds:
            out["points_center"] = gen_center_points(m, clusters, k, derive_seed(seed, "center"), shift)
            flags += [f"points_center:{f}" for f in out["points_center"].flags]
        out["box"] = gen_box(m, clusters)
    else:
        flags.append("no_clusters")
    for kind in POINT_KINDS:
        if kind not in point_kinds:
            flags.append(f"disabled:points_{kind}")
    unfilled = gen_unfilled_mask(m, derive_seed(seed, "mask"), ratio=ratio, shift=shift)
    out["mask_unfilled"] = unfilled
    out["mask_filled"] = gen_filled_mask(unfilled)
    return {"prompts": out, "flags": flags}


def variant_raster(variant: str, prompt, width: int, height: int) -> np.ndarray:
    if prompt is None:
        return np.zeros((height, width), dtype=np.uint8)
    if variant.startswith("points"):
        return rasterize(PromptSet(points=prompt), width, height).points
    if variant == "box":
        return box_outline(prompt, width, height)
    return as_mask(prompt.raster)


def _scene_job(args):
    scene_id, mask, master_seed, params, k, point_kinds, shift, ratio = args
    seed = derive_seed(master_seed, scene_id)
    res = scene_prompts(mask, seed, params, k, point_kinds, shift, ratio)
    return scene_id, seed, res


def build_benchmark(scenes, out_dir, master_seed: int = 0, params: DbscanParams = DbscanParams(),
                    k: int = MAX_POINTS, point_kinds=POINT_KINDS, shift: int = 2,
                    ratio: float = 0.008, jobs: int = 1) -> dict:
    """Generate every prompt variant for ``scenes``; write PNGs and ``manifest.json``."""
    scenes = list(scenes)
    if not scenes:
        raise ContractError("build_benchmark needs at least one scene")
    _check_k(k)
    point_kinds = tuple(kd for kd in POINT_KINDS if kd in point_kinds)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs_args = [(s.id, s.mask, master_seed, params, k, point_kinds, shift, ratio) for s in scenes]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_scene_job, jobs_args))
    else:
        results = [_scene_job(a) for a in jobs_args]

    records = []
    for scene, (sid, seed, res) in zip(scenes, results):
        h, w = scene.mask.shape
        pr = res["prompts"]
        rasters = {}
        try:
            for variant in VARIANTS:
                if variant.startswith("points") and variant[len("points_"):] not in point_kinds:
                    continue
                name = f"{sid}.{variant}.png"
                save_mask(variant_raster(variant, pr[variant], w, h), out_dir / name)
                rasters[variant] = name
        except OSError as exc:
            raise OSError(f"scene {sid}: {exc}") from exc
        records.append({
            "id": sid,
            "seed": seed,
            "size": [w, h],
            "dbscan": {"eps": params.eps, "min_pts": params.min_pts},
            "points_random": _pts(pr["points_random"]),
            "points_center": _pts(pr["points_center"]),
            "box": pr["box"].as_list() if pr["box"] is not None else None,
            "mask_unfilled": rasters["mask_unfilled"] if pr["mask_unfilled"] is not None else None,
            "mask_filled": rasters["mask_filled"] if pr["mask_filled"] is not None else None,
            "mask_seed_count": pr["mask_unfilled"].seed_count if pr["mask_unfilled"] is not None else 0,
            "rasters": rasters,
            "flags": res["flags"],
        })
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": 1,
        "master_seed": master_seed,
        "dbscan": {"eps": params.eps, "min_pts": params.min_pts},
        "points": k,
        "point_kinds": list(point_kinds),
        "shift": shift,
        "mask_ratio": ratio,
        "records": records,
    }
    (out_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return manifest


def _pts(p):
    return None if p is None else [[int(x), int(y)] for x, y in p.points]


def load_manifest(path) -> dict:
    """Read a manifest from a file or a benchmark directory; adds ``_dir``."""
    p = Path(path)
    if p.is_dir():
        p = p / MANIFEST_NAME
    try:
        data = json.loads(p.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"{p}: cannot read manifest ({exc})") from exc
    if data.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{p}: not a prompt benchmark manifest")
    data["_dir"] = str(p.parent)
    return data


COMBINATION_KEYS = ("center_points", "random_points", "box", "filled_mask", "unfilled_mask")


def prompt_set_from_record(record: dict, combination, k: int, base_dir=None,
                           mask_cache: dict | None = None) -> PromptSet:
    """Assemble the prompt set a training step sees from one manifest record.

    ``combination`` is a subset of ``COMBINATION_KEYS``; at most one point kind
    and one mask kind may be chosen. ``k`` truncates the stored point list.
    """
    combo = set(combination)
    unknown = combo - set(COMBINATION_KEYS)
    if unknown:
        raise ContractError(f"unknown prompt kinds {sorted(unknown)}")
    if {"center_points", "random_points"} <= combo or {"filled_mask", "unfilled_mask"} <= combo:
        raise ContractError("choose at most one point kind and one mask kind")
    ps = PromptSet(flags=tuple(record.get("flags", ())))
    for key, field_name, kind in (("random_points", "points_random", "random"),
                                  ("center_points", "points_center", "center")):
        if key in combo and k > 0 and record.get(field_name):
            ps.points = PointPrompt(kind, [tuple(p) for p in record[field_name][:k]])
    if "box" in combo and record.get("box") is not None:
        ps.box = BoxPrompt(*record["box"])
    for key, field_name, kind in (("filled_mask", "mask_filled", "filled"),
                                  ("unfilled_mask", "mask_unfilled", "unfilled")):
        if key in combo and record.get(field_name):
            path = Path(base_dir or ".") / record[field_name]
            cache_key = str(path)
            if mask_cache is not None and cache_key in mask_cache:
                raster = mask_cache[cache_key]
            else:
                raster = load_mask(path)
                if mask_cache is not None:
                    mask_cache[cache_key] = raster
            ps.mask = MaskPrompt(kind, raster)
    return ps
