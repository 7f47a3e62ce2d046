"""Two-stage training (prompted, then prompt-free), AdamW and OA/F1/mIoU."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .backbone import LakeModel
from .errors import ContractError
from .numerics import ops
from .numerics.rng import make_rng
from .promptgen import COMBINATION_KEYS, MAX_POINTS, BoxPrompt, MaskPrompt, PointPrompt, PromptSet, prompt_set_from_record
from .raster_io import as_mask


@dataclass(frozen=True)
class TrainConfig:
    total_steps: int = 2000
    prompt_steps: int = 500
    batch_size: int = 16
    lr: float = 6e-5
    weight_decay: float = 0.01
    seed: int = 0
    prompt_combination: tuple = ("random_points",)
    point_count: int = 3
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        object.__setattr__(self, "prompt_combination", tuple(self.prompt_combination))
        object.__setattr__(self, "betas", tuple(self.betas))
        if not 0 <= self.prompt_steps <= self.total_steps:
            raise ContractError(f"need 0 <= prompt_steps <= total_steps, got "
                                f"{self.prompt_steps}/{self.total_steps}")
        if not 0 <= self.point_count <= MAX_POINTS:
            raise ContractError(f"point_count must be in 0..{MAX_POINTS}")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        bad = set(self.prompt_combination) - set(COMBINATION_KEYS)
        if bad:
            raise ContractError(f"unknown prompt kinds {sorted(bad)}")

    def to_dict(self):
        d = asdict(self)
        d["prompt_combination"] = list(self.prompt_combination)
        d["betas"] = list(self.betas)
        return d


def step_uses_prompts(step: int, config: TrainConfig) -> bool:
    return step < config.prompt_steps


# --- metrics ------------------------------------------------------------------

@dataclass
class Metrics:
    oa: float
    f1: float
    miou: float
    confusion: list  # [[TN, FP], [FN, TP]]

    def to_dict(self):
        return {"oa": self.oa, "f1": self.f1, "miou": self.miou, "confusion": self.confusion}


def metrics_from_confusion(conf) -> Metrics:
    (tn, fp), (fn, tp) = np.asarray(conf, dtype=np.int64).tolist()
    total = tn + fp + fn + tp
    oa = 100.0 * (tp + tn) / total if total else 100.0
    f1_den = 2 * tp + fp + fn
    f1 = 100.0 * 2 * tp / f1_den if f1_den else 100.0
    # a class absent from both prediction and ground truth scores IoU 1
    iou_fg = tp / (tp + fp + fn) if tp + fp + fn else 1.0
    iou_bg = tn / (tn + fp + fn) if tn + fp + fn else 1.0
    return Metrics(oa, f1, 100.0 * (iou_fg + iou_bg) / 2.0, [[tn, fp], [fn, tp]])


def confusion(pred, gt) -> np.ndarray:
    p, g = np.asarray(pred) != 0, np.asarray(gt) != 0
    if p.shape != g.shape:
        raise ContractError(f"prediction {p.shape} vs ground truth {g.shape}")
    tp = int(np.count_nonzero(p & g))
    fp = int(np.count_nonzero(p & ~g))
    fn = int(np.count_nonzero(~p & g))
    tn = int(p.size - tp - fp - fn)
    return np.array([[tn, fp], [fn, tp]], dtype=np.int64)


def compute_metrics(pred, gt) -> Metrics:
    return metrics_from_confusion(confusion(as_mask(pred), as_mask(gt)))


class ConfusionAccumulator:
    """Global confusion counts over many prediction/ground-truth pairs."""

    def __init__(self):
        self.counts = np.zeros((2, 2), dtype=np.int64)

    def update(self, pred, gt):
        self.counts += confusion(pred, gt)

    def metrics(self) -> Metrics:
        return metrics_from_confusion(self.counts)


# --- data ---------------------------------------------------------------------

def stack_scenes(scenes):
    images = np.stack([np.transpose(s.image, (2, 0, 1)) for s in scenes])
    masks = np.stack([s.mask for s in scenes]).astype(np.int64)
    return images, masks


def evaluate(model: LakeModel, scenes, batch_size: int = 32) -> Metrics:
    """Prompt-free inference; metrics over the global confusion matrix."""
    acc = ConfusionAccumulator()
    for lo in range(0, len(scenes), batch_size):
        chunk = scenes[lo:lo + batch_size]
        images, masks = stack_scenes(chunk)
        pred = model.predict(images)
        for p, g in zip(pred, masks):
            acc.update(p, g)
    return acc.metrics()


def flip_prompts(ps: PromptSet, width: int) -> PromptSet:
    """Mirror a prompt set horizontally."""
    out = PromptSet(flags=ps.flags)
    if ps.points is not None:
        out.points = PointPrompt(ps.points.kind, [(width - 1 - x, y) for x, y in ps.points.points])
    if ps.box is not None:
        b = ps.box
        out.box = BoxPrompt(width - 1 - b.x_max, b.y_min, width - 1 - b.x_min, b.y_max)
    if ps.mask is not None:
        out.mask = MaskPrompt(ps.mask.kind, np.ascontiguousarray(ps.mask.raster[:, ::-1]))
    return out


# --- optimizer ----------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay; parameters without a gradient are skipped."""

    def __init__(self, store, lr, weight_decay=0.01, betas=(0.9, 0.999), eps=1e-8):
        self.store, self.lr, self.wd = store, lr, weight_decay
        self.b1, self.b2 = betas
        self.eps = eps
        self.state: dict[str, list] = {}

    def step(self):
        for name, p in self.store.items():
            g = p.grad
            if g is None:
                continue
            st = self.state.get(name)
            if st is None:
                st = self.state[name] = [0, np.zeros_like(p.data), np.zeros_like(p.data)]
            st[0] += 1
            t, m, v = st
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            mhat = m / (1.0 - self.b1 ** t)
            vhat = v / (1.0 - self.b2 ** t)
            p.data *= 1.0 - self.lr * self.wd
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)


# --- training -----------------------------------------------------------------

@dataclass
class TrainResult:
    model: LakeModel
    log: list = field(default_factory=list)


def _batches(n, batch_size, seed):
    epoch, pos, perm = 0, 0, make_rng("shuffle", seed, 0).permutation(n)
    while True:
        out = []
        while len(out) < batch_size:
            if pos == n:
                epoch += 1
                pos, perm = 0, make_rng("shuffle", seed, epoch).permutation(n)
            take = min(batch_size - len(out), n - pos)
            out.extend(perm[pos:pos + take].tolist())
            pos += take
        yield np.array(out)


def train_two_stage(model: LakeModel, scenes, manifest: dict | None, config: TrainConfig,
                    log_path=None, progress=None) -> TrainResult:
    """Prompted supervision for ``prompt_steps`` steps, prompt-free afterwards.

    Each log record holds ``step``, ``mode``, ``loss``, ``lr`` and the L2 norm of
    the gradient that reached prompt parameters in that step.
    """
    scenes = list(scenes)
    if not scenes:
        raise ContractError("training needs at least one scene")
    images, masks = stack_scenes(scenes)
    images = images.astype(model.dtype)
    width = images.shape[3]
    records = {}
    base_dir = None
    if manifest is not None:
        records = {r["id"]: r for r in manifest["records"]}
        base_dir = manifest.get("_dir")
    if config.prompt_steps > 0:
        if manifest is None:
            raise ContractError("a prompt manifest is required when prompt_steps > 0")
        for s in scenes:
            if s.id not in records:
                raise ContractError(f"missing prompt record for scene {s.id}")

    store = model.params
    prompt_names = store.names("prompt.")
    opt = AdamW(store, config.lr, config.weight_decay, config.betas, config.eps)
    mask_cache: dict = {}
    prompt_cache: dict = {}
    log = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        batches = _batches(len(scenes), config.batch_size, config.seed)
        for step in range(config.total_steps):
            idx = next(batches)
            x, y = images[idx], masks[idx]
            flips = np.zeros(len(idx), dtype=bool)
            if config.augment:
                flips = make_rng("flip", config.seed, step).random(len(idx)) < 0.5
                x = np.where(flips[:, None, None, None], x[..., ::-1], x)
                y = np.where(flips[:, None, None], y[..., ::-1], y)
            prompted = step_uses_prompts(step, config)
            store.zero_grad()
            if prompted:
                sets = []
                for i, fl in zip(idx, flips):
                    sid = scenes[i].id
                    if sid not in prompt_cache:
                        prompt_cache[sid] = prompt_set_from_record(
                            records[sid], config.prompt_combination, config.point_count, base_dir, mask_cache)
                    ps = prompt_cache[sid]
                    sets.append(flip_prompts(ps, width) if fl else ps)
                logits = model.forward_prompted(x, sets)
            else:
                logits = model.forward_prompt_free(x)
            loss = ops.cross_entropy(logits, y)
            loss.backward()
            pg = sum(float(np.sum(np.square(store[n].grad, dtype=np.float64)))
                     for n in prompt_names if store[n].grad is not None)
            opt.step()
            rec = {"step": step, "mode": "prompted" if prompted else "prompt_free",
                   "loss": float(loss.data), "lr": config.lr, "prompt_grad_norm": float(np.sqrt(pg))}
            log.append(rec)
            if log_fh:
                log_fh.write(json.dumps(rec) + "\n")
            if progress:
                progress(rec)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(model, log)


def save_report(metrics: Metrics, path) -> None:
    Path(path).write_text(json.dumps(metrics.to_dict()) + "\n", encoding="utf-8")
