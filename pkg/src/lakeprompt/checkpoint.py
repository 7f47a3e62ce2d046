"""JSON parameter checkpoints: versioned header plus name -> shape + row-major values."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .backbone import LakeModel, ModelConfig
from .errors import ContractError, FormatError

CHECKPOINT_FORMAT = "lakeprompt-checkpoint"
CHECKPOINT_VERSION = 1


def save_checkpoint(model: LakeModel, path, extra: dict | None = None) -> None:
    params = {}
    for name, arr in model.params.state().items():
        params[name] = {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "extra": extra or {},
        "params": params,
    }
    Path(path).write_text(json.dumps(doc, separators=(",", ":")) + "\n", encoding="utf-8")


def load_checkpoint(path) -> LakeModel:
    """Rebuild a model from ``path``; any structural problem raises ``FormatError``."""
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not a JSON checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise FormatError(f"{path}: missing or wrong checkpoint format tag")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {doc.get('version')!r}")
    if not isinstance(doc.get("config"), dict) or not isinstance(doc.get("params"), dict):
        raise FormatError(f"{path}: checkpoint needs 'config' and 'params' objects")
    try:
        config = ModelConfig(**doc["config"])
    except (TypeError, ContractError) as exc:
        raise FormatError(f"{path}: bad model config ({exc})") from None
    model = LakeModel(config)
    state = {}
    for name, entry in doc["params"].items():
        try:
            shape = tuple(int(s) for s in entry["shape"])
            arr = np.asarray(entry["data"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"{path}: parameter {name!r} is malformed ({exc})") from None
        if arr.ndim != 1 or arr.size != int(np.prod(shape)):
            raise FormatError(f"{path}: parameter {name!r} has {arr.size} values for shape {shape}")
        if not np.isfinite(arr).all():
            raise FormatError(f"{path}: parameter {name!r} holds non-finite values")
        state[name] = arr.reshape(shape)
    try:
        model.params.load_state(state)
    except ContractError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return model
