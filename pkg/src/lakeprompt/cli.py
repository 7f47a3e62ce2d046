"""Command-line entry point: synth, gen-prompts, train, eval, render.

Every command accepts ``--config FILE`` holding a flat JSON object whose keys
are the flag names with underscores. An explicit flag beats the file, and the
file beats the built-in default. Unknown keys are a usage error.

Exit codes: 0 success, 1 usage error, 2 data or contract error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .backbone import LakeModel, ModelConfig
from .checkpoint import load_checkpoint, save_checkpoint
from .clustering import DbscanParams
from .errors import ContractError, FormatError
from .promptgen import COMBINATION_KEYS, MAX_POINTS, POINT_KINDS, build_benchmark, load_manifest, prompt_set_from_record
from .raster_io import SynthConfig, gen_synthetic_dataset, load_scene_dir, render_overlay, save_image, save_scene
from .trainer import TrainConfig, evaluate, save_report, train_two_stage

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# name -> (default, type); flags are registered with default None so that
# "not given" can be told apart from "given the default value"
SYNTH_KEYS = {"count": (16, int), "size": (32, int), "seed": (0, int), "noise_std": (0.08, float),
              "blobs_min": (1, int), "blobs_max": (3, int)}
PROMPT_KEYS = {"points": (MAX_POINTS, int), "kind": ("both", str), "eps": (1.5, float),
               "min_pts": (4, int), "seed": (0, int), "shift": (2, int), "mask_ratio": (0.008, float),
               "jobs": (None, int)}
TRAIN_KEYS = {"total_steps": (2000, int), "prompt_steps": (500, int), "batch_size": (16, int),
              "lr": (6e-5, float), "weight_decay": (0.01, float), "seed": (0, int),
              "prompt": (["random_points:3"], list), "no_augment": (False, bool),
              "channels": (32, int), "heads": (2, int), "reduction": (2, int), "dtype": ("float32", str)}


def _add(p, name, typ, **kw):
    flag = "--" + name.replace("_", "-")
    if typ is bool:
        p.add_argument(flag, dest=name, action="store_const", const=True, default=None, **kw)
    elif typ is list:
        p.add_argument(flag, dest=name, action="append", default=None, **kw)
    else:
        p.add_argument(flag, dest=name, type=typ, default=None, **kw)


def _resolve(args, keys):
    """Merge flag > config file > default into a plain dict."""
    file_vals = {}
    if getattr(args, "config", None):
        try:
            file_vals = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise UsageError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"config file {args.config} is not valid JSON: {exc}") from None
        if not isinstance(file_vals, dict):
            raise UsageError("config file must hold a JSON object")
        unknown = sorted(set(file_vals) - set(keys))
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    out = {}
    for name, (default, typ) in keys.items():
        flag = getattr(args, name, None)
        if flag is not None:
            out[name] = flag
        elif name in file_vals:
            v = file_vals[name]
            if typ is list:
                v = [v] if isinstance(v, str) else list(v)
            elif v is not None and typ in (int, float):
                try:
                    v = typ(v)
                except (TypeError, ValueError):
                    raise UsageError(f"config key {name!r} must be {typ.__name__}") from None
            out[name] = v
        else:
            out[name] = default
    return out


def parse_prompt_specs(specs):
    """``["random_points:3", "box"]`` -> (combination tuple, k)."""
    combo, k = [], 3
    for spec in specs:
        for part in spec.split(","):
            key, _, count = part.strip().partition(":")
            if key not in COMBINATION_KEYS:
                raise UsageError(f"unknown prompt kind {key!r}; choose from {', '.join(COMBINATION_KEYS)}")
            if count:
                if not key.endswith("points"):
                    raise UsageError(f"only point prompts take a count, got {part!r}")
                try:
                    k = int(count)
                except ValueError:
                    raise UsageError(f"bad point count in {part!r}") from None
            combo.append(key)
    return tuple(dict.fromkeys(combo)), k


# --- commands -----------------------------------------------------------------

def cmd_synth(args) -> int:
    v = _resolve(args, SYNTH_KEYS)
    cfg = SynthConfig(count=v["count"], size=v["size"], seed=v["seed"],
                      blob_count_range=(v["blobs_min"], v["blobs_max"]), noise_std=v["noise_std"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for scene in gen_synthetic_dataset(cfg):
        save_scene(scene, out)
    print(f"wrote {cfg.count} scenes to {out}", file=sys.stderr)
    return EXIT_OK


def cmd_gen_prompts(args) -> int:
    v = _resolve(args, PROMPT_KEYS)
    kind = v["kind"]
    if kind not in POINT_KINDS + ("both",):
        raise UsageError(f"--kind must be random, center or both, got {kind!r}")
    kinds = POINT_KINDS if kind == "both" else (kind,)
    jobs = v["jobs"] or os.cpu_count() or 1
    scenes = load_scene_dir(args.data)
    manifest = build_benchmark(scenes, args.out, master_seed=v["seed"],
                               params=DbscanParams(v["eps"], v["min_pts"]), k=v["points"],
                               point_kinds=kinds, shift=v["shift"], ratio=v["mask_ratio"], jobs=jobs)
    print(f"wrote {len(manifest['records'])} prompt records to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_train(args) -> int:
    v = _resolve(args, TRAIN_KEYS)
    combo, k = parse_prompt_specs(v["prompt"])
    tcfg = TrainConfig(total_steps=v["total_steps"], prompt_steps=v["prompt_steps"],
                       batch_size=v["batch_size"], lr=v["lr"], weight_decay=v["weight_decay"],
                       seed=v["seed"], prompt_combination=combo, point_count=k,
                       augment=not v["no_augment"])
    scenes = load_scene_dir(args.data)
    if not scenes:
        raise ContractError(f"{args.data}: no scenes found")
    if tcfg.prompt_steps > 0 and not args.prompts:
        raise ContractError("--prompts (a benchmark manifest) is required when --prompt-steps > 0")
    manifest = load_manifest(args.prompts) if args.prompts else None
    mcfg = ModelConfig(channels=v["channels"], heads=v["heads"], reduction=v["reduction"],
                       size=scenes[0].mask.shape[0], seed=v["seed"], dtype=v["dtype"])
    model = LakeModel(mcfg)
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_suffix(".log.jsonl")
    train_two_stage(model, scenes, manifest, tcfg, log_path=log_path)
    save_checkpoint(model, out, extra={"train": tcfg.to_dict()})
    print(f"checkpoint {out}, step log {log_path}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args) -> int:
    _resolve(args, {})
    model = load_checkpoint(args.checkpoint)
    metrics = evaluate(model, load_scene_dir(args.data))
    if args.out:
        save_report(metrics, args.out)
    print(json.dumps(metrics.to_dict()))
    return EXIT_OK


def cmd_render(args) -> int:
    _resolve(args, {})
    scenes = load_scene_dir(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    records, base = {}, None
    combo, k = parse_prompt_specs(args.prompt or ["random_points:9", "box", "filled_mask"])
    if args.with_prompts:
        manifest = load_manifest(args.with_prompts)
        records, base = {r["id"]: r for r in manifest["records"]}, manifest["_dir"]
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    for scene in scenes:
        prompts = None
        if args.with_prompts:
            if scene.id not in records:
                raise ContractError(f"manifest has no record for scene {scene.id}")
            prompts = prompt_set_from_record(records[scene.id], combo, k, base)
        pred = None
        if model is not None:
            pred = model.predict(scene.image.transpose(2, 0, 1)[None])[0]
        save_image(render_overlay(scene, prompts, pred), out / f"{scene.id}.overlay.png")
    print(f"rendered {len(scenes)} overlays to {out}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lakeprompt", description="Lake prompt benchmark and two-stage training")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic scene dataset")
    p.add_argument("--out", required=True, help="output directory")
    for name, (_, typ) in SYNTH_KEYS.items():
        _add(p, name, typ)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gen-prompts", help="build the five-variant prompt benchmark")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--out", required=True, help="benchmark directory")
    for name, (_, typ) in PROMPT_KEYS.items():
        _add(p, name, typ)
    p.set_defaults(func=cmd_gen_prompts)

    p = sub.add_parser("train", help="two-stage training")
    p.add_argument("--data", required=True, help="scene directory")
    p.add_argument("--prompts", help="benchmark directory or manifest.json")
    p.add_argument("--out", required=True, help="checkpoint path (JSON)")
    p.add_argument("--log", help="step log path (JSON lines); default next to the checkpoint")
    for name, (_, typ) in TRAIN_KEYS.items():
        _add(p, name, typ, **({"help": "kind[:k], repeatable, e.g. random_points:3"} if name == "prompt" else {}))
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="prompt-free evaluation; metrics JSON on stdout")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", help="also write the report here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render", help="overlay PNGs of ground truth, prompts and predictions")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", help="draw the prompt-free prediction boundary")
    p.add_argument("--with-prompts", help="benchmark directory or manifest.json to draw prompts from")
    p.add_argument("--prompt", action="append", help="prompt kinds to draw (default: points, box, filled mask)")
    p.set_defaults(func=cmd_render)

    for p in sub.choices.values():
        p.add_argument("--config", help="JSON object of flag defaults")
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ContractError, FormatError, FileNotFoundError, NotADirectoryError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
