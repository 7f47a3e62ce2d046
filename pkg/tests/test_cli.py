import json

import numpy as np
import pytest
from PIL import Image

from lakeprompt.backbone import LakeModel, ModelConfig
from lakeprompt.checkpoint import load_checkpoint, save_checkpoint
from lakeprompt.cli import main, parse_prompt_specs, UsageError
from lakeprompt.errors import FormatError


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert run("synth", "--out", root / "data", "--count", 4, "--size", 16, "--seed", 7) == 0
    assert run("gen-prompts", "--data", root / "data", "--out", root / "bench", "--jobs", 1) == 0
    return root


def test_synth_writes_pairs_and_is_byte_stable(dataset, tmp_path):
    files = sorted(p.name for p in (dataset / "data").iterdir())
    assert len(files) == 8 and files[0] == "scene_00000.img.png"
    assert run("synth", "--out", tmp_path, "--count", 4, "--size", 16, "--seed", 7) == 0
    for name in files:
        assert (tmp_path / name).read_bytes() == (dataset / "data" / name).read_bytes()


def test_gen_prompts_manifest(dataset, tmp_path):
    man = json.loads((dataset / "bench" / "manifest.json").read_text())
    assert len(man["records"]) == 4
    assert run("gen-prompts", "--data", dataset / "data", "--out", tmp_path / "b",
               "--points", 3, "--kind", "random", "--jobs", 1) == 0
    man3 = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert man3["points"] == 3 and man3["point_kinds"] == ["random"]
    assert all(len(r["points_random"]) <= 3 and r["points_center"] is None for r in man3["records"])
    assert run("gen-prompts", "--data", dataset / "data", "--out", tmp_path / "c",
               "--points", 3, "--kind", "random", "--jobs", 1) == 0
    for p in (tmp_path / "b").iterdir():
        assert p.read_bytes() == (tmp_path / "c" / p.name).read_bytes()


def test_train_eval_render_round_trip(dataset, tmp_path, capsys):
    ck = tmp_path / "model.json"
    code = run("train", "--data", dataset / "data", "--prompts", dataset / "bench", "--out", ck,
               "--total-steps", 8, "--prompt-steps", 3, "--batch-size", 2, "--channels", 8,
               "--prompt", "random_points:3", "--prompt", "box")
    assert code == 0
    log = [json.loads(x) for x in (tmp_path / "model.log.jsonl").read_text().splitlines()]
    assert [r["mode"] for r in log] == ["prompted"] * 3 + ["prompt_free"] * 5
    capsys.readouterr()
    assert run("eval", "--data", dataset / "data", "--checkpoint", ck) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report) == {"oa", "f1", "miou", "confusion"}
    assert run("render", "--data", dataset / "data", "--out", tmp_path / "r", "--checkpoint", ck,
               "--with-prompts", dataset / "bench") == 0
    pngs = sorted((tmp_path / "r").iterdir())
    assert len(pngs) == 4
    with Image.open(pngs[0]) as im:
        assert im.size == (16, 16)


def test_render_without_prompts(dataset, tmp_path):
    assert run("render", "--data", dataset / "data", "--out", tmp_path) == 0
    assert len(list(tmp_path.glob("*.png"))) == 4


def test_config_file_precedence(dataset, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"count": 2, "size": 16, "seed": 1}))
    assert run("synth", "--out", tmp_path / "a", "--config", cfg) == 0
    assert len(list((tmp_path / "a").iterdir())) == 4
    assert run("synth", "--out", tmp_path / "b", "--config", cfg, "--count", 3) == 0
    assert len(list((tmp_path / "b").iterdir())) == 6
    cfg.write_text(json.dumps({"count": 2, "colour": "blue"}))
    assert run("synth", "--out", tmp_path / "c", "--config", cfg) == 1


def test_exit_codes(dataset, tmp_path, capsys):
    assert run("train", "--data", dataset / "data", "--out", tmp_path / "m.json",
               "--total-steps", 4, "--prompt-steps", 2) == 2
    assert "--prompts" in capsys.readouterr().err
    assert run("nonsense") == 1
    assert run("synth") == 1
    assert run("synth", "--out", tmp_path, "--count", "many") == 1
    assert run("gen-prompts", "--data", dataset / "data", "--out", tmp_path / "x", "--kind", "odd") == 1
    assert run("train", "--data", dataset / "data", "--out", tmp_path / "m.json", "--prompt", "lasso") == 1
    assert run("eval", "--data", tmp_path / "missing", "--checkpoint", tmp_path / "nope.json") == 2
    (tmp_path / "bad.json").write_text("{not json")
    assert run("eval", "--data", dataset / "data", "--checkpoint", tmp_path / "bad.json") == 2
    assert run("train", "--data", dataset / "data", "--out", tmp_path / "m.json",
               "--total-steps", 2, "--prompt-steps", 5) == 2


def test_prompt_specs():
    assert parse_prompt_specs(["random_points:5", "box,filled_mask"]) == (
        ("random_points", "box", "filled_mask"), 5)
    with pytest.raises(UsageError):
        parse_prompt_specs(["box:3"])


def test_checkpoint_round_trip(tmp_path, rng):
    m = LakeModel(ModelConfig(channels=8, size=16, seed=2))
    m.params["prompt.query"].data[...] = 0.25
    save_checkpoint(m, tmp_path / "c.json")
    back = load_checkpoint(tmp_path / "c.json")
    assert back.config == m.config
    a, b = m.params.state(), back.params.state()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    x = rng.random((1, 3, 16, 16))
    assert np.array_equal(m.forward_prompt_free(x).data, back.forward_prompt_free(x).data)


@pytest.mark.parametrize("mutate", [
    lambda d: d.update(format="other"),
    lambda d: d.update(version=99),
    lambda d: d["params"].pop("backbone.enc1.w"),
    lambda d: d["params"]["backbone.enc1.b"].update(shape=[3]),
    lambda d: d["params"]["backbone.enc1.b"].update(data="x"),
    lambda d: d.update(config={"channels": "wide"}),
])
def test_malformed_checkpoints(tmp_path, mutate):
    m = LakeModel(ModelConfig(channels=8, size=16))
    save_checkpoint(m, tmp_path / "c.json")
    doc = json.loads((tmp_path / "c.json").read_text())
    mutate(doc)
    (tmp_path / "c.json").write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "c.json")


def test_memorised_checkpoint_scores_high(dataset, tmp_path, capsys):
    ck = tmp_path / "fit.json"
    assert run("train", "--data", dataset / "data", "--out", ck, "--total-steps", 300, "--prompt-steps", 0,
               "--batch-size", 4, "--channels", 8, "--lr", 0.01, "--no-augment") == 0
    capsys.readouterr()
    assert run("eval", "--data", dataset / "data", "--checkpoint", ck) == 0
    assert json.loads(capsys.readouterr().out)["miou"] > 90
