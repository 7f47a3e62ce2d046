import numpy as np
import pytest
from PIL import Image

from lakeprompt.errors import ContractError, FormatError
from lakeprompt.promptgen import BoxPrompt, PointPrompt, PromptSet
from lakeprompt.raster_io import (Scene, SynthConfig, boundary_pixels, gen_synthetic_dataset, load_image,
                                  load_mask, load_scene_dir, render_overlay, save_mask, save_scene)


def test_png_round_trip(tmp_path, rng):
    m = (rng.random((9, 13)) < 0.5).astype(np.uint8)
    save_mask(m, tmp_path / "m.png")
    assert np.array_equal(load_mask(tmp_path / "m.png"), m)
    with Image.open(tmp_path / "m.png") as im:
        assert im.mode == "L" and im.size == (13, 9)


def test_text_round_trip(tmp_path, rng):
    m = (rng.random((4, 7)) < 0.5).astype(np.uint8)
    save_mask(m, tmp_path / "m.txt")
    text = (tmp_path / "m.txt").read_text()
    assert text.splitlines()[0] == "7 4"
    assert np.array_equal(load_mask(tmp_path / "m.txt"), m)


def test_threshold_at_127(tmp_path):
    arr = np.array([[0, 127, 128, 255]], np.uint8)
    Image.fromarray(arr).save(tmp_path / "g.png")
    assert load_mask(tmp_path / "g.png").tolist() == [[0, 0, 1, 1]]


def test_rejects_rgb_and_16bit(tmp_path):
    Image.fromarray(np.zeros((4, 4, 3), np.uint8)).save(tmp_path / "rgb.png")
    with pytest.raises(FormatError, match="RGB"):
        load_mask(tmp_path / "rgb.png")
    Image.fromarray(np.zeros((4, 4), np.uint16)).save(tmp_path / "deep.png")
    with pytest.raises(FormatError, match="bit depth"):
        load_mask(tmp_path / "deep.png")


def test_bad_text_grids(tmp_path):
    for body in ("x y\n", "3 2\n010\n", "2 1\n0a\n"):
        (tmp_path / "bad.txt").write_text(body)
        with pytest.raises(FormatError):
            load_mask(tmp_path / "bad.txt")


def test_as_mask_contract():
    with pytest.raises(ContractError):
        Scene(np.zeros((4, 4, 3)), np.full((4, 4), 2), "x")
    with pytest.raises(ContractError):
        Scene(np.zeros((4, 5, 3)), np.zeros((4, 4)), "x")


def test_synthetic_dataset_deterministic(tmp_path):
    cfg = SynthConfig(count=6, size=32, seed=3)
    a, b = gen_synthetic_dataset(cfg), gen_synthetic_dataset(cfg)
    for s, t in zip(a, b):
        assert s.id == t.id
        assert np.array_equal(s.image, t.image) and np.array_equal(s.mask, t.mask)
    for s in a:
        frac = s.mask.mean()
        assert 0 < frac < 0.9
        assert s.image.min() >= 0 and s.image.max() <= 1
    other = gen_synthetic_dataset(SynthConfig(count=6, size=32, seed=4))
    assert any(not np.array_equal(s.mask, t.mask) for s, t in zip(a, other))


def test_scene_directory_round_trip(tmp_path):
    scenes = gen_synthetic_dataset(SynthConfig(count=3, size=16, seed=1))
    for s in scenes:
        save_scene(s, tmp_path)
    assert len(list(tmp_path.iterdir())) == 6
    back = load_scene_dir(tmp_path)
    assert [s.id for s in back] == [s.id for s in scenes]
    for s, t in zip(scenes, back):
        assert np.array_equal(s.mask, t.mask)
        assert np.abs(s.image - t.image).max() <= 0.5 / 255 + 1e-12
    (tmp_path / "scene_00000.mask.png").unlink()
    with pytest.raises(FormatError, match="paired mask"):
        load_scene_dir(tmp_path)


def test_image_loader_scales(tmp_path):
    Image.fromarray(np.full((2, 3, 3), 255, np.uint8)).save(tmp_path / "w.png")
    assert load_image(tmp_path / "w.png").shape == (2, 3, 3)
    assert load_image(tmp_path / "w.png").max() == 1.0


def test_boundary_pixels():
    m = np.zeros((6, 6), np.uint8)
    m[1:5, 1:5] = 1
    b = boundary_pixels(m)
    assert b.sum() == 12 and b[2, 2] == 0


def test_overlay_does_not_mutate_and_draws(rng):
    s = gen_synthetic_dataset(SynthConfig(count=1, size=32, seed=0))[0]
    before = s.image.copy()
    ps = PromptSet(points=PointPrompt("random", [(10, 10)]), box=BoxPrompt(2, 3, 20, 25))
    out = render_overlay(s, ps, prediction=s.mask)
    assert np.array_equal(s.image, before)
    assert out.shape == s.image.shape
    assert np.allclose(out[10, 10], [1, 1, 0])
    assert np.allclose(out[3, 2], [1, 0, 1])
    with pytest.raises(ContractError):
        render_overlay(s, PromptSet(box=BoxPrompt(0, 0, 40, 3)))
