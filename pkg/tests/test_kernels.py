import os
import subprocess
import sys

import numpy as np
import pytest

from lakeprompt import kernels
from lakeprompt._accel import BACKEND


@pytest.mark.parametrize("shape", [(1, 1), (1, 9), (16, 16), (23, 31)])
def test_backends_agree(shape, rng):
    se5 = np.ones((5, 5), np.uint8)
    cross = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], np.uint8)
    offsets = kernels.disc_offsets(1.5)
    a, b = kernels.IMPLS["numba"], kernels.IMPLS["numpy"]
    for _ in range(10):
        m = (rng.random(shape) < rng.uniform(0.1, 0.9)).astype(np.uint8)
        for se in (se5, cross):
            assert np.array_equal(a["dilate"](m, se), b["dilate"](m, se))
            assert np.array_equal(a["erode"](m, se), b["erode"](m, se))
        for min_pts in (1, 4, 7):
            la = kernels.canonical_labels(a["dbscan"](m, offsets, min_pts))
            lb = kernels.canonical_labels(b["dbscan"](m, offsets, min_pts))
            assert np.array_equal(la, lb)
        assert np.array_equal(a["border_reach"](1 - m), b["border_reach"](1 - m))


def test_disc_offsets():
    assert len(kernels.disc_offsets(1.0)) == 5
    assert len(kernels.disc_offsets(1.5)) == 9
    assert len(kernels.disc_offsets(2.0)) == 13


def test_canonical_labels():
    lab = np.array([[-1, 5, 5], [2, -1, 7]])
    assert kernels.canonical_labels(lab).tolist() == [[-1, 0, 0], [1, -1, 2]]


def test_env_flag_selects_numpy_path():
    code = "from lakeprompt import kernels, _accel; print(_accel.BACKEND, kernels.dilate_once.__name__)"
    env = dict(os.environ, LAKEPROMPT_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.split() == ["numpy", "_dilate_vec"]


def test_default_backend_is_numba():
    if os.environ.get("LAKEPROMPT_NO_NUMBA"):
        pytest.skip("numpy path forced by environment")
    assert BACKEND == "numba"
