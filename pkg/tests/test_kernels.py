import os
import subprocess
import sys

import numpy as np
import pytest

from motioncloud import _accel, kernels, templates
from conftest import textured


def test_bilinear_sampler_matches_numba_and_clamps():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, (20, 30))
    x = rng.uniform(-3, 33, 200)
    y = rng.uniform(-3, 23, 200)
    ref = np.array([kernels._sample_nb(img, a, b) for a, b in zip(x, y)])
    assert np.allclose(kernels.sample_bilinear(img, x, y), ref)
    # exact at integer nodes
    assert kernels.sample_bilinear(img, np.array([4.0]), np.array([7.0]))[0] == img[7, 4]


def test_lk_backends_agree():
    rng = np.random.default_rng(1)
    img = textured(rng, (96, 96))
    nxt = np.roll(img, (1, 2), axis=(0, 1))
    gy, gx = np.gradient(img)
    px, py = np.meshgrid(np.arange(10, 86, 8.0), np.arange(10, 86, 8.0))
    px, py = px.ravel(), py.ravel()
    z = np.zeros_like(px)
    mask = rng.uniform(size=px.shape) > 0.2
    a = kernels.lk_refine_numba(img, nxt, gx, gy, px, py, z, z, 5, 20, mask)
    b = kernels.lk_refine_numpy(img, nxt, gx, gy, px, py, z, z, 5, 20, mask)
    for u, v in zip(a, b):
        assert np.allclose(u, v, atol=1e-9)
    # masked nodes pass through untouched
    assert np.all(a[0][~mask] == 0)


def test_paint_boxes_backends_agree():
    rng = np.random.default_rng(2)
    n = 200
    cx, cy = rng.uniform(-5, 70, n), rng.uniform(-5, 70, n)
    th = rng.integers(0, 4, n) * np.pi / 4
    hl = rng.uniform(2, 16, n)
    hw = np.full(n, 3.0)
    val = np.sort(rng.integers(64, 256, n)).astype(np.uint8)
    a = kernels.paint_boxes_numba(np.zeros((64, 64), np.uint8), cx, cy, np.cos(th), np.sin(th), hl, hw, val)
    b = kernels.paint_boxes_numpy(np.zeros((64, 64), np.uint8), cx, cy, np.cos(th), np.sin(th), hl, hw, val)
    assert np.array_equal(a, b)
    assert a.max() > 0


def test_axis_aligned_box_covers_expected_pixels():
    canvas = np.zeros((20, 20), np.uint8)
    one = np.ones(1)
    kernels.paint_boxes(canvas, 10 * one, 10 * one, one, 0 * one, 4 * one, 1 * one, np.array([200], np.uint8))
    ys, xs = np.nonzero(canvas)
    assert (xs.min(), xs.max(), ys.min(), ys.max()) == (6, 14, 9, 11)


def test_knn_backends_agree_and_ties_are_stable():
    rng = np.random.default_rng(3)
    q = rng.standard_normal((40, 4))
    ref = rng.standard_normal((300, 4))
    i1, d1 = kernels.knn_numba(q, ref, 5)
    i2, d2 = kernels.knn_numpy(q, ref, 5)
    assert np.array_equal(i1, i2) and np.allclose(d1, d2)
    brute = ((q[:, None] - ref[None]) ** 2).sum(-1)
    assert np.allclose(d1, np.sort(brute, axis=1)[:, :5])
    tie = np.zeros((4, 2))
    idx, _ = kernels.knn(np.zeros((1, 2)), tie, 3)
    assert idx.tolist() == [[0, 1, 2]]


@pytest.mark.parametrize("k", [0, 11])
def test_knn_rejects_bad_k(k):
    with pytest.raises(ValueError):
        kernels.knn(np.zeros((1, 2)), np.zeros((10, 2)), k)


def test_knn_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        kernels.knn(np.zeros((1, 3)), np.zeros((10, 2)), 1)


def test_numpy_fallback_gives_same_templates(monkeypatch):
    rng = np.random.default_rng(4)
    a = textured(rng, (64, 64))
    frames = np.stack([a, np.roll(a, 3, axis=1), np.roll(a, 5, axis=1)]).astype(np.uint8)
    fast = templates.sequence_templates(frames)
    monkeypatch.setattr(_accel, "USE_NUMBA", False)
    slow = templates.sequence_templates(frames)
    assert np.array_equal(fast, slow)


def test_env_flag_selects_numpy_backend():
    env = dict(os.environ, MOTIONCLOUD_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", "from motioncloud import _accel; print(_accel.backend())"],
        env=env, capture_output=True, text=True, check=True,
    )
    assert out.stdout.strip() == "numpy"
