"""Time the numba kernels against their numpy fallbacks.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are called directly, so the MOTIONCLOUD_NUMBA flag does not
matter here. Each row also checks that the two backends agree.
"""
import argparse
import time

import numpy as np
from scipy import ndimage

from motioncloud import kernels
from motioncloud.templates import FlowConfig, grid_nodes


def _best(fn, repeat):
    fn()  # warm-up (and numba compilation)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def _lk_case(rng):
    img = ndimage.gaussian_filter(rng.standard_normal((256, 256)), 2.0) * 40 + 128
    nxt = np.roll(img, (2, 3), axis=(0, 1))
    gy, gx = np.gradient(img)
    px, py = grid_nodes(img.shape, FlowConfig())
    px, py = px.ravel(), py.ravel()
    zero = np.zeros_like(px)
    mask = np.ones(px.shape, dtype=bool)
    args = (img, nxt, gx, gy, px, py, zero, zero, 7, 20, mask)
    return (lambda: kernels.lk_refine_numba(*args)), (lambda: kernels.lk_refine_numpy(*args))


def _box_case(rng):
    n = 900
    cx, cy = rng.uniform(0, 256, n), rng.uniform(0, 256, n)
    th = rng.integers(0, 4, n) * np.pi / 4
    ux, uy = np.cos(th), np.sin(th)
    hl = rng.uniform(2, 16, n)
    hw = np.full(n, 3.0)
    val = np.sort(rng.integers(64, 256, n)).astype(np.uint8)

    def run(f):
        return lambda: f(np.zeros((256, 256), np.uint8), cx, cy, ux, uy, hl, hw, val)

    return run(kernels.paint_boxes_numba), run(kernels.paint_boxes_numpy)


def _knn_case(rng):
    q = rng.standard_normal((250, 10))
    ref = rng.standard_normal((3000, 10))
    return (lambda: kernels.knn_numba(q, ref, 7)), (lambda: kernels.knn_numpy(q, ref, 7))


def _agree(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, atol=1e-9) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    cases = {
        "lk_refine (1024 nodes, r=7)": _lk_case(rng),
        "paint_boxes (900 boxes)": _box_case(rng),
        "knn (250 x 3000, k=7)": _knn_case(rng),
    }
    print(f"{'kernel':32s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s}  agree")
    for name, (fast, slow) in cases.items():
        tn = _best(fast, args.repeat)
        tp = _best(slow, args.repeat)
        print(f"{name:32s} {1e3 * tn:10.2f} {1e3 * tp:10.2f} {tp / tn:8.1f}  {_agree(fast(), slow())}")


if __name__ == "__main__":
    main()
