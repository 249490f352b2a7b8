"""Time each hot kernel on both backends and check they agree.

    python benchmarks/bench_kernels.py [--repeat 20]
"""
import argparse
import sys
from timeit import repeat

import numpy as np

from hemtfit import _kernels as K


def cases(rng):
    x = rng.normal(size=(64, 9))
    pts = rng.normal(size=(130, 9))
    bw = np.full(9, 0.3)
    yield "kde_logpdf 64x130x9", lambda b: K.kde_logpdf(x, pts, bw, backend=b)

    vgs = np.repeat(np.linspace(-1.2, 0.0, 5), 40)
    vds = np.tile(np.linspace(0.0, 10.0, 40), 5)
    params = np.array([-1.5, 1.4, 0.35, 0.15, 0.05, 3.0, 0.03, 0.8, 1.2])
    yield "dc_solve 5x40 grid", lambda b: K.dc_solve(vgs, vds, params, backend=b)[0]

    mask = np.zeros((480, 640), dtype=bool)
    mask[430, 60:580] = True
    mask[40:430, 60] = True
    mask[rng.integers(0, 480, 3000), rng.integers(0, 640, 3000)] = True
    thetas = np.arange(-90.0, 90.0)
    yield "hough_accumulate 640x480", lambda b: K.hough_accumulate(mask, thetas, backend=b)[0]


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    if not K.HAVE_NUMBA:
        print("numba is not installed; nothing to compare")
        return 1
    rng = np.random.default_rng(0)
    print(f"{'kernel':<26}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, fn in cases(rng):
        a, b = fn("numpy"), fn("numba")  # also warms up the jit
        np.testing.assert_allclose(b, a, rtol=1e-9, atol=0)
        t_np = min(repeat(lambda: fn("numpy"), number=1, repeat=args.repeat)) * 1e3
        t_nb = min(repeat(lambda: fn("numba"), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<26}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
