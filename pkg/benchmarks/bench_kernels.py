"""Compare the compiled and numpy kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Both backends are imported directly, so the extension must be built
(``pip install -e . --no-build-isolation``) for the cython column.
"""

import argparse
import math
import timeit

import numpy as np

from qplab import _kernels_py as py
from qplab.lattice import box

try:
    from qplab import _kernels as cy
except ImportError:
    cy = None


def cases():
    rng = np.random.default_rng(0)
    S = box(0, 150)
    absm = np.abs(rng.standard_normal((len(S), len(S))))
    yield "offset_profile d=1 n=301", lambda k: k.offset_profile(S.pts2, S.pts2, absm)
    S2 = box(np.zeros(2), 10)
    absm2 = np.abs(rng.standard_normal((len(S2), len(S2))))
    yield "offset_profile d=2 n=441", lambda k: k.offset_profile(S2.pts2, S2.pts2, absm2)

    g = 128
    xs = np.arange(g) / g
    ys = np.linspace(-0.1, 0.1, 27)
    z = (xs[None, :] + 1j * ys[:, None]).ravel()
    vz = np.cos(2 * np.pi * z)
    yield "pair_ratio_extrema grid 128", lambda k: k.pair_ratio_extrema(z, vz, 1.0 / g)

    w1 = np.array([(math.sqrt(5) - 1) / 2])
    yield "diophantine_scan d=1 n<=2e5", lambda k: k.diophantine_scan(w1, 2.0, 0.0, 200_000)
    w2 = np.array([math.sqrt(2) - 1, math.sqrt(3) - 1])
    yield "diophantine_scan d=2 n<=300", lambda k: k.diophantine_scan(w2, 3.0, 0.0, 300)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    print(f"{'kernel':32s} {'python [ms]':>12s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, fn in cases():
        tp = min(timeit.repeat(lambda: fn(py), number=1, repeat=args.repeat)) * 1e3
        if cy is None:
            print(f"{name:32s} {tp:12.2f} {'n/a':>12s}")
            continue
        tc = min(timeit.repeat(lambda: fn(cy), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:32s} {tp:12.2f} {tc:12.2f} {tp / tc:7.1f}x")


if __name__ == "__main__":
    main()
