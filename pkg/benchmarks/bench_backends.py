"""Compare the numba and numpy implementations of every hot kernel.

    python benchmarks/bench_backends.py --lmax 6 --edges 256 --channels 16

Prints one CSV row per (kernel, backend) with the median time and the
largest deviation from the numpy result.
"""

import argparse
import csv
import statistics
import sys
import time

import numpy as np

from equikernel import kernels, so3
from equikernel.irreps import PathWeights


def median_time(fn, reps):
    fn()
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def workloads(lmax, n_edges, channels, rng):
    d = rng.normal(size=(n_edges, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    R = so3.alignment_rotation(d)
    p1, p2, val = so3._wigner_tables(lmax)
    norms = so3._sh_norms(lmax)
    packed = so3.wigner_packed(R, lmax, validate=False)
    x = rng.normal(size=(n_edges, (lmax + 1) ** 2, channels))
    Y = so3.spherical_harmonics(d, lmax)
    tp = PathWeights.random(min(lmax, 4), channels, channels, rng).compiled()
    dtp = PathWeights.random(min(lmax, 4), channels, channels, rng, depthwise=True).compiled()
    xs = x[:, : (min(lmax, 4) + 1) ** 2]
    Ys = Y[:, : (min(lmax, 4) + 1) ** 2]
    Ko = (min(lmax, 4) + 1) ** 2
    return {
        "spherical_harmonics": lambda: kernels.spherical_harmonics(d, lmax, norms),
        "wigner_packed": lambda: kernels.wigner_packed(R, lmax, p1, p2, val),
        "rotate": lambda: kernels.rotate(x, packed, lmax),
        "so3_tensor_product": lambda: kernels.so3_tensor_product(xs, Ys, *tp, Ko),
        "depthwise_tensor_product": lambda: kernels.depthwise_tensor_product(xs, Ys, *dtp, Ko),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lmax", type=int, default=6)
    ap.add_argument("--edges", type=int, default=256)
    ap.add_argument("--channels", type=int, default=16)
    ap.add_argument("--reps", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    if "numba" not in backends:
        print("numba unavailable (or EQUIKERNEL_NUMBA=0); timing numpy only", file=sys.stderr)
    jobs = workloads(args.lmax, args.edges, args.channels, np.random.default_rng(args.seed))
    out = csv.writer(sys.stdout, lineterminator="\n")
    out.writerow(["kernel", "backend", "lmax", "edges", "channels", "median_s", "max_dev_vs_numpy"])
    previous = kernels.get_backend()
    try:
        for name, fn in jobs.items():
            kernels.set_backend("numpy")
            ref = fn()
            for b in backends:
                kernels.set_backend(b)
                dev = float(np.abs(fn() - ref).max())
                t = median_time(fn, args.reps)
                out.writerow([name, b, args.lmax, args.edges, args.channels, f"{t:.6e}", f"{dev:.1e}"])
    finally:
        kernels.set_backend(previous)


if __name__ == "__main__":
    main()
