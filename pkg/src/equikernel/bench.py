"""Timing of the dense tensor-product convolution against the eSCN convolution."""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass

import numpy as np

from .escn import escn_convolution, reparametrize_weights
from .irreps import PathWeights, so3_convolution

CSV_HEADER = ("kernel", "L_max", "M_max", "channels", "reps", "median_s")
KERNELS = ("so3_full", "escn")


@dataclass
class BenchRecord:
    kernel: str
    lmax: int
    mmax: int
    channels: int
    reps: int
    median_s: float
    max_deviation: float = float("nan")

    def row(self):
        return [self.kernel, self.lmax, self.mmax, self.channels, self.reps, f"{self.median_s:.6e}"]


def time_call(fn, reps: int) -> float:
    """Median wall time of ``reps`` calls after one warm-up call."""
    if reps < 3:
        raise ValueError("reps must be at least 3")
    fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def bench_pair(lmax: int, channels: int, reps: int, mmax: int | None = None, n_edges: int = 16, seed: int = 0):
    """Time both kernels on the same random edges; returns two records.

    The eSCN weights come from the dense path weights, so the eSCN record
    also carries the deviation between the two outputs when ``mmax == lmax``.
    """
    mmax = lmax if mmax is None else min(mmax, lmax)
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n_edges, (lmax + 1) ** 2, channels))
    r = rng.normal(size=(n_edges, 3))
    pw = PathWeights.random(lmax, channels, channels, rng)
    so2 = reparametrize_weights(pw, mmax)
    full = lambda: so3_convolution(x, r, pw)  # noqa: E731
    fast = lambda: escn_convolution(x, r, so2)  # noqa: E731
    t_full = time_call(full, reps)
    t_fast = time_call(fast, reps)
    dev = float(np.abs(full() - fast()).max()) if mmax == lmax else float("nan")
    return [
        BenchRecord("so3_full", lmax, lmax, channels, reps, t_full),
        BenchRecord("escn", lmax, mmax, channels, reps, t_fast, dev),
    ]


def loglog_slope(lmaxes, times) -> float | None:
    """Least-squares slope of ``log(time)`` against ``log(lmax)``; ``None`` for a single point."""
    lmaxes = np.asarray(lmaxes, dtype=float)
    if len(np.unique(lmaxes)) < 2:
        return None
    return float(np.polyfit(np.log(lmaxes), np.log(np.asarray(times, dtype=float)), 1)[0])


def run_benchmark(lmaxes, channels: int = 8, reps: int = 3, mmax: int | None = None, n_edges: int = 16, seed: int = 0):
    if reps < 3:
        raise ValueError("reps must be at least 3")
    if not lmaxes or any(int(l) < 1 for l in lmaxes):
        raise ValueError("need at least one L_max >= 1")
    records = []
    for L in lmaxes:
        records.extend(bench_pair(int(L), channels, reps, mmax, n_edges, seed))
    slopes = {}
    for k in KERNELS:
        rs = [r for r in records if r.kernel == k]
        slopes[k] = loglog_slope([r.lmax for r in rs], [r.median_s for r in rs])
    return records, slopes


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.row())
    return buf.getvalue()


def slope_gap(slopes) -> float | None:
    if slopes.get("so3_full") is None or slopes.get("escn") is None:
        return None
    return slopes["so3_full"] - slopes["escn"]

