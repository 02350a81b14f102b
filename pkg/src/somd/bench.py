"""Timing harness for the per-location factorization and scoring stages.

The cost being measured is the k-dependent cubic stage: factoring HW k x k
embedded covariances and inverting their triangular factors (fit side), and
the batched triangular matvec that turns projected residuals into distances
(score side).  Inputs are synthesized per block outside the timed region, and
blocks are capped so the k = F configurations never materialize a multi-GB
stack.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from time import perf_counter

import numpy as np

from . import linalg
from .errors import IoError, ValidationError

BENCH_HEADER = ("f", "k", "h", "w", "fit_ms", "score_ms")

# Per-block element cap for the (block, k, k) stacks.
_BLOCK_BUDGET = 24_000_000


@dataclass(frozen=True)
class BenchRecord:
    f: int
    k: int
    h: int
    w: int
    fit_ms: float         # median over reps
    score_ms: float       # median over reps
    fit_ms_spread: float  # max - min over reps
    score_ms_spread: float


def _time_once(k: int, hw: int, rng) -> tuple[float, float]:
    block = max(1, min(hw, _BLOCK_BUDGET // (k * k)))
    fit_s = 0.0
    score_s = 0.0
    done = 0
    idx = np.arange(k)
    while done < hw:
        b = min(block, hw - done)
        # Symmetric noise plus a Gershgorin shift: eigenvalues >= 1.5 by
        # construction for every k, and setup stays O(b k^2) so it is
        # negligible next to the timed cubic stage.
        a = rng.standard_normal((b, k, k))
        s = (a + np.swapaxes(a, 1, 2)) / (2.0 * np.sqrt(2.0 * k))
        s[:, idx, idx] = 1.5 + np.abs(s).sum(axis=2) - np.abs(s[:, idx, idx])
        z = rng.standard_normal((k, b))
        t0 = perf_counter()
        chol = linalg.cholesky_stack(s)
        inv = linalg.tri_inv_stack(chol)
        fit_s += perf_counter() - t0
        t0 = perf_counter()
        y = np.einsum("lij,jl->li", inv, z, optimize=True)
        np.sqrt(np.einsum("li,li->l", y, y))
        score_s += perf_counter() - t0
        done += b
    return fit_s * 1e3, score_s * 1e3


def bench_config(f: int, k: int, h: int, w: int, reps: int = 3,
                 seed: int = 0) -> BenchRecord:
    """Median stage timings for one (F, k, grid) configuration."""
    if k > f:
        raise ValidationError(f"k={k} exceeds F={f}")
    if reps < 1:
        raise ValidationError(f"reps must be >= 1, got {reps}")
    rng = linalg.rng_from_seed(seed)
    fit_times = []
    score_times = []
    for _ in range(reps):
        fit_ms, score_ms = _time_once(k, h * w, rng)
        fit_times.append(fit_ms)
        score_times.append(score_ms)
    return BenchRecord(
        f=f, k=k, h=h, w=w,
        fit_ms=float(np.median(fit_times)),
        score_ms=float(np.median(score_times)),
        fit_ms_spread=float(max(fit_times) - min(fit_times)),
        score_ms_spread=float(max(score_times) - min(score_times)),
    )


def run_bench(f_list, k_list, h: int, w: int, reps: int = 3,
              seed: int = 0) -> list[BenchRecord]:
    """Sweep the (F, k) grid; k values above a given F are skipped."""
    records = []
    for f in f_list:
        for k in k_list:
            if k > f:
                continue
            records.append(bench_config(f, k, h, w, reps, seed))
    return records


def write_bench_csv(records: list[BenchRecord], path: str) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(BENCH_HEADER)
            for r in records:
                writer.writerow([r.f, r.k, r.h, r.w,
                                 repr(r.fit_ms), repr(r.score_ms)])
    except OSError as exc:
        raise IoError(f"cannot write bench CSV {path}: {exc}") from exc
