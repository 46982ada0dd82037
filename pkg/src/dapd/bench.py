"""Seeded replications and log-space confidence intervals."""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .runner import RunOptions, reference_certificate, run

__all__ = ["log_ci", "BenchRow", "run_replication", "run_bench", "ERROR_FLOOR"]

ERROR_FLOOR = 1e-16


def log_ci(values, level: float = 0.95) -> tuple[float, float, float]:
    """Geometric mean and t-interval of ``log10(values)``, exponentiated.

    Returns ``(geo_mean, lo, hi)``; needs at least two positive values.
    """
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two replications")
    if np.any(~(v > 0)):
        raise ValueError("values must be positive")
    lg = np.log10(v)
    mean = float(lg.mean())
    se = float(lg.std(ddof=1)) / math.sqrt(v.size)
    half = float(stats.t.ppf(0.5 + level / 2, v.size - 1)) * se
    return 10.0 ** mean, 10.0 ** (mean - half), 10.0 ** (mean + half)


@dataclass
class BenchRow:
    method: str
    reps: int
    geo_mean: float
    ci_lo: float
    ci_hi: float
    errors: list


def run_replication(build, seed: int, methods, opts: dict) -> dict:
    """Build one instance with ``build(seed)`` and return final errors per method."""
    problem, cert = build(seed)
    if cert is None:
        cert = reference_certificate(problem)
    out = {}
    for meth in methods:
        o = RunOptions(seed=seed, compute_psi=False, **opts)
        tr = run(meth, problem, cert, o)
        out[meth] = max(float(tr.rows[-1]["rel_err_x"]), ERROR_FLOOR)
    return out


def run_bench(build, seeds, methods, opts: dict, jobs: int = 1, level: float = 0.95) -> list[BenchRow]:
    """Run all replications (concurrently when ``jobs > 1``) and summarize each method."""
    seeds = list(seeds)
    if len(seeds) < 2:
        raise ValueError("replication count must be at least 2")
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(run_replication, [build] * len(seeds), seeds,
                                  [methods] * len(seeds), [opts] * len(seeds)))
    else:
        results = [run_replication(build, s, methods, opts) for s in seeds]
    rows = []
    for meth in methods:
        errs = [r[meth] for r in results]
        gm, lo, hi = log_ci(errs, level)
        rows.append(BenchRow(meth, len(errs), gm, lo, hi, errs))
    return rows
