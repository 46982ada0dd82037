"""Certified extreme singular values of coupling operators."""
from __future__ import annotations

import numpy as np

__all__ = ["dense_spectrum", "power_smax", "certify_spectrum"]


def _sv_extremes(A: np.ndarray) -> tuple[float, float]:
    sv = np.linalg.svd(A, compute_uv=False)
    return float(sv.min()), float(sv.max())


def dense_spectrum(op) -> tuple[float, float, float]:
    """``(s_min, s_max, bar_s_max)`` from dense SVDs of ``M`` and of every block."""
    M = op.to_dense()
    if M.shape[0] > M.shape[1]:
        raise ValueError("coupling must have at least as many columns as rows (full row rank)")
    s_lo, s_hi = _sv_extremes(M)
    if op.N == 1:
        bar = s_hi
    else:
        bar = max(float(np.linalg.norm(M[:, sl], 2)) for sl in op.slices)
    return s_lo, s_hi, bar


def power_smax(apply, apply_adjoint, m: int, rtol: float = 1e-10, max_iter: int = 5000,
               seed: int = 0) -> float:
    """Largest singular value by power iteration on ``M^T M``.

    Stops when the Rayleigh quotient changes by less than ``rtol`` relative.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(m)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = apply_adjoint(apply(v))
        lam_new = float(v @ w)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= rtol * abs(lam_new):
            return float(np.sqrt(lam_new))
        lam = lam_new
    raise RuntimeError("power iteration did not converge")


def certify_spectrum(op, mode: str = "dense-svd") -> tuple[float, float, float]:
    """Certified ``(s_min, s_max, bar_s_max)`` of a coupling operator.

    ``dense-svd`` assembles the matrix (``n*m <= 1e7``). ``power-iteration``
    estimates ``s_max`` matrix-free and takes ``s_min`` from a structural closed
    form when the operator provides one, else from a dense SVD.
    """
    if mode == "dense-svd":
        if op.n * op.m > 10**7:
            raise ValueError("operator too large for dense SVD certification")
        return dense_spectrum(op)
    if mode != "power-iteration":
        raise ValueError(f"unknown certification mode {mode!r}")
    s_hi = power_smax(op._apply, op._apply_adjoint, op.m)
    exact = op.exact_spectrum()
    if exact is not None:
        s_lo = exact[0]
    else:
        s_lo = dense_spectrum(op)[0]
    if op.N == 1:
        bar = s_hi
    else:
        bar = 0.0
        for i, sl in enumerate(op.slices):
            mi = sl.stop - sl.start
            bar = max(bar, power_smax(lambda v, i=i: op._block_apply(i, v),
                                      lambda y, i=i: op._block_apply_adjoint(i, y), mi))
    return s_lo, s_hi, bar
