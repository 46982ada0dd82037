"""Proximal operators and evaluators for the dual terms phi(y).

Every prox here is the exact resolvent ``argmin_u 0.5*||u - v||^2 + s*phi(u)``.
"""
from __future__ import annotations

import numpy as np

__all__ = [
    "prox_zero",
    "prox_nonneg",
    "prox_l1",
    "prox_group_ball",
    "ProxTerm",
    "ZeroTerm",
    "NonnegTerm",
    "L1Term",
    "GroupBallTerm",
    "make_prox_term",
]


def _check_step(s: float) -> None:
    if not s > 0:
        raise ValueError(f"prox step must be positive, got {s!r}")


def prox_zero(s: float, v: np.ndarray) -> np.ndarray:
    _check_step(s)
    return np.array(v, dtype=float, copy=True)


def prox_nonneg(s: float, v: np.ndarray) -> np.ndarray:
    """Projection onto the nonnegative orthant (independent of ``s``)."""
    _check_step(s)
    return np.maximum(np.asarray(v, dtype=float), 0.0)


def prox_l1(s: float, nu: float, v: np.ndarray) -> np.ndarray:
    """Soft thresholding at level ``s * nu``."""
    if s < 0 or nu < 0:
        raise ValueError("prox_l1 needs s >= 0 and nu >= 0")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - s * nu, 0.0)


def prox_group_ball(s: float, lam: float, block_p: int, v: np.ndarray) -> np.ndarray:
    """Project each contiguous length-``block_p`` slice onto the l2 ball of radius ``lam``."""
    _check_step(s)
    v = np.asarray(v, dtype=float)
    if block_p <= 0 or v.size % block_p:
        raise ValueError(f"vector of size {v.size} is not divisible into blocks of {block_p}")
    if lam < 0:
        raise ValueError("ball radius must be nonnegative")
    blocks = v.reshape(-1, block_p)
    norms = np.linalg.norm(blocks, axis=1)
    scale = np.ones_like(norms)
    outside = norms > lam
    scale[outside] = lam / norms[outside]
    return (blocks * scale[:, None]).reshape(v.shape)


class ProxTerm:
    """A closed convex dual term phi with a cheap prox.

    Subclasses set ``kind`` and implement ``value``, ``prox`` and
    ``subgradient_member_check``.
    """

    kind = "abstract"
    is_indicator = False

    def value(self, y: np.ndarray) -> float:
        raise NotImplementedError

    def prox(self, s: float, v: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def subgradient_member_check(self, y: np.ndarray, g: np.ndarray, tol: float = 1e-9) -> bool:
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v!r}" for k, v in self.params().items())
        return f"{type(self).__name__}({args})"


class ZeroTerm(ProxTerm):
    kind = "zero"

    def value(self, y):
        return 0.0

    def prox(self, s, v):
        return prox_zero(s, v)

    def subgradient_member_check(self, y, g, tol=1e-9):
        return bool(np.linalg.norm(g) <= tol)


class NonnegTerm(ProxTerm):
    kind = "nonneg"
    is_indicator = True

    def value(self, y):
        return 0.0 if np.all(np.asarray(y) >= 0) else np.inf

    def prox(self, s, v):
        return prox_nonneg(s, v)

    def subgradient_member_check(self, y, g, tol=1e-9):
        # normal cone of R^n_+: g <= 0 and g_i * y_i = 0
        y = np.asarray(y)
        g = np.asarray(g)
        if np.any(y < -tol):
            return False
        scale = tol * (1.0 + np.abs(y))
        return bool(np.all(g <= tol) and np.all(np.abs(g[y > tol]) <= scale[y > tol]))


class L1Term(ProxTerm):
    kind = "l1"

    def __init__(self, nu: float):
        if nu < 0:
            raise ValueError("nu must be nonnegative")
        self.nu = float(nu)

    def value(self, y):
        return self.nu * float(np.abs(y).sum())

    def prox(self, s, v):
        return prox_l1(s, self.nu, v)

    def subgradient_member_check(self, y, g, tol=1e-9):
        y = np.asarray(y)
        g = np.asarray(g)
        nz = np.abs(y) > tol
        ok_nz = np.all(np.abs(g[nz] - self.nu * np.sign(y[nz])) <= tol)
        ok_z = np.all(np.abs(g[~nz]) <= self.nu + tol)
        return bool(ok_nz and ok_z)

    def params(self):
        return {"nu": self.nu}


class GroupBallTerm(ProxTerm):
    """Indicator of ``max_t ||y_t||_2 <= lam`` over contiguous blocks ``y_t`` of size ``p``."""

    kind = "group_ball"
    is_indicator = True

    def __init__(self, lam: float, block_p: int):
        if lam < 0:
            raise ValueError("lam must be nonnegative")
        self.lam = float(lam)
        self.block_p = int(block_p)

    def value(self, y):
        norms = np.linalg.norm(np.asarray(y).reshape(-1, self.block_p), axis=1)
        return 0.0 if np.all(norms <= self.lam * (1 + 1e-12)) else np.inf

    def prox(self, s, v):
        return prox_group_ball(s, self.lam, self.block_p, v)

    def subgradient_member_check(self, y, g, tol=1e-9):
        yb = np.asarray(y).reshape(-1, self.block_p)
        gb = np.asarray(g).reshape(-1, self.block_p)
        for yt, gt in zip(yb, gb):
            ny = np.linalg.norm(yt)
            if ny > self.lam + tol:
                return False
            ng = np.linalg.norm(gt)
            if ng <= tol:
                continue
            # nonzero subgradient only on the sphere, pointing outward along y_t
            if ny < self.lam - tol:
                return False
            if np.linalg.norm(gt - (gt @ yt) / ny**2 * yt) > tol * (1 + ng) or gt @ yt < 0:
                return False
        return True

    def params(self):
        return {"lam": self.lam, "block_p": self.block_p}


def make_prox_term(kind: str, **params) -> ProxTerm:
    if kind == "zero":
        return ZeroTerm()
    if kind == "nonneg":
        return NonnegTerm()
    if kind == "l1":
        return L1Term(params["nu"])
    if kind == "group_ball":
        return GroupBallTerm(params["lam"], params["block_p"])
    raise ValueError(f"unknown prox kind {kind!r}")
