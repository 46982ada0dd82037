"""Seeded sampling helpers used by the instance generators.

All generators draw from ``numpy.random.PCG64`` uniforms only; normal variates
come from the Box-Muller transform below so that instances depend on nothing
but the bit generator stream.
"""
from __future__ import annotations

import numpy as np

GAUSSIAN_METHOD = "box-muller(pcg64 uniforms)"


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    """Standard normal array via Box-Muller on pairs of open-interval uniforms."""
    shape = (shape,) if np.isscalar(shape) else tuple(shape)
    size = int(np.prod(shape, dtype=np.int64))
    k = (size + 1) // 2
    u1 = 1.0 - rng.random(k)  # in (0, 1]
    u2 = rng.random(k)
    r = np.sqrt(-2.0 * np.log(u1))
    z = np.empty(2 * k)
    z[0::2] = r * np.cos(2 * np.pi * u2)
    z[1::2] = r * np.sin(2 * np.pi * u2)
    return z[:size].reshape(shape)


def uniform_sphere(rng: np.random.Generator, d: int) -> np.ndarray:
    v = gaussian(rng, d)
    nv = np.linalg.norm(v)
    while nv == 0.0:  # probability zero, kept for completeness
        v = gaussian(rng, d)
        nv = np.linalg.norm(v)
    return v / nv


def orthogonal(rng: np.random.Generator, k: int) -> np.ndarray:
    """Haar-distributed orthogonal matrix (QR with sign correction)."""
    Q, R = np.linalg.qr(gaussian(rng, (k, k)))
    return Q * np.sign(np.where(np.diag(R) == 0, 1.0, np.diag(R)))


def choice_without_replacement(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """``k`` distinct indices from ``range(n)`` by sorting uniform keys."""
    return np.sort(np.argsort(rng.random(n), kind="stable")[:k])
