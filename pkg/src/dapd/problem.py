"""Problem data model: smooth oracles, coupling operators, saddle problems and metrics.

The saddle problem is ``min_x max_y f(x) + y^T M x - b^T y - phi(y)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .prox import ProxTerm, ZeroTerm

__all__ = [
    "Counters",
    "ParameterDomainError",
    "SmoothOracle",
    "QuadraticOracle",
    "PseudoHuberOracle",
    "BlockObjective",
    "CouplingOperator",
    "DenseCoupling",
    "ChainCoupling",
    "KroneckerCoupling",
    "SaddleProblem",
    "SaddleCertificate",
    "kkt_residual",
    "bregman_f",
    "weighted_norm_sq",
    "dphi_bregman",
]


class ParameterDomainError(ValueError):
    """Raised when inputs fall outside the domain where a formula is valid."""


@dataclass
class Counters:
    """Per-run oracle and operator accounting (block units, see ``CouplingOperator``)."""

    block_ops: int = 0
    full_apply: int = 0
    full_adjoint: int = 0
    block_apply: int = 0
    block_adjoint: int = 0
    grad_calls: int = 0
    block_grad_calls: int = 0

    def snapshot(self) -> dict:
        return dict(self.__dict__)


# ---------------------------------------------------------------------------
# smooth objectives


class SmoothOracle:
    """mu-strongly convex, lip-smooth function on R^dim."""

    dim: int
    mu: float
    lip: float
    coordinate_separable = False

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def partial_gradient(self, sl: slice, x: np.ndarray) -> np.ndarray:
        return self.gradient(x)[sl]

    def component_gradient(self, sl: slice, xb: np.ndarray) -> np.ndarray:
        """Gradient of the component living on ``sl`` (separable oracles only)."""
        raise NotImplementedError(f"{type(self).__name__} is not block separable")

    def component_lip(self, sl: slice) -> float:
        return self.lip

    def bregman(self, x: np.ndarray, x_ref: np.ndarray) -> float:
        d = x - x_ref
        return self.value(x) - self.value(x_ref) - float(self.gradient(x_ref) @ d)

    def hessian(self, x: np.ndarray) -> np.ndarray | None:
        return None

    def params(self) -> dict:
        return {}


class QuadraticOracle(SmoothOracle):
    """``f(x) = 0.5 x^T H x - c^T x`` with ``H`` dense or given by its diagonal."""

    kind = "quadratic"

    def __init__(self, H: np.ndarray, c: np.ndarray | None = None, mu: float | None = None,
                 lip: float | None = None, block_sizes: Sequence[int] | None = None):
        H = np.asarray(H, dtype=float)
        self.diagonal = H.ndim == 1
        self.H = H
        self.dim = H.shape[0]
        self.c = np.zeros(self.dim) if c is None else np.asarray(c, dtype=float)
        if mu is None or lip is None:
            ev = H if self.diagonal else np.linalg.eigvalsh(H)
            mu = float(ev.min()) if mu is None else mu
            lip = float(ev.max()) if lip is None else lip
        self.mu = float(mu)
        self.lip = float(lip)
        # block-diagonal H makes the quadratic separable across these blocks
        self.block_sizes = None if block_sizes is None else list(block_sizes)
        self.coordinate_separable = self.diagonal
        if not self.diagonal and self.block_sizes is not None:
            self._blocks = {}
            off = 0
            for mi in self.block_sizes:
                self._blocks[(off, off + mi)] = np.ascontiguousarray(H[off:off + mi, off:off + mi])
                off += mi

    def value(self, x):
        Hx = self.H * x if self.diagonal else self.H @ x
        return 0.5 * float(x @ Hx) - float(self.c @ x)

    def gradient(self, x):
        return (self.H * x if self.diagonal else self.H @ x) - self.c

    def partial_gradient(self, sl, x):
        if self.diagonal:
            return self.H[sl] * x[sl] - self.c[sl]
        return self.H[sl] @ x - self.c[sl]

    def component_gradient(self, sl, xb):
        if self.diagonal:
            return self.H[sl] * xb - self.c[sl]
        if self.block_sizes is None:
            raise NotImplementedError("dense quadratic without block structure is not separable")
        return self._blocks[(sl.start, sl.stop)] @ xb - self.c[sl]

    def component_lip(self, sl):
        if self.diagonal:
            return float(self.H[sl].max())
        if self.block_sizes is not None:
            return float(np.linalg.eigvalsh(self._blocks[(sl.start, sl.stop)]).max())
        return self.lip

    def bregman(self, x, x_ref):
        d = x - x_ref
        Hd = self.H * d if self.diagonal else self.H @ d
        return 0.5 * float(d @ Hd)

    def hessian(self, x):
        return np.diag(self.H) if self.diagonal else self.H

    def params(self):
        return {"H": self.H, "c": self.c, "mu": self.mu, "lip": self.lip,
                "block_sizes": self.block_sizes}


class PseudoHuberOracle(SmoothOracle):
    """``f(x) = sum_i sqrt(x_i^2 + e^2) + (e/2) x_i^2``.

    Curvature lies in ``(e, e + 1/e]``, so ``mu = e`` and ``lip = e + 1/e``.
    """

    kind = "pseudo_huber"
    coordinate_separable = True

    def __init__(self, dim: int, e: float):
        if not e > 0:
            raise ParameterDomainError("pseudo-Huber smoothing e must be positive")
        self.dim = int(dim)
        self.e = float(e)
        self.mu = self.e
        self.lip = self.e + 1.0 / self.e

    def value(self, x):
        return float(np.sum(np.sqrt(x * x + self.e**2)) + 0.5 * self.e * (x @ x))

    def gradient(self, x):
        return x / np.sqrt(x * x + self.e**2) + self.e * x

    def partial_gradient(self, sl, x):
        return self.component_gradient(sl, x[sl])

    def component_gradient(self, sl, xb):
        return xb / np.sqrt(xb * xb + self.e**2) + self.e * xb

    def component_lip(self, sl):
        return self.lip

    def bregman(self, x, x_ref):
        # cancellation-free form of sqrt(x^2+e^2) - sqrt(r^2+e^2) - r(x-r)/sqrt(r^2+e^2)
        e2 = self.e**2
        a = np.sqrt(x * x + e2)
        b = np.sqrt(x_ref * x_ref + e2)
        d = x - x_ref
        huber = e2 * d * d / (b * (a * b + x * x_ref + e2))
        return float(huber.sum() + 0.5 * self.e * (d @ d))

    def hessian(self, x):
        return np.diag(self.e**2 / (x * x + self.e**2) ** 1.5 + self.e)

    def params(self):
        return {"dim": self.dim, "e": self.e}


class BlockObjective:
    """Objective split into ``N`` primal blocks.

    With ``separable=True`` the oracle is a sum of block components ``f_i(x_i)``;
    otherwise only block partial gradients of a joint ``f`` are available.
    """

    def __init__(self, oracle: SmoothOracle, block_sizes: Sequence[int], separable: bool = True):
        self.oracle = oracle
        self.block_sizes = [int(b) for b in block_sizes]
        if sum(self.block_sizes) != oracle.dim:
            raise ValueError("block sizes must sum to the objective dimension")
        self.separable = bool(separable)
        if self.separable and not (oracle.coordinate_separable or getattr(oracle, "block_sizes", None)):
            raise ValueError("oracle does not decompose over the given blocks")
        offs = np.concatenate([[0], np.cumsum(self.block_sizes)])
        self.slices = [slice(int(a), int(b)) for a, b in zip(offs[:-1], offs[1:])]
        self.dim = oracle.dim
        self.mu = oracle.mu
        self.lip = oracle.lip
        self.bar_lip = (max(oracle.component_lip(sl) for sl in self.slices)
                        if self.separable else oracle.lip)

    @property
    def N(self) -> int:
        return len(self.block_sizes)

    def value(self, x):
        return self.oracle.value(x)

    def gradient(self, x):
        return self.oracle.gradient(x)

    def block_gradient(self, j: int, x_or_block: np.ndarray) -> np.ndarray:
        """``grad f_j(x_j)`` (separable, block argument) or ``grad_j f(x)`` (full argument)."""
        sl = self.slices[j]
        if self.separable:
            return self.oracle.component_gradient(sl, x_or_block)
        return self.oracle.partial_gradient(sl, x_or_block)

    def bregman(self, x, x_ref):
        return self.oracle.bregman(x, x_ref)

    def hessian(self, x):
        return self.oracle.hessian(x)


# ---------------------------------------------------------------------------
# coupling operators


class CouplingOperator:
    """Linear map ``M: R^m -> R^n`` split into column blocks ``M_i``.

    Accounting: a full ``apply``/``apply_adjoint`` costs ``N`` block units,
    a single block application costs one.
    """

    n: int
    m: int
    block_sizes: list[int]

    def __init__(self):
        self._spectrum: tuple[float, float, float] | None = None

    @property
    def N(self) -> int:
        return len(self.block_sizes)

    @property
    def slices(self) -> list[slice]:
        offs = np.concatenate([[0], np.cumsum(self.block_sizes)])
        return [slice(int(a), int(b)) for a, b in zip(offs[:-1], offs[1:])]

    def _apply(self, x):
        raise NotImplementedError

    def _apply_adjoint(self, y):
        raise NotImplementedError

    def _block_apply(self, i, xi):
        raise NotImplementedError

    def _block_apply_adjoint(self, i, y):
        raise NotImplementedError

    def apply(self, x: np.ndarray, counter: Counters | None = None) -> np.ndarray:
        if x.shape != (self.m,):
            raise ValueError(f"expected primal vector of shape ({self.m},), got {x.shape}")
        if counter is not None:
            counter.full_apply += 1
            counter.block_ops += self.N
        return self._apply(x)

    def apply_adjoint(self, y: np.ndarray, counter: Counters | None = None) -> np.ndarray:
        if y.shape != (self.n,):
            raise ValueError(f"expected dual vector of shape ({self.n},), got {y.shape}")
        if counter is not None:
            counter.full_adjoint += 1
            counter.block_ops += self.N
        return self._apply_adjoint(y)

    def block_apply(self, i: int, xi: np.ndarray, counter: Counters | None = None) -> np.ndarray:
        if counter is not None:
            counter.block_apply += 1
            counter.block_ops += 1
        return self._block_apply(i, xi)

    def block_apply_adjoint(self, i: int, y: np.ndarray, counter: Counters | None = None) -> np.ndarray:
        if counter is not None:
            counter.block_adjoint += 1
            counter.block_ops += 1
        return self._block_apply_adjoint(i, y)

    def to_dense(self) -> np.ndarray:
        return np.column_stack([self._apply(e) for e in np.eye(self.m)]) if self.m else np.zeros((self.n, 0))

    def block_dense(self, i: int) -> np.ndarray:
        return self.to_dense()[:, self.slices[i]]

    # certified spectral constants -------------------------------------------------

    def exact_spectrum(self) -> tuple[float, float, float] | None:
        """Structure-specific closed form ``(s_min, s_max, bar_s_max)``, if any."""
        return None

    def set_spectrum(self, s_min: float, s_max: float, bar_s_max: float) -> None:
        self._spectrum = (float(s_min), float(s_max), float(bar_s_max))

    @property
    def spectrum(self) -> tuple[float, float, float]:
        if self._spectrum is None:
            spec = self.exact_spectrum()
            if spec is None:
                from .spectral import dense_spectrum
                spec = dense_spectrum(self)
            self._spectrum = spec
        return self._spectrum

    @property
    def s_min(self) -> float:
        return self.spectrum[0]

    @property
    def s_max(self) -> float:
        return self.spectrum[1]

    @property
    def bar_s_max(self) -> float:
        return self.spectrum[2]


class DenseCoupling(CouplingOperator):
    kind = "dense"

    def __init__(self, M: np.ndarray, block_sizes: Sequence[int] | None = None):
        super().__init__()
        self.M = np.ascontiguousarray(M, dtype=float)
        self.n, self.m = self.M.shape
        self.block_sizes = [self.m] if block_sizes is None else [int(b) for b in block_sizes]
        if sum(self.block_sizes) != self.m:
            raise ValueError("block sizes must sum to the number of columns")
        self._MT = np.ascontiguousarray(self.M.T)
        self._blocks = [np.ascontiguousarray(self.M[:, sl]) for sl in self.slices]
        self._blocksT = [np.ascontiguousarray(B.T) for B in self._blocks]

    def _apply(self, x):
        return self.M @ x

    def _apply_adjoint(self, y):
        return self._MT @ y

    def _block_apply(self, i, xi):
        return self._blocks[i] @ xi

    def _block_apply_adjoint(self, i, y):
        return self._blocksT[i] @ y

    def to_dense(self):
        return self.M.copy()

    def block_dense(self, i):
        return self._blocks[i].copy()


def chain_apply(x: np.ndarray) -> np.ndarray:
    """Multiply by the symmetric zero-chain matrix ``A`` (``A^2`` is tridiagonal)."""
    r = x[::-1]
    out = r.copy()
    out[1:] -= r[:-1]
    return out


class ChainCoupling(CouplingOperator):
    """``M = (-s_lo I, s_hat A)`` acting on ``x = (x1, x2)`` with ``A`` the chain matrix."""

    kind = "chain"

    def __init__(self, n: int, s_lo: float, s_hat: float):
        super().__init__()
        self.n = int(n)
        self.m = 2 * self.n
        self.s_lo = float(s_lo)
        self.s_hat = float(s_hat)
        self.block_sizes = [self.m]

    def _apply(self, x):
        return -self.s_lo * x[: self.n] + self.s_hat * chain_apply(x[self.n:])

    def _apply_adjoint(self, y):
        return np.concatenate([-self.s_lo * y, self.s_hat * chain_apply(y)])

    def _block_apply(self, i, xi):
        return self._apply(xi)

    def _block_apply_adjoint(self, i, y):
        return self._apply_adjoint(y)

    def to_dense(self):
        from .hard import chain_matrix
        return np.hstack([-self.s_lo * np.eye(self.n), self.s_hat * chain_matrix(self.n)])

    def exact_spectrum(self):
        from .hard import chain_sq_eigenvalues
        lam2 = chain_sq_eigenvalues(self.n)
        sv = np.sqrt(self.s_lo**2 + self.s_hat**2 * lam2)
        return float(sv.min()), float(sv.max()), float(sv.max())


class KroneckerCoupling(CouplingOperator):
    """``M = sign * (S^T kron I_p)`` applied without forming the Kronecker product.

    Primal vectors are column-major ``vec(X)`` with ``X`` of shape ``(p, p)``;
    dual vectors are ``vec(Y)`` with ``Y = (y_1, ..., y_T)`` of shape ``(p, T)``.
    """

    kind = "kron"

    def __init__(self, S: np.ndarray, sign: float = 1.0):
        super().__init__()
        self.S = np.asarray(S, dtype=float)
        self.p, self.T = self.S.shape
        self.sign = float(sign)
        self.m = self.p * self.p
        self.n = self.p * self.T
        self.block_sizes = [self.m]

    def _apply(self, x):
        X = x.reshape(self.p, self.p, order="F")
        return self.sign * (X @ self.S).reshape(-1, order="F")

    def _apply_adjoint(self, y):
        Y = y.reshape(self.p, self.T, order="F")
        return self.sign * (Y @ self.S.T).reshape(-1, order="F")

    def _block_apply(self, i, xi):
        return self._apply(xi)

    def _block_apply_adjoint(self, i, y):
        return self._apply_adjoint(y)

    def to_dense(self):
        return self.sign * np.kron(self.S.T, np.eye(self.p))

    def exact_spectrum(self):
        sv = np.linalg.svd(self.S, compute_uv=False)
        return float(sv.min()), float(sv.max()), float(sv.max())


# ---------------------------------------------------------------------------
# problem and certificate


@dataclass
class SaddleProblem:
    objective: SmoothOracle | BlockObjective
    coupling: CouplingOperator
    b: np.ndarray
    dual_term: ProxTerm = field(default_factory=ZeroTerm)
    name: str = ""

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        if self.objective.dim != self.coupling.m:
            raise ValueError(f"objective dim {self.objective.dim} != coupling columns {self.coupling.m}")
        if self.b.shape != (self.coupling.n,):
            raise ValueError(f"offset b must have shape ({self.coupling.n},)")
        if isinstance(self.objective, BlockObjective) and self.objective.block_sizes != self.coupling.block_sizes:
            raise ValueError("objective and coupling block structures differ")

    @property
    def m(self) -> int:
        return self.coupling.m

    @property
    def n(self) -> int:
        return self.coupling.n

    @property
    def N(self) -> int:
        return self.coupling.N

    @property
    def mu(self) -> float:
        return self.objective.mu

    @property
    def lip(self) -> float:
        return self.objective.lip

    @property
    def bar_lip(self) -> float:
        return getattr(self.objective, "bar_lip", self.objective.lip)

    @property
    def oracle(self) -> SmoothOracle:
        obj = self.objective
        return obj.oracle if isinstance(obj, BlockObjective) else obj

    @property
    def is_block(self) -> bool:
        return isinstance(self.objective, BlockObjective)

    @property
    def separable(self) -> bool:
        return self.is_block and self.objective.separable


@dataclass
class SaddleCertificate:
    """Saddle point ``(x*, y*)`` with ``g* = M x* - b``."""

    x_star: np.ndarray
    y_star: np.ndarray
    g_star: np.ndarray
    quality: str = "exact-closed-form"
    tol: float = 0.0

    @classmethod
    def from_primal_dual(cls, problem: SaddleProblem, x, y, quality="exact-closed-form", tol=0.0):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        g = problem.coupling.apply(x) - problem.b
        return cls(x, y, g, quality, float(tol))

    @property
    def is_exact(self) -> bool:
        return self.quality == "exact-closed-form"


# ---------------------------------------------------------------------------
# metrics


def default_probe_step(problem: SaddleProblem) -> float:
    return 1.0 / problem.coupling.s_max**2


def kkt_residual(problem: SaddleProblem, x: np.ndarray, y: np.ndarray,
                 probe_step: float | None = None) -> tuple[float, float]:
    """Return ``(||grad f(x) + M^T y||, primal residual)``.

    The primal residual is ``||Mx - b||`` when ``phi == 0`` and otherwise the
    prox fixed-point residual ``||y - prox_{s phi}(y + s(Mx - b))|| / s``.
    """
    if x.shape != (problem.m,) or y.shape != (problem.n,):
        raise ValueError("dimension mismatch in kkt_residual")
    if probe_step is None:
        probe_step = default_probe_step(problem)
    if not probe_step > 0:
        raise ValueError("probe_step must be positive")
    M = problem.coupling
    r_dual = float(np.linalg.norm(problem.objective.gradient(x) + M.apply_adjoint(y)))
    g = M.apply(x) - problem.b
    if isinstance(problem.dual_term, ZeroTerm):
        r_prim = float(np.linalg.norm(g))
    else:
        s = probe_step
        r_prim = float(np.linalg.norm(y - problem.dual_term.prox(s, y + s * g)) / s)
    return r_dual, r_prim


def bregman_f(oracle, x: np.ndarray, cert: SaddleCertificate) -> float:
    return float(oracle.bregman(x, cert.x_star))


def weighted_norm_sq(coupling: CouplingOperator, y: np.ndarray, c: float) -> float:
    """``y^T (I - c M M^T) y``; requires ``c * s_max^2 < 1``."""
    if not c * coupling.s_max**2 < 1:
        raise ParameterDomainError(f"I - c M M^T is not positive definite (c*s_max^2 = {c * coupling.s_max**2})")
    Mty = coupling.apply_adjoint(y)
    return float(y @ y - c * (Mty @ Mty))


def dphi_bregman(dual_term: ProxTerm, y: np.ndarray, cert: SaddleCertificate) -> float:
    """``phi(y) - phi(y*) - <g*, y - y*>``; ``inf`` outside ``dom phi``."""
    val = dual_term.value(y)
    if not np.isfinite(val):
        return np.inf
    if isinstance(dual_term, ZeroTerm):
        return 0.0
    if dual_term.is_indicator:
        # phi(y) = phi(y*) = 0 inside the domain
        return float(-(cert.g_star @ (y - cert.y_star)))
    dy = y - cert.y_star
    nu = getattr(dual_term, "nu", None)
    if nu is not None:
        # per-coordinate differences keep roundoff proportional to |y - y*| rather than |y|
        return float(np.sum(nu * (np.abs(y) - np.abs(cert.y_star)) - cert.g_star * dy))
    return float(val - dual_term.value(cert.y_star) - cert.g_star @ dy)
