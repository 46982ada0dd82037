"""Zero-chain hard instances with closed-form saddle points and lower-bound predicates."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal, solveh_banded

from .problem import (BlockObjective, ChainCoupling, DenseCoupling, ParameterDomainError,
                      QuadraticOracle, SaddleCertificate, SaddleProblem, chain_apply)
from .prox import ZeroTerm

__all__ = [
    "chain_matrix",
    "chain_sq_eigenvalues",
    "ChainMatrix",
    "HardC1",
    "HardC2",
    "HardC1Stoc",
    "build_c1",
    "saddle_c1",
    "lower_bound_iterations_c1",
    "build_c2",
    "saddle_c2",
    "kkt_residual_c2",
    "build_c1_stoc",
    "dual_value_quadratic",
    "primal_value_quadratic",
    "verify_empirical_lower_bound",
    "LowerBoundReport",
    "q_c1",
    "q_c2",
]


def chain_matrix(n: int) -> np.ndarray:
    A = np.zeros((n, n))
    for i in range(n):
        A[i, n - 1 - i] = 1.0
        if i > 0:
            A[i, n - i] = -1.0
    return A


def chain_sq_eigenvalues(n: int) -> np.ndarray:
    d = np.full(n, 2.0)
    d[0] = 1.0
    return eigh_tridiagonal(d, -np.ones(n - 1), eigvals_only=True)


class ChainMatrix:
    """Matrix-free ``A``, ``A^2`` and banded solves with ``A^2``-polynomials."""

    def __init__(self, n: int):
        if n < 1:
            raise ValueError("chain dimension must be positive")
        self.n = int(n)

    def apply_A(self, x):
        return chain_apply(x)

    def apply_A2(self, x):
        out = 2.0 * x
        out[0] = x[0]
        out[:-1] -= x[1:]
        out[1:] -= x[:-1]
        return out

    def dense(self) -> np.ndarray:
        return chain_matrix(self.n)

    def _a2_bands(self):
        d = np.full(self.n, 2.0)
        d[0] = 1.0
        return d, -np.ones(self.n - 1)

    def _solve(self, ab, rhs, matvec):
        x = solveh_banded(ab, rhs)
        r = rhs - matvec(x)
        if np.linalg.norm(r) > 1e-12 * np.linalg.norm(rhs):
            x = x + solveh_banded(ab, r)
        return x

    def solve_A2(self, rhs):
        d, e = self._a2_bands()
        ab = np.zeros((2, self.n))
        ab[0, 1:] = e
        ab[1] = d
        return self._solve(ab, rhs, self.apply_A2)

    def solve_I_plus_A2(self, a, rhs):
        """Solve ``(I + a A^2) y = rhs``."""
        d, e = self._a2_bands()
        ab = np.zeros((2, self.n))
        ab[0, 1:] = a * e
        ab[1] = 1.0 + a * d
        return self._solve(ab, rhs, lambda v: v + a * self.apply_A2(v))

    def solve_A4_quartic(self, a, b, rhs):
        """Solve ``(A^4 + a A^2 + b I) y = rhs`` (pentadiagonal)."""
        n = self.n
        A2 = np.zeros((n, n)) if n <= 2 else None
        if A2 is not None:
            D = np.diag(self._a2_bands()[0]) + np.diag(self._a2_bands()[1], 1) + np.diag(self._a2_bands()[1], -1)
            return np.linalg.solve(D @ D + a * D + b * np.eye(n), rhs)
        d0 = np.full(n, 6.0)
        d0[0], d0[-1] = 2.0, 5.0
        d1 = np.full(n - 1, -4.0)
        d1[0] = -3.0
        d2 = np.ones(n - 2)
        ab = np.zeros((3, n))
        ab[0, 2:] = d2
        ab[1, 1:] = d1 - a
        ab[2] = d0 + a * self._a2_bands()[0] + b
        mv = lambda v: self.apply_A2(self.apply_A2(v)) + a * self.apply_A2(v) + b * v
        return self._solve(ab, rhs, mv)


def _check_ratio(s_min, s_max):
    if not (s_min > 0 and s_max >= math.sqrt(5) * s_min * (1 - 1e-14)):
        raise ParameterDomainError("hard instances need s_max >= sqrt(5) * s_min > 0")


def q_c1(alpha: float) -> float:
    """Root in (0, 1) of ``alpha q^2 - (1 + 2 alpha) q + alpha = 0``."""
    return 1.0 - 2.0 / (math.sqrt(1 + 4 * alpha) + 1)


def q_c2(alpha: float, beta: float) -> float:
    """Root in (0, 1) of the palindromic quartic, via ``w = q + 1/q``."""
    disc = alpha * alpha - 4 * beta
    if disc < 0:
        raise ParameterDomainError("quartic has no real root in (0, 1)")
    delta = 2 * beta / (alpha + math.sqrt(disc))          # w - 2
    q = 2.0 / (2.0 + delta + math.sqrt(delta * (4.0 + delta)))
    # one Newton polish on the quartic
    P = lambda z: 1 - (4 + alpha) * z + (6 + 2 * alpha + beta) * z**2 - (4 + alpha) * z**3 + z**4
    dP = lambda z: -(4 + alpha) + 2 * (6 + 2 * alpha + beta) * z - 3 * (4 + alpha) * z**2 + 4 * z**3
    d = dP(q)
    if d != 0:
        qn = q - P(q) / d
        if 0 < qn < 1 and abs(P(qn)) <= abs(P(q)):
            q = qn
    return q


def _geom(q, n):
    return np.exp(np.arange(1, n + 1) * math.log(q))


# ---------------------------------------------------------------------------
# strongly convex - linear case


@dataclass
class HardC1:
    n: int
    L: float
    mu: float
    s_min: float
    s_max: float
    hat_s: float
    alpha: float
    q: float
    h_hat: np.ndarray
    h: np.ndarray
    problem: SaddleProblem
    chain: ChainMatrix
    _cert: SaddleCertificate | None = field(default=None, repr=False)

    @property
    def y_hat(self) -> np.ndarray:
        return _geom(self.q, self.n)

    @property
    def cert(self) -> SaddleCertificate:
        if self._cert is None:
            self._cert = saddle_c1(self)
        return self._cert


def build_c1(L: float, mu: float, s_min: float, s_max: float, k_budget: int = 1) -> HardC1:
    if not (L >= mu > 0):
        raise ParameterDomainError("need L >= mu > 0")
    _check_ratio(s_min, s_max)
    hat_s = math.sqrt(s_max**2 - s_min**2) / 2
    alpha = (L / mu) * hat_s**2 / s_min**2
    q = q_c1(alpha)
    n_rule = 2 * math.log((2 + 2 * math.sqrt(2)) * alpha) / math.log(1 / q)
    n = max(int(math.ceil(n_rule)), int(k_budget), 2)
    chain = ChainMatrix(n)
    h_hat = np.zeros(n)
    h_hat[0] = (1 + alpha) * q - alpha * q * q
    # A^{-1} = A (A^2)^{-1} since A is symmetric
    h = (mu / L) * (s_min**2 / hat_s) * chain.apply_A(chain.solve_A2(h_hat))
    oracle = QuadraticOracle(np.concatenate([np.full(n, L), np.full(n, mu)]),
                             np.concatenate([np.zeros(n), h]), mu=mu, lip=L)
    problem = SaddleProblem(oracle, ChainCoupling(n, s_min, hat_s), np.zeros(n), ZeroTerm(), name="hard-c1")
    return HardC1(n, L, mu, s_min, s_max, hat_s, alpha, q, h_hat, h, problem, chain)


def saddle_c1(inst: HardC1) -> SaddleCertificate:
    ch = inst.chain
    Ah = ch.apply_A(inst.h)
    w = ch.solve_I_plus_A2(inst.alpha, Ah)
    x1 = inst.hat_s / (inst.mu * inst.s_min) * w
    x2 = ch.solve_I_plus_A2(inst.alpha, inst.h) / inst.mu
    y = (inst.L / inst.mu) * (inst.hat_s / inst.s_min**2) * w
    return SaddleCertificate.from_primal_dual(inst.problem, np.concatenate([x1, x2]), y)


def _log_over_q(inst_q, ratio):
    return 2.0 * math.log(ratio) / math.log(1.0 / inst_q)


def lower_bound_iterations_c1(inst: HardC1, eps: float, kind: str = "dual", y0=None) -> int:
    """Fewest iterations any span-respecting method may need on ``inst``.

    ``kind="dual"``: smallest k with ``q^{k/2} ||y0 - y*|| / (2 sqrt 2) <= eps``.
    ``kind="gap"``: smallest k with ``q^k s_min^2 ||y0 - y*||^2 / (16 L) <= eps``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    y0 = np.zeros(inst.n) if y0 is None else y0
    r0 = float(np.linalg.norm(y0 - inst.cert.y_star))
    if kind == "dual":
        ratio = r0 / (2 * math.sqrt(2) * eps)
        k = _log_over_q(inst.q, ratio) if ratio > 1 else 0.0
    elif kind == "gap":
        ratio = inst.s_min**2 * r0**2 / (16 * inst.L * eps)
        k = math.log(ratio) / math.log(1 / inst.q) if ratio > 1 else 0.0
    else:
        raise ValueError(f"unknown bound kind {kind!r}")
    # guard against rounding just above an integer
    return int(math.ceil(k - 1e-9))


def primal_value_quadratic(problem: SaddleProblem, x) -> float:
    """``Phi_x(x) = f(x)`` when ``Mx = b`` (phi == 0), else ``+inf``."""
    r = problem.coupling.apply(x) - problem.b
    if np.linalg.norm(r) > 1e-10 * (1 + np.linalg.norm(problem.b)):
        return math.inf
    return problem.oracle.value(x)


def dual_value_quadratic(inst, y) -> float:
    """``Phi_y(y) = -b^T y - f^*(-M^T y)`` for diagonal quadratic ``f`` and ``phi == 0``."""
    problem = inst.problem if hasattr(inst, "problem") else inst
    oracle = problem.oracle
    if not isinstance(oracle, QuadraticOracle) or not oracle.diagonal:
        raise ValueError("closed-form dual value needs a diagonal quadratic objective")
    if not isinstance(problem.dual_term, ZeroTerm):
        raise ValueError("closed-form dual value assumes phi == 0")
    z = -problem.coupling.apply_adjoint(np.asarray(y, dtype=float))
    u = z + oracle.c
    return float(-problem.b @ y - 0.5 * np.sum(u * u / oracle.H))


@dataclass
class LowerBoundReport:
    violations: list
    checked: int
    margins: list

    @property
    def passed(self) -> bool:
        return not self.violations


def verify_empirical_lower_bound(inst: HardC1, y_iterates, slack: float = 1e-6) -> LowerBoundReport:
    """Check ``||y^{2k} - y*|| >= q^k ||y0 - y*|| / (2 sqrt 2)`` for every ``2k <= n``."""
    ys = list(y_iterates)
    if not ys or np.any(ys[0] != 0):
        raise ValueError("lower-bound verification needs a zero start")
    y_star = inst.cert.y_star
    r0 = float(np.linalg.norm(ys[0] - y_star))
    viol, margins = [], []
    checked = 0
    for k in range(0, inst.n // 2 + 1):
        if 2 * k >= len(ys):
            break
        err = float(np.linalg.norm(ys[2 * k] - y_star))
        bound = math.exp(k * math.log(inst.q)) / (2 * math.sqrt(2)) * r0
        checked += 1
        margins.append(err / bound if bound > 0 else math.inf)
        if err * (1 + slack) < bound:
            viol.append((2 * k, err, bound))
    return LowerBoundReport(viol, checked, margins)


# ---------------------------------------------------------------------------
# convex - concave case


@dataclass
class HardC2:
    ell: int
    Lx: float
    Ly: float
    s_min: float
    s_max: float
    hat_s: float
    alpha: float
    beta: float
    q: float
    h_hat: np.ndarray
    h: np.ndarray
    chain: ChainMatrix
    _cert: SaddleCertificate | None = field(default=None, repr=False)

    @property
    def y2_hat(self) -> np.ndarray:
        return _geom(self.q, self.ell)

    def M_apply(self, x):
        l = self.ell
        x1, x2 = x[:l], x[l:]
        A = self.chain.apply_A
        return np.concatenate([self.hat_s * A(x1) + self.s_min * x2, -self.s_min * x1 + self.hat_s * A(x2)])

    def M_adjoint(self, y):
        l = self.ell
        y1, y2 = y[:l], y[l:]
        A = self.chain.apply_A
        return np.concatenate([self.hat_s * A(y1) - self.s_min * y2, self.s_min * y1 + self.hat_s * A(y2)])

    def M_dense(self) -> np.ndarray:
        A = chain_matrix(self.ell)
        I = np.eye(self.ell)
        return np.block([[self.hat_s * A, self.s_min * I], [-self.s_min * I, self.hat_s * A]])

    def grad_f(self, x):
        return np.concatenate([self.Lx * x[: self.ell], np.zeros(self.ell)])

    def grad_g(self, y):
        return np.concatenate([self.Ly * y[: self.ell], -self.h])

    @property
    def cert(self) -> SaddleCertificate:
        if self._cert is None:
            self._cert = saddle_c2(self)
        return self._cert


def build_c2(Lx: float, Ly: float, s_min: float, s_max: float, k_budget: int = 1) -> HardC2:
    if not (Lx > 0 and Ly > 0):
        raise ParameterDomainError("need Lx, Ly > 0")
    _check_ratio(s_min, s_max)
    hat_s = math.sqrt(s_max**2 - s_min**2) / 2
    alpha = 2 * s_min**2 / hat_s**2 + Lx * Ly / hat_s**2
    beta = s_min**4 / hat_s**4
    q = q_c2(alpha, beta)
    rule = 2 * math.log((2 + 2 * math.sqrt(2)) * (7 + alpha) / beta) / math.log(1 / q)
    ell = max(int(math.ceil(rule)), int(k_budget) + 1, 3)
    h_hat = np.zeros(ell)
    h_hat[0] = (2 + alpha + beta) * q - (3 + alpha) * q**2 + q**3
    h_hat[1] = q - 1
    h = hat_s**4 / (Lx * s_min**2) * h_hat
    return HardC2(ell, Lx, Ly, s_min, s_max, hat_s, alpha, beta, q, h_hat, h, ChainMatrix(ell))


def saddle_c2(inst: HardC2) -> SaddleCertificate:
    ch = inst.chain
    y2 = ch.solve_A4_quartic(inst.alpha, inst.beta, (inst.Lx * inst.s_min**2 / inst.hat_s**4) * inst.h)
    y1 = -(inst.hat_s / inst.s_min) * ch.apply_A(y2)
    x1 = (inst.s_min * y2 - inst.hat_s * ch.apply_A(y1)) / inst.Lx
    x2 = (inst.Ly * y1 - inst.hat_s * ch.apply_A(x1)) / inst.s_min
    x = np.concatenate([x1, x2])
    y = np.concatenate([y1, y2])
    return SaddleCertificate(x, y, inst.M_apply(x), "exact-closed-form", 0.0)


def kkt_residual_c2(inst: HardC2, x, y) -> tuple[float, float]:
    """``(||grad f(x) + M^T y||, ||M x - grad g(y)||)`` for ``min_x max_y f + y^T M x - g``."""
    return (float(np.linalg.norm(inst.grad_f(x) + inst.M_adjoint(y))),
            float(np.linalg.norm(inst.M_apply(x) - inst.grad_g(y))))


# ---------------------------------------------------------------------------
# block copies for the stochastic lower bound


@dataclass
class HardC1Stoc:
    N: int
    copy: HardC1
    problem: SaddleProblem
    cert: SaddleCertificate

    @property
    def n(self) -> int:
        return self.N * self.copy.n

    def block_lower_bound(self, eps: float, y0=None) -> int:
        """Block iterations needed for ``||y^k - y*|| <= eps``."""
        y0 = np.zeros(self.n) if y0 is None else y0
        r0 = float(np.linalg.norm(y0 - self.cert.y_star))
        ratio = r0 / (2 * math.sqrt(2) * eps)
        if ratio <= 1:
            return 0
        return int(math.ceil(2 * self.N * math.log(ratio) / math.log(1 / self.copy.q) - 1e-9))


def build_c1_stoc(barL: float, mu: float, s_min: float, bar_s_max: float, N: int, k_budget: int = 1) -> HardC1Stoc:
    if N < 1:
        raise ValueError("N must be positive")
    one = build_c1(barL, mu, s_min, bar_s_max, k_budget=max(1, k_budget // N))
    nc = one.n
    Mc = one.problem.coupling.to_dense()          # nc x 2nc
    M = np.zeros((N * nc, 2 * N * nc))
    for i in range(N):
        M[i * nc:(i + 1) * nc, 2 * i * nc:2 * (i + 1) * nc] = Mc
    H = np.tile(one.problem.oracle.H, N)
    c = np.tile(one.problem.oracle.c, N)
    oracle = QuadraticOracle(H, c, mu=mu, lip=barL)
    coupling = DenseCoupling(M, [2 * nc] * N)
    coupling.set_spectrum(*one.problem.coupling.spectrum)
    problem = SaddleProblem(BlockObjective(oracle, [2 * nc] * N, separable=True), coupling,
                            np.zeros(N * nc), ZeroTerm(), name="hard-c1-stoc")
    cc = one.cert
    x_star = np.concatenate([cc.x_star] * N)
    y_star = np.concatenate([cc.y_star] * N)
    cert = SaddleCertificate.from_primal_dual(problem, x_star, y_star)
    return HardC1Stoc(N, one, problem, cert)
