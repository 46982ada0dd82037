"""Random test-problem generators and spectral utilities.

Four families are provided:

* CST: pseudo-Huber plus ridge objective, Gaussian measurement matrix with a
  prescribed singular-value range, sparse 0/1 ground truth.
* NSE: robust identification of a linear time-invariant system, with a
  Kronecker-structured coupling and group-ball dual constraints.
* QP with an l1 dual penalty.
* QP with inequality constraints and a planted solution.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import rng as _rng
from .problem import (BlockObjective, DenseCoupling, KroneckerCoupling, ParameterDomainError,
                      PseudoHuberOracle, QuadraticOracle, SaddleCertificate, SaddleProblem)
from .prox import GroupBallTerm, L1Term, NonnegTerm, ZeroTerm
from .spectral import certify_spectrum

__all__ = [
    "rescale_spectrum",
    "CstConfig",
    "CstInstance",
    "gen_cst",
    "NseConfig",
    "NseInstance",
    "gen_nse",
    "QpConfig",
    "QpInstance",
    "gen_qp",
    "certify_spectrum",
    "cst_e",
]

RANK_TOL = 1e-12
INACTIVE_MARGIN = 1e-6


def rescale_spectrum(G: np.ndarray, s_min: float, s_max: float) -> np.ndarray:
    """Map the singular values of a wide matrix affinely onto ``[s_min, s_max]``.

    If all singular values coincide they are all set to ``s_max``.
    """
    G = np.asarray(G, dtype=float)
    if not 0 < s_min <= s_max:
        raise ParameterDomainError("need 0 < s_min <= s_max")
    n, m = G.shape
    if n > m:
        raise ParameterDomainError("matrix has more rows than columns, cannot have full row rank")
    U, sv, Vt = np.linalg.svd(G, full_matrices=False)
    lo, hi = sv.min(), sv.max()
    if hi == 0 or lo <= RANK_TOL * hi:
        raise ParameterDomainError("matrix is (numerically) rank deficient")
    if hi - lo <= 1e-14 * hi:
        new = np.full_like(sv, s_max)
    else:
        new = s_min + (sv - lo) * ((s_max - s_min) / (hi - lo))
        new[np.argmin(sv)] = s_min
        new[np.argmax(sv)] = s_max
    return (U * new) @ Vt


def _spectral_matrix(rng, n, m, s_min, s_max, retries=5):
    for _ in range(retries):
        try:
            return rescale_spectrum(_rng.gaussian(rng, (n, m)), s_min, s_max)
        except ParameterDomainError:
            if n > m:
                raise
    raise ParameterDomainError("could not draw a full-row-rank Gaussian matrix")


def _install_spectrum(coupling, mode="dense-svd"):
    coupling.set_spectrum(*certify_spectrum(coupling, mode))
    return coupling


def cst_e(kappa: float) -> float:
    if not kappa > 1:
        raise ParameterDomainError(f"kappa must exceed 1 (got {kappa})")
    return math.sqrt(1.0 / (kappa - 1.0))


# ---------------------------------------------------------------------------
# CST


@dataclass(frozen=True)
class CstConfig:
    m: int = 1000
    n: int = 250
    nnz: int = 50
    kappa: float = 1e4
    s_min: float = 1.0
    s_max: float = 10.0 ** 2.5
    seed: int = 0
    N: int = 1  # number of equal primal blocks

    def validate(self):
        if not (self.m >= 1 and self.n >= 1 and 0 <= self.nnz <= self.m):
            raise ParameterDomainError("need m, n >= 1 and 0 <= nnz <= m")
        if self.n > self.m:
            raise ParameterDomainError("need n <= m for a full-row-rank coupling")
        cst_e(self.kappa)
        if not 0 < self.s_min <= self.s_max:
            raise ParameterDomainError("need 0 < s_min <= s_max")
        if self.N < 1 or self.m % self.N:
            raise ParameterDomainError("N must divide m")


@dataclass
class CstInstance:
    cfg: CstConfig
    e: float
    x_sharp: np.ndarray
    M: np.ndarray
    b: np.ndarray
    problem: SaddleProblem

    @property
    def mu(self):
        return self.e

    @property
    def lip(self):
        return self.e + 1.0 / self.e


def gen_cst(cfg: CstConfig) -> CstInstance:
    cfg.validate()
    rng = _rng.make_rng(cfg.seed)
    M = _spectral_matrix(rng, cfg.n, cfg.m, cfg.s_min, cfg.s_max)
    x_sharp = np.zeros(cfg.m)
    x_sharp[_rng.choice_without_replacement(rng, cfg.m, cfg.nnz)] = 1.0
    b = M @ x_sharp
    e = cst_e(cfg.kappa)
    oracle = PseudoHuberOracle(cfg.m, e)
    sizes = [cfg.m // cfg.N] * cfg.N
    objective = BlockObjective(oracle, sizes) if cfg.N > 1 else oracle
    coupling = _install_spectrum(DenseCoupling(M, sizes))
    prob = SaddleProblem(objective, coupling, b, ZeroTerm(), name="cst")
    return CstInstance(cfg, e, x_sharp, M, b, prob)


# ---------------------------------------------------------------------------
# NSE


@dataclass(frozen=True)
class NseConfig:
    p: int = 40
    T: int = 10
    rho: float = 0.7
    lam: float = 1000.0
    kappa: float = 1e4
    density: float = 0.2
    seed: int = 0

    def validate(self):
        if self.p < 1 or self.T < 1:
            raise ParameterDomainError("need p, T >= 1")
        if not 0 <= self.rho <= 1:
            raise ParameterDomainError("need 0 <= rho <= 1")
        if self.T > self.p:
            raise ParameterDomainError("need T <= p so the coupling has full row rank")
        if not self.lam > 0:
            raise ParameterDomainError("lambda must be positive")
        cst_e(self.kappa)


@dataclass
class NseInstance:
    cfg: NseConfig
    X_bar: np.ndarray
    states: np.ndarray        # (p, T+1): s_0 ... s_T
    disturbances: np.ndarray  # (p, T): d_0 ... d_{T-1}
    problem: SaddleProblem

    @property
    def S0(self) -> np.ndarray:
        return self.states[:, :-1]

    @property
    def S1(self) -> np.ndarray:
        return self.states[:, 1:]


def _sparse_system_matrix(rng, p, density):
    while True:
        mask = rng.random((p, p)) < density
        vals = _rng.gaussian(rng, (p, p))
        X = np.where(mask, vals, 0.0)
        nrm = np.linalg.norm(X, 2)
        if nrm > 0:
            return X / nrm


def gen_nse(cfg: NseConfig) -> NseInstance:
    cfg.validate()
    rng = _rng.make_rng(cfg.seed)
    p, T = cfg.p, cfg.T
    X_bar = _sparse_system_matrix(rng, p, cfg.density)
    states = np.empty((p, T + 1))
    dist = np.zeros((p, T))
    states[:, 0] = _rng.gaussian(rng, p)
    for t in range(T):
        s_t = states[:, t]
        if rng.random() < cfg.rho:
            sigma = math.sqrt(min(float(s_t @ s_t), 1.0 / p))
            dist[:, t] = sigma * _rng.gaussian(rng, 1)[0] * _rng.uniform_sphere(rng, p)
        states[:, t + 1] = X_bar @ s_t + dist[:, t]
    coupling = KroneckerCoupling(states[:, :-1], sign=-1.0)
    s_lo, s_hi, _ = coupling.exact_spectrum()
    if not s_lo > RANK_TOL * s_hi:
        raise ParameterDomainError("state trajectory is rank deficient")
    coupling.set_spectrum(s_lo, s_hi, s_hi)
    b = -states[:, 1:].reshape(-1, order="F")
    prob = SaddleProblem(PseudoHuberOracle(p * p, cst_e(cfg.kappa)), coupling, b,
                         GroupBallTerm(cfg.lam, p), name="nse")
    return NseInstance(cfg, X_bar, states, dist, prob)


# ---------------------------------------------------------------------------
# QP


@dataclass(frozen=True)
class QpConfig:
    variant: str = "l1"          # "l1" or "inequality"
    m: int = 300
    n: int = 100                 # l1 variant only
    n_active: int = 50           # inequality variant only
    n_inactive: int = 50
    L: float = 1000.0
    mu: float = 1.0
    s_min: float = 1.0
    s_max: float = 1000.0
    nu: float = 0.01
    seed: int = 0
    max_retries: int = 20

    def validate(self):
        if self.variant not in ("l1", "inequality"):
            raise ParameterDomainError(f"unknown QP variant {self.variant!r}")
        if not 0 < self.mu <= self.L:
            raise ParameterDomainError("need 0 < mu <= L")
        if not 0 < self.s_min <= self.s_max:
            raise ParameterDomainError("need 0 < s_min <= s_max")
        rows = self.n if self.variant == "l1" else self.n_active + self.n_inactive
        if not 1 <= rows <= self.m:
            raise ParameterDomainError("need 1 <= n <= m")
        if self.variant == "inequality" and (self.n_active < 1 or self.n_inactive < 0):
            raise ParameterDomainError("need n_active >= 1 and n_inactive >= 0")
        if self.variant == "l1" and not self.nu > 0:
            raise ParameterDomainError("nu must be positive")


@dataclass
class QpInstance:
    cfg: QpConfig
    H: np.ndarray
    c: np.ndarray
    M: np.ndarray
    b: np.ndarray
    problem: SaddleProblem
    x_star: np.ndarray | None = None
    y_active: np.ndarray | None = None
    cert: SaddleCertificate | None = None
    attempts: int = 1


def _spd(rng, m, mu, L):
    P = _rng.orthogonal(rng, m)
    lam = rng.random(m)
    lo, hi = lam.min(), lam.max()
    lam = np.full(m, L) if hi - lo <= 1e-14 else mu + (lam - lo) * ((L - mu) / (hi - lo))
    lam[np.argmin(lam)] = mu
    lam[np.argmax(lam)] = L
    H = (P * lam) @ P.T
    return 0.5 * (H + H.T)


def _attempt_rng(seed, k):
    if k == 0:
        return _rng.make_rng(seed)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(k)])))


def gen_qp(cfg: QpConfig) -> QpInstance:
    cfg.validate()
    if cfg.variant == "l1":
        rng = _rng.make_rng(cfg.seed)
        H = _spd(rng, cfg.m, cfg.mu, cfg.L)
        M = _spectral_matrix(rng, cfg.n, cfg.m, cfg.s_min, cfg.s_max)
        b = _rng.gaussian(rng, cfg.n)
        c = _rng.gaussian(rng, cfg.m)
        prob = SaddleProblem(QuadraticOracle(H, c, cfg.mu, cfg.L), _install_spectrum(DenseCoupling(M)),
                             b, L1Term(cfg.nu), name="qp-l1")
        return QpInstance(cfg, H, c, M, b, prob)

    for k in range(cfg.max_retries):
        rng = _attempt_rng(cfg.seed, k)
        H = _spd(rng, cfg.m, cfg.mu, cfg.L)
        Ma = _spectral_matrix(rng, cfg.n_active, cfg.m, cfg.s_min, cfg.s_max)
        Mi = (_spectral_matrix(rng, cfg.n_inactive, cfg.m, cfg.s_min, cfg.s_max)
              if cfg.n_inactive else np.zeros((0, cfg.m)))
        x_star = _rng.gaussian(rng, cfg.m)
        b_act = Ma @ x_star
        b_bar = Mi @ x_star
        margin = np.abs(_rng.gaussian(rng, cfg.n_inactive) * b_bar)
        b_in = b_bar + margin
        y_act = np.abs(_rng.gaussian(rng, cfg.n_active))
        if np.any(margin < INACTIVE_MARGIN * np.abs(b_in)) or np.any(margin <= 0):
            continue
        M = np.vstack([Ma, Mi])
        try:
            coupling = _install_spectrum(DenseCoupling(M))
        except Exception:
            continue
        if not coupling.s_min > RANK_TOL * coupling.s_max:
            continue
        c = H @ x_star + Ma.T @ y_act
        b = np.concatenate([b_act, b_in])
        prob = SaddleProblem(QuadraticOracle(H, c, cfg.mu, cfg.L), coupling, b, NonnegTerm(), name="qp-ineq")
        y_star = np.concatenate([y_act, np.zeros(cfg.n_inactive)])
        cert = SaddleCertificate.from_primal_dual(prob, x_star, y_star, "exact-closed-form", 0.0)
        return QpInstance(cfg, H, c, M, b, prob, x_star, y_act, cert, attempts=k + 1)
    raise ParameterDomainError(f"no strictly inactive instance after {cfg.max_retries} attempts")


def config_dict(cfg) -> dict:
    return asdict(cfg)
