"""Lyapunov functions of the accelerated methods and contraction checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .problem import SaddleCertificate, SaddleProblem, dphi_bregman, weighted_norm_sq

__all__ = [
    "LYAPUNOV_KINDS",
    "LyapunovSpec",
    "ContractionReport",
    "SpecMismatchError",
    "psi",
    "psi_components",
    "check_contraction_det",
    "check_contraction_stoc",
    "contraction_ok",
    "psi_floor",
]

# Lyapunov kind -> (state kinds it accepts, method ids whose traces it checks)
LYAPUNOV_KINDS = {
    "x-det": ("x-det", "x-dapd"),
    "y-det": ("y-det", "y-dapd"),
    "x-stoc": ("x-stoc", "x-sbc-dapd"),
    "y-stoc": ("y-stoc", "y-sbc-dapd"),
    "x-stoc-nonsep": ("x-stoc", "x-sbc-nonsep"),
}

REL_TOL = 1e-9
ABS_TOL = 1e-14


class SpecMismatchError(ValueError):
    pass


@dataclass
class LyapunovSpec:
    kind: str
    params: object
    cert: SaddleCertificate
    problem: SaddleProblem

    def __post_init__(self):
        if self.kind not in LYAPUNOV_KINDS:
            raise ValueError(f"unknown Lyapunov kind {self.kind!r}")
        # positive definiteness of the weight matrix
        weighted_norm_sq(self.problem.coupling, np.zeros(self.problem.n), self.weight_c)

    @property
    def N(self) -> int:
        return self.problem.N

    @property
    def weight_c(self) -> float:
        p = self.params
        if self.kind == "x-det":
            return (1 - 2 * p.alpha) * p.hat_s
        if self.kind == "y-det":
            return p.hat_s / 2
        if self.kind in ("x-stoc", "x-stoc-nonsep"):
            return (1 - 2 * p.alpha) * p.hat_s / self.N
        return p.alpha * p.hat_s / self.N

    @property
    def rate(self) -> float:
        return 1.0 - 1.0 / self.params.Pi


def psi_components(spec: LyapunovSpec, state) -> dict:
    """Individual weighted terms of Psi at ``state``."""
    expected = LYAPUNOV_KINDS[spec.kind][0]
    if getattr(state, "kind", None) != expected:
        raise SpecMismatchError(f"state kind {getattr(state, 'kind', None)!r} does not match spec {spec.kind!r}")
    p, cert, prob = spec.params, spec.cert, spec.problem
    M = prob.coupling
    Df = max(prob.objective.bregman(state.x, cert.x_star), 0.0)
    if spec.kind in ("x-det", "x-stoc", "x-stoc-nonsep"):
        v = state.v(p)
        dv = v - cert.x_star
        return {
            "y": p.Xi_y * weighted_norm_sq(M, state.y - cert.y_star, spec.weight_c),
            "f": Df,
            "v": p.Xi_v * float(dv @ dv),
        }
    dx = state.x - cert.x_star
    Mtdy = M.apply_adjoint(state.y - cert.y_star)
    out = {
        "x": p.Xi_x * (float(dx @ dx) - 2 * (p.t - p.tilde_t) * Df),
        "h": 0.5 * float(Mtdy @ Mtdy),
        "u": p.Xi_u * weighted_norm_sq(M, state.u - cert.y_star, spec.weight_c),
    }
    if spec.kind == "y-det":
        out["phi"] = dphi_bregman(prob.dual_term, state.y, cert) / p.t
    return out


def psi(spec: LyapunovSpec, state) -> float:
    return float(sum(psi_components(spec, state).values()))


def contraction_ok(psi_next: float, psi_prev: float, rate: float) -> bool:
    return psi_next <= rate * psi_prev * (1 + REL_TOL) + ABS_TOL


@dataclass
class ContractionReport:
    violations: list = field(default_factory=list)
    max_ratio: float = 0.0
    checked: int = 0

    @property
    def passed(self) -> bool:
        return not self.violations


def check_contraction_det(spec: LyapunovSpec, trace, floor: float = 0.0) -> ContractionReport:
    """Check ``Psi^{k+1} <= (1 - 1/Pi) Psi^k`` on every consecutive pair.

    ``trace`` is either a ``RunTrace`` carrying a ``psi`` column or a sequence of
    states. Checking stops once Psi falls below ``floor`` (reference certificates).
    """
    if spec.kind not in ("x-det", "y-det"):
        raise SpecMismatchError("deterministic check needs an x-det or y-det spec")
    method = getattr(trace, "method", None)
    if method is not None and method != LYAPUNOV_KINDS[spec.kind][1]:
        raise SpecMismatchError(f"trace of {method!r} cannot be checked with a {spec.kind!r} spec")
    if method is not None:
        values = [row["psi"] for row in trace.rows]
        iters = [row["iter"] for row in trace.rows]
        if any(b - a != 1 for a, b in zip(iters, iters[1:])):
            raise SpecMismatchError("trace must log every iteration for a per-step check")
    else:
        values = [psi(spec, s) for s in trace]
    rep = ContractionReport()
    rate = spec.rate
    for k in range(len(values) - 1):
        a, b = values[k], values[k + 1]
        if a < floor:
            break
        rep.checked += 1
        if a > 0:
            rep.max_ratio = max(rep.max_ratio, b / a)
        if not contraction_ok(b, a, rate):
            rep.violations.append((k, a, b))
    return rep


def check_contraction_stoc(spec: LyapunovSpec, problem: SaddleProblem, params, n_states: int,
                           seed: int, warmup: int = 10, mode: str = "independent-ij") -> ContractionReport:
    """Exact one-step expectation check at ``n_states`` reachable random states."""
    from . import stoc

    if spec.kind not in ("x-stoc", "y-stoc", "x-stoc-nonsep"):
        raise SpecMismatchError("stochastic check needs a stochastic spec")
    step_kind = {"x-stoc": "x-sbc-dapd", "y-stoc": "y-sbc-dapd", "x-stoc-nonsep": "x-sbc-nonsep"}[spec.kind]
    rng = np.random.default_rng(seed)
    rep = ContractionReport()
    rate = spec.rate
    fn = lambda s: psi(spec, s)
    for k in range(n_states):
        state = stoc.random_reachable_state(step_kind, problem, params, rng, warmup=warmup, mode=mode)
        p0 = fn(state)
        ev, _ = stoc.enumerate_one_step_expectation(step_kind, state, problem, params, fn, mode=mode)
        rep.checked += 1
        if p0 > 0:
            rep.max_ratio = max(rep.max_ratio, ev / p0)
        if not contraction_ok(ev, p0, rate):
            rep.violations.append((k, p0, ev))
    return rep


def psi_floor(spec: LyapunovSpec) -> float:
    """Psi level below which a reference certificate's own error dominates."""
    cert = spec.cert
    if cert.is_exact or cert.tol == 0:
        return 0.0
    prob = spec.problem
    M = prob.coupling
    delta = cert.tol * (1 / prob.mu + prob.lip / (prob.mu * M.s_min**2) + 1 / M.s_min)
    p = spec.params.as_dict()
    weights = [abs(v) for k, v in p.items() if k.startswith("Xi_")]
    t = p.get("t", 1 / prob.lip)
    W = max(weights + [prob.lip, M.s_max**2, 1 / t])
    return 100.0 * W * delta**2
