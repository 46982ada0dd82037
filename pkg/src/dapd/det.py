"""Deterministic solvers: x-side and y-side directly accelerated primal-dual, and PAPC.

Each step costs one gradient, one ``M`` apply and one ``M^T`` apply; the
adjoint products needed by the next step are carried in the state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .problem import Counters, ParameterDomainError, SaddleProblem

__all__ = [
    "XDapdParams",
    "YDapdParams",
    "PapcParams",
    "XDetState",
    "YDetState",
    "PapcState",
    "derive_x_params",
    "derive_y_params",
    "derive_papc_params",
    "x_dapd_init",
    "y_dapd_init",
    "papc_init",
    "x_dapd_step",
    "y_dapd_step",
    "papc_step",
]


class _Params:
    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check_inputs(mu, L, s_min, s_max):
    if not (mu > 0 and L >= mu and s_min > 0 and s_max >= s_min):
        raise ParameterDomainError(
            f"need 0 < mu <= L and 0 < s_min <= s_max (got mu={mu}, L={L}, s_min={s_min}, s_max={s_max})")


@dataclass(frozen=True)
class XDapdParams(_Params):
    hat_s: float
    alpha: float
    t: float
    s: float
    Pi: float
    xi: float
    tau: float
    gamma: float
    chi: float
    Xi_f: float
    Xi_y: float
    Xi_v: float


def derive_x_params(mu: float, L: float, s_min: float, s_max: float, Pi: float | None = None) -> XDapdParams:
    """Closed-form constants of the x-side method; ``Pi`` defaults to its lower bound."""
    _check_inputs(mu, L, s_min, s_max)
    hat_s = 1.0 / s_max**2
    alpha = min(0.2, (s_max / s_min) * math.sqrt(mu / (8 * L)))
    t = (1 - 4 * alpha) / (L + 4 * L * alpha)
    Pi_lb = max(s_max**2 / s_min**2 / (2 * alpha), math.sqrt(1 / (mu * t)) + 4 * alpha * L / mu)
    if Pi is None:
        Pi = Pi_lb
    elif Pi < Pi_lb:
        raise ParameterDomainError(f"Pi={Pi} below its admissible bound {Pi_lb}")
    c = 4 * L * alpha * t
    xi = (1 + c) / (1 / Pi + c)
    tau = (xi - 1) / (1 - 1 / Pi)
    gamma = (xi - 1) / (tau + 1)
    Xi_v = (1 + c) / (2 * xi**2 * t)
    return XDapdParams(hat_s=hat_s, alpha=alpha, t=t, s=hat_s / t, Pi=Pi, xi=xi, tau=tau,
                       gamma=gamma, chi=2 * Xi_v * xi * t, Xi_f=1.0, Xi_y=t / (2 * hat_s), Xi_v=Xi_v)


@dataclass(frozen=True)
class YDapdParams(_Params):
    hat_s: float
    t: float
    alpha: float
    xi: float
    tilde_t: float
    Pi: float
    tau: float
    gamma: float
    s: float
    Xi_u: float
    Xi_x: float
    Xi_h: float


def derive_y_params(mu: float, L: float, s_min: float, s_max: float, Pi: float | None = None) -> YDapdParams:
    """Closed-form constants of the y-side method; ``Pi`` defaults to its lower bound."""
    _check_inputs(mu, L, s_min, s_max)
    hat_s = 1.0 / s_max**2
    t = 1.0 / (2 * L)
    alpha = 0.5
    xi = max(1.0, (s_max / s_min) * math.sqrt(mu / L) / math.sqrt(2))
    Pi_lb = max((2 / xi) * s_max**2 / s_min**2, 4 * xi * L / mu)
    if Pi is None:
        Pi = Pi_lb
    elif Pi < Pi_lb:
        raise ParameterDomainError(f"Pi={Pi} below its admissible bound {Pi_lb}")
    tau = (xi - 1) / (1 - 1 / Pi)
    return YDapdParams(hat_s=hat_s, t=t, alpha=alpha, xi=xi, tilde_t=alpha * t / xi, Pi=Pi, tau=tau,
                       gamma=(xi - 1) / (tau + 1), s=hat_s / t, Xi_u=1 / (2 * xi**2 * hat_s),
                       Xi_x=1 / t**2, Xi_h=1.0)


@dataclass(frozen=True)
class PapcParams(_Params):
    tau_p: float
    sigma_p: float


def derive_papc_params(L: float, s_max: float, tau_p: float | None = None,
                       sigma_p: float | None = None) -> PapcParams:
    tau_p = 1.0 / (2 * L) if tau_p is None else float(tau_p)
    sigma_p = 1.0 / (tau_p * s_max**2) if sigma_p is None else float(sigma_p)
    if not (tau_p > 0 and sigma_p > 0):
        raise ParameterDomainError("PAPC step sizes must be positive")
    if tau_p > 1.0 / L * (1 + 1e-12) or tau_p * sigma_p * s_max**2 > 1 + 1e-12:
        raise ParameterDomainError("PAPC needs tau_p <= 1/L and tau_p*sigma_p*s_max^2 <= 1")
    return PapcParams(tau_p, sigma_p)


# ---------------------------------------------------------------------------
# states


@dataclass
class XDetState:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    Mty: np.ndarray  # cache of M^T y

    kind = "x-det"

    def v(self, p: XDapdParams) -> np.ndarray:
        return (1 + p.tau) * self.z - p.tau * self.x

    def copy(self):
        return replace(self, x=self.x.copy(), z=self.z.copy(), y=self.y.copy(), Mty=self.Mty.copy())


@dataclass
class YDetState:
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    u: np.ndarray
    Mty: np.ndarray  # cache of M^T y
    Mtw: np.ndarray  # cache of M^T w

    kind = "y-det"

    def copy(self):
        return replace(self, x=self.x.copy(), y=self.y.copy(), w=self.w.copy(), u=self.u.copy(),
                       Mty=self.Mty.copy(), Mtw=self.Mtw.copy())


@dataclass
class PapcState:
    x: np.ndarray
    y: np.ndarray
    Mty: np.ndarray

    kind = "papc"

    def copy(self):
        return replace(self, x=self.x.copy(), y=self.y.copy(), Mty=self.Mty.copy())


def _vec(v, size):
    v = np.zeros(size) if v is None else np.array(v, dtype=float)
    if v.shape != (size,):
        raise ValueError(f"expected a vector of length {size}, got shape {v.shape}")
    return v


def x_dapd_init(problem: SaddleProblem, x0=None, y0=None, z0=None) -> XDetState:
    x = _vec(x0, problem.m)
    z = x.copy() if z0 is None else _vec(z0, problem.m)
    y = _vec(y0, problem.n)
    return XDetState(x, z, y, problem.coupling.apply_adjoint(y))


def y_dapd_init(problem: SaddleProblem, x0=None, y0=None, w0=None, u0=None) -> YDetState:
    x = _vec(x0, problem.m)
    y = _vec(y0, problem.n)
    w = y.copy() if w0 is None else _vec(w0, problem.n)
    u = y.copy() if u0 is None else _vec(u0, problem.n)
    Mty = problem.coupling.apply_adjoint(y)
    Mtw = Mty.copy() if w0 is None else problem.coupling.apply_adjoint(w)
    return YDetState(x, y, w, u, Mty, Mtw)


def papc_init(problem: SaddleProblem, x0=None, y0=None) -> PapcState:
    y = _vec(y0, problem.n)
    return PapcState(_vec(x0, problem.m), y, problem.coupling.apply_adjoint(y))


# ---------------------------------------------------------------------------
# steps


def _grad(problem, x, counter):
    if counter is not None:
        counter.grad_calls += 1
    return problem.objective.gradient(x)


def x_dapd_step(state: XDetState, problem: SaddleProblem, p: XDapdParams,
                counter: Counters | None = None) -> XDetState:
    M = problem.coupling
    x, z, y = state.x, state.z, state.y
    x_hat = p.xi * z - (p.xi - 1) * x
    g = _grad(problem, z, counter)
    cs = p.chi * p.s
    # one apply covers both M x_hat and M(M^T y + grad f(z))
    r = y + M.apply(cs * x_hat - p.hat_s * (state.Mty + g), counter) - cs * problem.b
    y_new = problem.dual_term.prox(cs, r)
    Mty_new = M.apply_adjoint(y_new, counter)
    x_new = z - p.t * (g + Mty_new)
    z_new = (1 + p.gamma) * x_new - p.gamma * x
    return XDetState(x_new, z_new, y_new, Mty_new)


def y_dapd_step(state: YDetState, problem: SaddleProblem, p: YDapdParams,
                counter: Counters | None = None) -> YDetState:
    M = problem.coupling
    x, y, w = state.x, state.y, state.w
    g = _grad(problem, x, counter)
    r = w + M.apply(p.s * x - p.hat_s * (state.Mtw + g), counter) - p.s * problem.b
    y_new = problem.dual_term.prox(p.s, r)
    Mty_new = M.apply_adjoint(y_new, counter)
    w_new = (1 + p.gamma) * y_new - p.gamma * y
    Mtw_new = (1 + p.gamma) * Mty_new - p.gamma * state.Mty
    u_new = (1 + p.tau) * w_new - p.tau * y_new
    Mtu_new = (1 + p.tau) * Mtw_new - p.tau * Mty_new
    x_new = x - p.tilde_t * (g + Mtu_new)
    return YDetState(x_new, y_new, w_new, u_new, Mty_new, Mtw_new)


def papc_step(state: PapcState, problem: SaddleProblem, p: PapcParams,
              counter: Counters | None = None) -> PapcState:
    M = problem.coupling
    g = _grad(problem, state.x, counter)
    x_bar = state.x - p.tau_p * (g + state.Mty)
    y_new = problem.dual_term.prox(p.sigma_p, state.y + p.sigma_p * (M.apply(x_bar, counter) - problem.b))
    Mty_new = M.apply_adjoint(y_new, counter)
    return PapcState(state.x - p.tau_p * (g + Mty_new), y_new, Mty_new)
