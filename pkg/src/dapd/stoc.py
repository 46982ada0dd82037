"""Stochastic block-coordinate solvers for ``phi == 0`` and block coupling ``M = [M_1 ... M_N]``.

x-SBC keeps ``M x_hat`` and the component gradients at ``z`` cached; y-SBC keeps
``M(x - t grad f(x))``, ``M^T y`` and ``M M^T y`` cached and refreshes the last two
only when ``y`` moves (probability ``1/N``). Both therefore touch O(1) blocks per
iteration in expectation.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np

from .prox import ZeroTerm
from .problem import Counters, ParameterDomainError, SaddleProblem

__all__ = [
    "PRNG_ID",
    "UnsupportedMethodError",
    "BlockSampler",
    "XSbcParams",
    "YSbcParams",
    "XSbcNonsepParams",
    "XStocState",
    "YStocState",
    "derive_xsbc_params",
    "derive_ysbc_params",
    "derive_xsbc_nonsep_params",
    "x_sbc_init",
    "y_sbc_init",
    "x_sbc_nonsep_init",
    "x_sbc_step",
    "y_sbc_step",
    "x_sbc_nonsep_step",
    "cache_errors",
    "enumerate_one_step_expectation",
    "random_reachable_state",
    "MODES",
]

PRNG_ID = "numpy.PCG64/SeedSequence.spawn(3):i,j,refresh"
MODES = ("independent-ij", "j-equals-i")
MAX_BRANCHES = 10**4


class UnsupportedMethodError(ValueError):
    pass


class BlockSampler:
    """Three independent PCG64 substreams: dual block ``i``, primal block ``j``, refresh coin."""

    _BATCH = 4096

    def __init__(self, seed: int, N: int):
        self.seed = int(seed)
        self.N = int(N)
        ss = np.random.SeedSequence(self.seed)
        self._gens = [np.random.Generator(np.random.PCG64(c)) for c in ss.spawn(3)]
        self._buf = [np.empty(0), np.empty(0), np.empty(0)]
        self._pos = [0, 0, 0]

    def _next(self, k):
        if self._pos[k] >= self._buf[k].size:
            if k < 2:
                self._buf[k] = self._gens[k].integers(0, self.N, size=self._BATCH)
            else:
                self._buf[k] = self._gens[k].random(self._BATCH)
            self._pos[k] = 0
        v = self._buf[k][self._pos[k]]
        self._pos[k] += 1
        return v

    def draw_i(self) -> int:
        return int(self._next(0))

    def draw_j(self) -> int:
        return int(self._next(1))

    def draw_refresh(self, p: float) -> bool:
        return bool(self._next(2) < p)


class _Params:
    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _check(mu, L, s_min, bar_s_max, N):
    if not (mu > 0 and L >= mu and s_min > 0 and bar_s_max > 0 and N >= 1):
        raise ParameterDomainError("need 0 < mu <= L, s_min > 0, bar_s_max > 0 and N >= 1")


# ---------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class XSbcParams(_Params):
    beta: float
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
    N: int


def derive_xsbc_params(mu, barL, s_min, bar_s_max, N, Pi=None) -> XSbcParams:
    _check(mu, barL, s_min, bar_s_max, N)
    beta = 7.0
    hat_s = (7.0 / 32.0) / bar_s_max**2
    q = hat_s * bar_s_max**2
    if 1 - q - 2 * (1 + beta) * q**2 < -1e-15:
        raise ParameterDomainError("dual step condition violated")
    alpha = min(0.1, math.sqrt(4 / 7) * (bar_s_max / s_min) * math.sqrt(mu / barL))
    t = (1 - 8 * alpha) / ((2 + 8 * alpha) * barL)
    if not t > 0:
        raise ParameterDomainError("primal step t must be positive")
    Pi_lb = N * max(bar_s_max**2 / s_min**2 * 16 / (7 * alpha), math.sqrt(14 * barL / mu) + 4 * alpha * barL / mu)
    Pi = Pi_lb if Pi is None else float(Pi)
    if Pi < Pi_lb:
        raise ParameterDomainError(f"Pi={Pi} below its admissible bound {Pi_lb}")
    c = 4 * barL * alpha * t
    xi = (1 + c) / (N / Pi + c)
    tau = (xi - 1) / (1 - N / Pi)
    Xi_v = (1 + c) / (2 * xi**2 * t)
    return XSbcParams(beta=beta, hat_s=hat_s, alpha=alpha, t=t, s=hat_s / t, Pi=Pi, xi=xi, tau=tau,
                      gamma=(xi - 1) / (tau + 1), chi=2 * Xi_v * xi * t, Xi_f=1.0,
                      Xi_y=t / (2 * hat_s), Xi_v=Xi_v, N=int(N))


@dataclass(frozen=True)
class YSbcParams(_Params):
    alpha: float
    beta: float
    hat_s: float
    t: float
    tilde_t: float
    xi: float
    Pi: float
    tau: float
    s: float
    Xi_u: float
    Xi_x: float
    Xi_h: float
    refresh_p: float
    N: int


def derive_ysbc_params(mu, barL, s_min, bar_s_max, N, Pi=None) -> YSbcParams:
    _check(mu, barL, s_min, bar_s_max, N)
    alpha, beta = 0.5, 1.0 / 3.0
    hat_s = 1.0 / (1 + 1 / beta) / bar_s_max**2
    t = 1.0 / (2 * barL)
    xi = max(1 / (1 - math.sqrt(2 / 3)), math.sqrt(2) * (bar_s_max / s_min) * math.sqrt(mu / barL))
    Pi_lb = N * max((8 / xi) * bar_s_max**2 / s_min**2, 4 * xi * barL / mu)
    Pi = Pi_lb if Pi is None else float(Pi)
    if Pi < Pi_lb:
        raise ParameterDomainError(f"Pi={Pi} below its admissible bound {Pi_lb}")
    tau = (xi - 1) / (1 - 1 / Pi)
    if xi * (xi - 1) < alpha * (1 + tau) * (xi - 1) + beta * xi**2 - 1e-12 * xi**2:
        raise ParameterDomainError("momentum constraint xi(xi-1) >= alpha(1+tau)(xi-1) + beta xi^2 violated")
    return YSbcParams(alpha=alpha, beta=beta, hat_s=hat_s, t=t, tilde_t=alpha * t / xi, xi=xi, Pi=Pi,
                      tau=tau, s=hat_s / t, Xi_u=1 / (2 * xi**2 * hat_s), Xi_x=1 / (2 * alpha * t**2),
                      Xi_h=1.0, refresh_p=1.0 / N, N=int(N))


@dataclass(frozen=True)
class XSbcNonsepParams(_Params):
    beta: float
    hat_s: float
    alpha: float
    t: float
    s: float
    Pi: float
    xi: float
    tau: float
    gamma: float
    chi: float
    omega: float
    Xi_f: float
    Xi_y: float
    Xi_v: float
    N: int


def derive_xsbc_nonsep_params(mu, L, s_min, bar_s_max, N, Pi=None) -> XSbcNonsepParams:
    """Parameters for a nonseparable ``f``; ``beta``, ``hat_s`` and ``alpha`` as in the separable case."""
    _check(mu, L, s_min, bar_s_max, N)
    beta = 7.0
    hat_s = (7.0 / 32.0) / bar_s_max**2
    q = hat_s * bar_s_max**2
    if 1 - q - 2 * (1 + beta) * q**2 < -1e-15:
        raise ParameterDomainError("dual step condition violated")
    alpha = min(0.1, math.sqrt(4 / 7) * (bar_s_max / s_min) * math.sqrt(mu / L))
    a = alpha / N
    t = (1 - 4 * alpha - 2 * (1 + 1 / beta) * q) / (L + 4 * L * a)
    if not t > 0:
        raise ParameterDomainError("primal step t must be positive")
    Pi_lb = N * max(1 / (s_min**2 * hat_s) / (2 * alpha), math.sqrt(1 / (mu * t)) + 4 * alpha * L / mu)
    Pi = Pi_lb if Pi is None else float(Pi)
    if Pi < Pi_lb:
        raise ParameterDomainError(f"Pi={Pi} below its admissible bound {Pi_lb}")
    c = 4 * L * a * t
    xi = (1 + c) / (1 / Pi + c)
    tau = (xi - 1) / (1 - 1 / Pi)
    gamma = (xi - 1) / (tau + 1)
    s = hat_s / t
    Xi_y = t / (2 * hat_s)
    Xi_v = N**2 * (1 + c) / (2 * xi**2 * t)
    return XSbcNonsepParams(beta=beta, hat_s=hat_s, alpha=alpha, t=t, s=s, Pi=Pi, xi=xi, tau=tau,
                            gamma=gamma, chi=Xi_v * xi * t / (N * Xi_y * s),
                            omega=(tau + xi / N) / ((1 + gamma) * (1 + tau)),
                            Xi_f=1.0, Xi_y=Xi_y, Xi_v=Xi_v, N=int(N))


# ---------------------------------------------------------------------------
# states


@dataclass
class XStocState:
    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    Mxh: np.ndarray          # M x_hat
    gz: np.ndarray | None    # component gradients at z (separable)
    Mx: np.ndarray | None    # M x and M z (nonseparable variant)
    Mz: np.ndarray | None

    kind = "x-stoc"

    def v(self, p) -> np.ndarray:
        return (1 + p.tau) * self.z - p.tau * self.x

    def copy(self):
        cp = lambda a: None if a is None else a.copy()
        return replace(self, x=self.x.copy(), z=self.z.copy(), y=self.y.copy(), Mxh=self.Mxh.copy(),
                       gz=cp(self.gz), Mx=cp(self.Mx), Mz=cp(self.Mz))


@dataclass
class YStocState:
    x: np.ndarray
    y: np.ndarray
    w: np.ndarray
    u: np.ndarray
    gx: np.ndarray       # component gradients at x
    Mxg: np.ndarray      # M(x - t grad f(x))
    Mty: np.ndarray      # M^T y
    MMty: np.ndarray     # M M^T y

    kind = "y-stoc"

    def copy(self):
        return replace(self, **{f.name: getattr(self, f.name).copy() for f in fields(self)})


def _require_stoc(problem: SaddleProblem, separable: bool = True):
    if not isinstance(problem.dual_term, ZeroTerm):
        raise UnsupportedMethodError("stochastic block methods require phi == 0")
    if not problem.is_block:
        raise UnsupportedMethodError("stochastic block methods need a BlockObjective")
    if separable and not problem.separable:
        raise UnsupportedMethodError("objective is not block separable; use x-sbc-nonsep")


def _full_block_grad(problem, x):
    obj = problem.objective
    return np.concatenate([obj.block_gradient(j, x[sl]) for j, sl in enumerate(obj.slices)])


def _vec(v, size):
    v = np.zeros(size) if v is None else np.array(v, dtype=float)
    if v.shape != (size,):
        raise ValueError(f"expected a vector of length {size}")
    return v


def x_sbc_init(problem: SaddleProblem, p, x0=None, y0=None, counter: Counters | None = None) -> XStocState:
    _require_stoc(problem)
    x = _vec(x0, problem.m)
    z = x.copy()
    y = _vec(y0, problem.n)
    # x_hat = z when x = z
    return XStocState(x, z, y, problem.coupling.apply(z, counter), _full_block_grad(problem, z), None, None)


def x_sbc_nonsep_init(problem: SaddleProblem, p, x0=None, y0=None, counter: Counters | None = None) -> XStocState:
    _require_stoc(problem, separable=False)
    x = _vec(x0, problem.m)
    z = x.copy()
    y = _vec(y0, problem.n)
    Mx = problem.coupling.apply(x, counter)
    return XStocState(x, z, y, Mx.copy(), None, Mx.copy(), Mx.copy())


def y_sbc_init(problem: SaddleProblem, p: YSbcParams, x0=None, y0=None,
               counter: Counters | None = None) -> YStocState:
    _require_stoc(problem)
    M = problem.coupling
    x = _vec(x0, problem.m)
    y = _vec(y0, problem.n)
    gx = _full_block_grad(problem, x)
    Mty = M.apply_adjoint(y, counter)
    return YStocState(x, y, y.copy(), y.copy(), gx, M.apply(x - p.t * gx, counter), Mty, M.apply(Mty, counter))


# ---------------------------------------------------------------------------
# steps


def _indices(sampler, N, i, j, mode):
    if mode not in MODES:
        raise ValueError(f"unknown sampling mode {mode!r}")
    if i is None:
        i = sampler.draw_i()
    if j is None:
        j = i if mode == "j-equals-i" else sampler.draw_j()
    if not (0 <= i < N and 0 <= j < N):
        raise IndexError("block index out of range")
    return i, j


def x_sbc_step(state: XStocState, problem: SaddleProblem, p: XSbcParams, mode: str = "independent-ij",
               sampler: BlockSampler | None = None, i: int | None = None, j: int | None = None,
               counter: Counters | None = None) -> XStocState:
    if state.gz is None:
        raise UnsupportedMethodError("state was initialized for the nonseparable variant")
    M = problem.coupling
    obj = problem.objective
    sls = obj.slices
    N = len(sls)
    i, j = _indices(sampler, N, i, j, mode)
    si, sj = sls[i], sls[j]
    x, z, y, gz = state.x, state.z, state.y, state.gz

    Miy = M.block_apply_adjoint(i, y, counter)
    y_new = y + (p.chi * p.s / N) * (state.Mxh - problem.b) - p.hat_s * M.block_apply(i, Miy + gz[si], counter)

    xj = z[sj] - p.t * (gz[sj] + M.block_apply_adjoint(j, y_new, counter))
    zj = (1 + p.gamma) * xj - p.gamma * x[sj]
    dxh = (p.xi * zj - (p.xi - 1) * xj) - (p.xi * z[sj] - (p.xi - 1) * x[sj])
    Mxh = state.Mxh + M.block_apply(j, dxh, counter)

    x_new = x.copy()
    z_new = z.copy()
    gz_new = gz.copy()
    x_new[sj] = xj
    z_new[sj] = zj
    if counter is not None:
        counter.block_grad_calls += 1
    gz_new[sj] = obj.block_gradient(j, zj)
    return XStocState(x_new, z_new, y_new, Mxh, gz_new, None, None)


def x_sbc_nonsep_step(state: XStocState, problem: SaddleProblem, p: XSbcNonsepParams,
                      mode: str = "independent-ij", sampler: BlockSampler | None = None,
                      i: int | None = None, j: int | None = None,
                      counter: Counters | None = None) -> XStocState:
    if state.Mx is None:
        raise UnsupportedMethodError("state was initialized for the separable variant")
    M = problem.coupling
    obj = problem.objective
    sls = obj.slices
    N = len(sls)
    i, j = _indices(sampler, N, i, j, mode)
    si, sj = sls[i], sls[j]
    x, z, y = state.x, state.z, state.y
    if counter is not None:
        counter.block_grad_calls += 2
    gi = obj.block_gradient(i, z) if obj.separable is False else obj.block_gradient(i, z[si])
    gj = obj.block_gradient(j, z) if obj.separable is False else obj.block_gradient(j, z[sj])

    Mxh = p.xi * state.Mz - (p.xi - 1) * state.Mx
    Miy = M.block_apply_adjoint(i, y, counter)
    y_new = y + (p.chi * p.s / N) * (Mxh - problem.b) - p.hat_s * M.block_apply(i, Miy + gi, counter)

    d = -p.t * (gj + M.block_apply_adjoint(j, y_new, counter))   # x_j^+ - z_j
    Md = M.block_apply(j, d, counter)
    x_new = z.copy()
    x_new[sj] += d
    a = (1 + p.gamma) * p.omega
    z_new = (1 + p.gamma) * z - p.gamma * x
    z_new[sj] += a * d
    Mz_new = (1 + p.gamma) * state.Mz - p.gamma * state.Mx + a * Md
    Mx_new = state.Mz + Md
    return XStocState(x_new, z_new, y_new, p.xi * Mz_new - (p.xi - 1) * Mx_new, None, Mx_new, Mz_new)


def y_sbc_step(state: YStocState, problem: SaddleProblem, p: YSbcParams, mode: str = "independent-ij",
               sampler: BlockSampler | None = None, i: int | None = None, j: int | None = None,
               refresh: bool | None = None, counter: Counters | None = None) -> YStocState:
    M = problem.coupling
    obj = problem.objective
    sls = obj.slices
    N = len(sls)
    i, j = _indices(sampler, N, i, j, mode)
    if refresh is None:
        refresh = sampler.draw_refresh(p.refresh_p)
    sj = sls[j]
    x, y, w, gx = state.x, state.y, state.w, state.gx

    # (s/N)(Mx - b) - (hat_s/N) M grad f(x) == (s/N)(M(x - t grad f(x)) - b) since hat_s = s t
    corr = M.block_apply(i, M.block_apply_adjoint(i, w - y, counter), counter)
    y_tilde = w + (p.s / N) * (state.Mxg - problem.b) - (p.hat_s / N) * state.MMty - p.hat_s * corr

    if refresh:
        y_new = y_tilde
        Mty = M.apply_adjoint(y_new, counter)
        MMty = M.apply(Mty, counter)
    else:
        y_new, Mty, MMty = y, state.Mty, state.MMty
    u_new = p.xi * y_tilde - (p.xi - 1) * y
    w_new = (p.tau * y_new + u_new) / (1 + p.tau)

    xj = x[sj] - p.tilde_t * (gx[sj] + M.block_apply_adjoint(j, u_new, counter))
    if counter is not None:
        counter.block_grad_calls += 1
    gj = obj.block_gradient(j, xj)
    Mxg = state.Mxg + M.block_apply(j, (xj - p.t * gj) - (x[sj] - p.t * gx[sj]), counter)
    x_new = x.copy()
    gx_new = gx.copy()
    x_new[sj] = xj
    gx_new[sj] = gj
    return YStocState(x_new, y_new, w_new, u_new, gx_new, Mxg, Mty, MMty)


_STEPS = {"x-sbc-dapd": x_sbc_step, "y-sbc-dapd": y_sbc_step, "x-sbc-nonsep": x_sbc_nonsep_step}
_INITS = {"x-sbc-dapd": x_sbc_init, "y-sbc-dapd": y_sbc_init, "x-sbc-nonsep": x_sbc_nonsep_init}


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def cache_errors(state, problem: SaddleProblem, p) -> dict:
    """Relative deviation of every cached product from a fresh recomputation."""
    M = problem.coupling
    if isinstance(state, YStocState):
        gx = _full_block_grad(problem, state.x)
        Mty = M.apply_adjoint(state.y)
        return {"gx": _rel(state.gx, gx), "Mxg": _rel(state.Mxg, M.apply(state.x - p.t * gx)),
                "Mty": _rel(state.Mty, Mty), "MMty": _rel(state.MMty, M.apply(Mty))}
    x_hat = p.xi * state.z - (p.xi - 1) * state.x
    out = {"Mxh": _rel(state.Mxh, M.apply(x_hat))}
    if state.gz is not None:
        out["gz"] = _rel(state.gz, _full_block_grad(problem, state.z))
    else:
        out["Mx"] = _rel(state.Mx, M.apply(state.x))
        out["Mz"] = _rel(state.Mz, M.apply(state.z))
    return out


def _branches(step_kind, N, p, mode):
    js = (lambda i: [i]) if mode == "j-equals-i" else (lambda i: range(N))
    wj = 1.0 if mode == "j-equals-i" else 1.0 / N
    out = []
    for i in range(N):
        for j in js(i):
            if step_kind == "y-sbc-dapd":
                out.append(({"i": i, "j": j, "refresh": True}, wj * p.refresh_p / N))
                out.append(({"i": i, "j": j, "refresh": False}, wj * (1 - p.refresh_p) / N))
            else:
                out.append(({"i": i, "j": j}, wj / N))
    return out


def enumerate_one_step_expectation(step_kind: str, state, problem: SaddleProblem, params, psi_fn,
                                   mode: str = "independent-ij") -> tuple[float, int]:
    """Exact expectation of ``psi_fn`` after one step, summed over every random branch."""
    if step_kind not in _STEPS:
        raise ValueError(f"unknown stochastic method {step_kind!r}")
    N = problem.N
    count = N * N * (2 if step_kind == "y-sbc-dapd" else 1)
    if count > MAX_BRANCHES:
        raise ValueError(f"{count} branches exceed the enumeration limit {MAX_BRANCHES}")
    step = _STEPS[step_kind]
    total = 0.0
    branches = _branches(step_kind, N, params, mode)
    for kw, weight in branches:
        total += weight * psi_fn(step(state, problem, params, mode=mode, **kw))
    return total, len(branches)


def random_reachable_state(step_kind: str, problem: SaddleProblem, params, rng: np.random.Generator,
                           warmup: int = 10, mode: str = "independent-ij", scale: float = 1.0):
    """Gaussian start followed by ``warmup`` sampled steps."""
    x0 = scale * rng.standard_normal(problem.m)
    y0 = scale * rng.standard_normal(problem.n)
    state = _INITS[step_kind](problem, params, x0, y0)
    sampler = BlockSampler(int(rng.integers(2**63)), problem.N)
    for _ in range(warmup):
        state = _STEPS[step_kind](state, problem, params, mode=mode, sampler=sampler)
    return state
