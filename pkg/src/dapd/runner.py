"""Method registry, run loop with metric logging, and reference certificates."""
from __future__ import annotations

import hashlib
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import det, stoc
from .lyapunov import LyapunovSpec, psi
from .problem import (Counters, QuadraticOracle, SaddleCertificate, SaddleProblem,
                      kkt_residual)
from .prox import L1Term, NonnegTerm, ZeroTerm

__all__ = [
    "METHODS",
    "DETERMINISTIC",
    "STOCHASTIC",
    "TRACE_COLUMNS",
    "RunOptions",
    "RunTrace",
    "derive_params",
    "nominal_bmm_per_iter",
    "run",
    "instance_hash",
    "reference_certificate",
    "newton_certificate",
    "polish_quadratic",
]

DETERMINISTIC = ("x-dapd", "y-dapd", "papc")
STOCHASTIC = ("x-sbc-dapd", "y-sbc-dapd", "x-sbc-nonsep")
METHODS = DETERMINISTIC + STOCHASTIC

TRACE_COLUMNS = ("iter", "nominal_bmm", "actual_block_ops", "grad_calls", "rel_err_x", "rel_err_y",
                 "psi", "kkt_dual", "kkt_prim", "wall_ms")

_LYAP = {"x-dapd": "x-det", "y-dapd": "y-det", "x-sbc-dapd": "x-stoc", "y-sbc-dapd": "y-stoc",
         "x-sbc-nonsep": "x-stoc-nonsep"}


def nominal_bmm_per_iter(method: str, N: int) -> int:
    if method in DETERMINISTIC:
        return 2 * N
    return {"x-sbc-dapd": 4, "y-sbc-dapd": 6, "x-sbc-nonsep": 4}[method]


def derive_params(method: str, problem: SaddleProblem, overrides: dict | None = None):
    """Theory constants for ``method`` from the problem's certified moduli."""
    ov = dict(overrides or {})
    M = problem.coupling
    if method == "x-dapd":
        return det.derive_x_params(problem.mu, problem.lip, M.s_min, M.s_max, **ov)
    if method == "y-dapd":
        return det.derive_y_params(problem.mu, problem.lip, M.s_min, M.s_max, **ov)
    if method == "papc":
        return det.derive_papc_params(problem.lip, M.s_max, **ov)
    if method == "x-sbc-dapd":
        return stoc.derive_xsbc_params(problem.mu, problem.bar_lip, M.s_min, M.bar_s_max, problem.N, **ov)
    if method == "y-sbc-dapd":
        return stoc.derive_ysbc_params(problem.mu, problem.bar_lip, M.s_min, M.bar_s_max, problem.N, **ov)
    if method == "x-sbc-nonsep":
        return stoc.derive_xsbc_nonsep_params(problem.mu, problem.lip, M.s_min, M.bar_s_max, problem.N, **ov)
    raise ValueError(f"unknown method {method!r}; choose from {METHODS}")


def instance_hash(problem: SaddleProblem) -> str:
    """Fingerprint of the problem data (operator probed on a fixed vector)."""
    h = hashlib.sha256()
    h.update(f"{problem.name}|{problem.m}|{problem.n}|{problem.coupling.block_sizes}".encode())
    probe = np.cos(np.arange(problem.m) * 0.7 + 0.3)
    h.update(np.ascontiguousarray(problem.coupling.apply(probe)).tobytes())
    h.update(np.ascontiguousarray(problem.b).tobytes())
    h.update(np.ascontiguousarray(problem.objective.gradient(probe)).tobytes())
    h.update(repr(sorted(problem.dual_term.params().items())).encode())
    h.update(problem.dual_term.kind.encode())
    return h.hexdigest()[:16]


@dataclass
class RunOptions:
    max_iter: int | None = None
    bmm_budget: int | None = None
    log_every: int = 1
    target_rel_err: float | None = None
    seed: int = 0
    mode: str = "independent-ij"
    overrides: dict = field(default_factory=dict)
    store_iterates: bool = False
    compute_psi: bool = True

    def validate(self):
        if (self.max_iter is None) == (self.bmm_budget is None):
            raise ValueError("set exactly one of max_iter and bmm_budget")
        if (self.max_iter is not None and self.max_iter < 0) or (self.bmm_budget is not None and self.bmm_budget < 0):
            raise ValueError("budgets must be nonnegative")
        if self.log_every < 1:
            raise ValueError("log_every must be >= 1")


@dataclass
class RunTrace:
    method: str
    params: dict
    seed: int
    prng: str
    instance: str
    cert_quality: str
    rows: list = field(default_factory=list)
    iterates: dict | None = None
    final_state: object = None

    def column(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=float)

    @property
    def meta(self) -> dict:
        return {"method": self.method, "params": self.params, "seed": self.seed, "prng": self.prng,
                "instance": self.instance, "cert_quality": self.cert_quality}


def _rel(a, ref):
    nr = float(np.linalg.norm(ref))
    d = float(np.linalg.norm(a - ref))
    return d / nr if nr > 0 else d


def _init(method, problem, params, x0, y0, counter):
    if method == "x-dapd":
        return det.x_dapd_init(problem, x0, y0)
    if method == "y-dapd":
        return det.y_dapd_init(problem, x0, y0)
    if method == "papc":
        return det.papc_init(problem, x0, y0)
    return stoc._INITS[method](problem, params, x0, y0, counter)


def run(method: str, problem: SaddleProblem, cert: SaddleCertificate | None = None,
        options: RunOptions | None = None, x0=None, y0=None, params=None) -> RunTrace:
    """Run ``method`` and log metrics every ``options.log_every`` iterations.

    The first row (iteration 0) and the last iteration are always logged.
    """
    opt = options or RunOptions(max_iter=100)
    opt.validate()
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if params is None:
        params = derive_params(method, problem, opt.overrides)
    per_iter = nominal_bmm_per_iter(method, problem.N)
    n_iter = opt.max_iter if opt.max_iter is not None else opt.bmm_budget // per_iter
    counter = Counters()
    state = _init(method, problem, params, x0, y0, counter)
    # initialization cost is not part of the per-iteration accounting
    counter = Counters()
    spec = None
    if cert is not None and opt.compute_psi and method in _LYAP:
        spec = LyapunovSpec(_LYAP[method], params, cert, problem)
    sampler = stoc.BlockSampler(opt.seed, problem.N) if method in STOCHASTIC else None
    trace = RunTrace(method, params.as_dict(), opt.seed, stoc.PRNG_ID if sampler else "none",
                     instance_hash(problem), cert.quality if cert is not None else "none")
    if opt.store_iterates:
        trace.iterates = {"x": [], "y": []}
    t0 = time.perf_counter()

    def log(k):
        r_d, r_p = kkt_residual(problem, state.x, state.y)
        trace.rows.append({
            "iter": k,
            "nominal_bmm": k * per_iter,
            "actual_block_ops": counter.block_ops,
            "grad_calls": counter.grad_calls + counter.block_grad_calls,
            "rel_err_x": _rel(state.x, cert.x_star) if cert is not None else math.nan,
            "rel_err_y": _rel(state.y, cert.y_star) if cert is not None else math.nan,
            "psi": psi(spec, state) if spec is not None else math.nan,
            "kkt_dual": r_d,
            "kkt_prim": r_p,
            "wall_ms": (time.perf_counter() - t0) * 1e3,
        })

    def store():
        if trace.iterates is not None:
            trace.iterates["x"].append(state.x.copy())
            trace.iterates["y"].append(state.y.copy())

    log(0)
    store()
    for k in range(1, n_iter + 1):
        if method == "x-dapd":
            state = det.x_dapd_step(state, problem, params, counter)
        elif method == "y-dapd":
            state = det.y_dapd_step(state, problem, params, counter)
        elif method == "papc":
            state = det.papc_step(state, problem, params, counter)
        else:
            state = stoc._STEPS[method](state, problem, params, mode=opt.mode, sampler=sampler, counter=counter)
        store()
        if k % opt.log_every == 0 or k == n_iter:
            log(k)
            if (opt.target_rel_err is not None and cert is not None
                    and trace.rows[-1]["rel_err_x"] <= opt.target_rel_err):
                break
    trace.final_state = state
    return trace


# ---------------------------------------------------------------------------
# reference certificates


def _kkt_max(problem, x, y):
    return max(kkt_residual(problem, x, y))


def newton_certificate(problem: SaddleProblem, tol: float = 1e-11, max_iter: int = 60):
    """Null-space damped Newton on ``min f(x) s.t. Mx = b`` (phi == 0, Hessian available).

    Iterates stay on the affine set exactly; the reduced Hessian has condition
    number at most ``L/mu`` so the stationarity residual reaches roundoff level.
    Returns ``None`` if the problem does not qualify.
    """
    if not isinstance(problem.dual_term, ZeroTerm):
        return None
    f = problem.objective
    M = problem.coupling.to_dense()
    n = problem.n
    U, sv, Vt = np.linalg.svd(M)
    R, Z = Vt[:n].T, Vt[n:].T

    def dual_of(x):
        # least-squares multiplier for grad f(x) + M^T y = 0
        return -(U @ ((R.T @ f.gradient(x)) / sv))

    x = R @ ((U.T @ problem.b) / sv)
    best = None
    for _ in range(max_iter):
        H = f.hessian(x)
        if H is None:
            return None
        g = f.gradient(x)
        Hr = Z.T @ H @ Z
        dx = Z @ cho_solve(cho_factor(Hr), -(Z.T @ g))
        dec = -float(g @ dx)
        fx, step = f.value(x), 1.0
        if dec > 1e-12 * max(1.0, abs(fx)):
            while step > 1e-12 and f.value(x + step * dx) > fx - 0.25 * step * dec:
                step *= 0.5
        x = x + step * dx
        y = dual_of(x)
        res = _kkt_max(problem, x, y)
        if best is None or res < best[2]:
            best = (x.copy(), y, res)
        if res <= tol or dec < 1e-28:
            break
    x, y, res = best
    return SaddleCertificate.from_primal_dual(problem, x, y, "reference-numeric", res)


def polish_quadratic(problem: SaddleProblem, x, y, support_tol: float = 1e-9):
    """Solve the equality system implied by the support of ``y`` exactly.

    Applies to quadratic objectives with phi in {0, nonneg, l1}. Returns
    ``(x, y)`` or ``None`` when the guessed active set is inconsistent.
    """
    oracle = problem.oracle
    phi = problem.dual_term
    if not isinstance(oracle, QuadraticOracle) or not isinstance(phi, (ZeroTerm, NonnegTerm, L1Term)):
        return None
    H = np.diag(oracle.H) if oracle.diagonal else oracle.H
    M = problem.coupling.to_dense()
    b = problem.b
    scale = max(float(np.abs(y).max(initial=0.0)), 1.0)
    if isinstance(phi, ZeroTerm):
        S = np.arange(problem.n)
        r = np.zeros(problem.n)
    else:
        S = np.flatnonzero(np.abs(y) > support_tol * scale) if not isinstance(phi, NonnegTerm) \
            else np.flatnonzero(y > support_tol * scale)
        r = np.zeros(len(S)) if isinstance(phi, NonnegTerm) else phi.nu * np.sign(y[S])
    MS = M[S]
    k = len(S)
    kkt = np.block([[H, MS.T], [MS, np.zeros((k, k))]])
    rhs = np.concatenate([oracle.c, b[S] + r])
    try:
        sol = np.linalg.solve(kkt, rhs)
    except np.linalg.LinAlgError:
        return None
    xn = sol[:problem.m]
    yn = np.zeros(problem.n)
    yn[S] = sol[problem.m:]
    # one step of iterative refinement
    res = rhs - kkt @ np.concatenate([xn, yn[S]])
    sol = sol + np.linalg.solve(kkt, res)
    xn = sol[:problem.m]
    yn[S] = sol[problem.m:]
    if not phi.subgradient_member_check(yn, M @ xn - b, tol=1e-8):
        return None
    return xn, yn


def reference_certificate(problem: SaddleProblem, tol: float = 1e-11, max_iter: int = 2_000_000,
                          check_every: int = 200) -> SaddleCertificate:
    """Tight numerical saddle point.

    Tries Newton (phi == 0, Hessian available), otherwise runs y-DAPD until the
    KKT residual is below ``tol`` relative to the problem scale, attempting an
    exact active-set polish along the way for quadratic objectives. The
    certificate's ``tol`` is the achieved residual.
    """
    if isinstance(problem.dual_term, ZeroTerm) and problem.n * problem.m <= 4_000_000:
        cert = newton_certificate(problem, tol)
        if cert is not None:
            # Newton stops at the roundoff floor; first-order refinement cannot improve on it
            return cert
    params = derive_params("y-dapd", problem)
    state = det.y_dapd_init(problem)
    best = None
    for k in range(1, max_iter + 1):
        state = det.y_dapd_step(state, problem, params)
        if k % check_every:
            continue
        res = _kkt_max(problem, state.x, state.y)
        if best is None or res < best[2]:
            best = (state.x.copy(), state.y.copy(), res)
        pol = polish_quadratic(problem, state.x, state.y)
        if pol is not None:
            pres = _kkt_max(problem, *pol)
            if pres < best[2]:
                best = (pol[0], pol[1], pres)
        # relative to the size of the KKT terms, else roundoff on well-scaled data never meets tol
        scale = 1.0 + problem.lip * float(np.abs(best[0]).max()) \
            + problem.coupling.s_max * float(np.abs(best[1]).max()) + float(np.abs(problem.b).max())
        if best[2] <= tol * scale:
            break
    x, y, res = best
    return SaddleCertificate.from_primal_dual(problem, x, y, "reference-numeric", res)
