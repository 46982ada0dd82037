import numpy as np
import pytest

from dapd import det, stoc
from dapd.experiments import QpConfig, gen_qp
from dapd.lyapunov import (LyapunovSpec, SpecMismatchError, check_contraction_det, check_contraction_stoc, psi,
                           psi_floor)
from dapd.prox import L1Term
from dapd.runner import RunOptions, derive_params, reference_certificate, run

from conftest import exact_cert, random_quadratic_problem
from test_stoc import block_problem


def _instance(rng, m=12, n=8, dual=None):
    prob, Hd, c, M, b = random_quadratic_problem(rng, m=m, n=n, dual=dual)
    return prob, Hd, M, exact_cert(prob, Hd, c, M, b)


def test_psi_zero_at_certificate(rng):
    prob, Hd, M, cert = _instance(rng)
    px = det.derive_x_params(prob.mu, prob.lip, prob.coupling.s_min, prob.coupling.s_max)
    py = det.derive_y_params(prob.mu, prob.lip, prob.coupling.s_min, prob.coupling.s_max)
    sx = det.x_dapd_init(prob, cert.x_star, cert.y_star)
    sy = det.y_dapd_init(prob, cert.x_star, cert.y_star)
    assert psi(LyapunovSpec("x-det", px, cert, prob), sx) == pytest.approx(0.0, abs=1e-20)
    assert psi(LyapunovSpec("y-det", py, cert, prob), sy) == pytest.approx(0.0, abs=1e-20)


def test_psi_x_det_dense_oracle(rng):
    prob, Hd, M, cert = _instance(rng)
    p = det.derive_x_params(prob.mu, prob.lip, prob.coupling.s_min, prob.coupling.s_max)
    st = det.x_dapd_init(prob, rng.standard_normal(12), rng.standard_normal(8), rng.standard_normal(12))
    dy = st.y - cert.y_star
    W = np.eye(8) - (1 - 2 * p.alpha) * p.hat_s * M @ M.T
    dx = st.x - cert.x_star
    v = (1 + p.tau) * st.z - p.tau * st.x
    ref = p.Xi_y * dy @ W @ dy + 0.5 * dx @ Hd @ dx + p.Xi_v * np.sum((v - cert.x_star) ** 2)
    assert psi(LyapunovSpec("x-det", p, cert, prob), st) == pytest.approx(ref, rel=1e-10)


def test_psi_y_det_dense_oracle(rng):
    prob, Hd, M, cert = _instance(rng, dual=L1Term(0.05))
    cert = reference_certificate(prob)
    p = det.derive_y_params(prob.mu, prob.lip, prob.coupling.s_min, prob.coupling.s_max)
    st = det.y_dapd_init(prob, rng.standard_normal(12), rng.standard_normal(8), None, rng.standard_normal(8))
    dx = st.x - cert.x_star
    Df = 0.5 * dx @ Hd @ dx
    dy, du = st.y - cert.y_star, st.u - cert.y_star
    W = np.eye(8) - p.hat_s / 2 * M @ M.T
    Dphi = 0.05 * (np.abs(st.y).sum() - np.abs(cert.y_star).sum()) - cert.g_star @ dy
    ref = (p.Xi_x * (dx @ dx - 2 * (p.t - p.tilde_t) * Df) + 0.5 * np.sum((M.T @ dy) ** 2)
           + Dphi / p.t + p.Xi_u * du @ W @ du)
    assert psi(LyapunovSpec("y-det", p, cert, prob), st) == pytest.approx(ref, rel=1e-10)
    # bracket term stays nonnegative
    assert dx @ dx - 2 * (p.t - p.tilde_t) * Df >= (1 - prob.lip * (p.t - p.tilde_t)) * (dx @ dx) - 1e-12


def test_psi_zero_only_at_certificate(rng):
    prob, Hd, M, cert = _instance(rng)
    p = det.derive_x_params(prob.mu, prob.lip, prob.coupling.s_min, prob.coupling.s_max)
    spec = LyapunovSpec("x-det", p, cert, prob)
    for eps in (1e-1, 1e-3, 1e-6):
        for _ in range(5):
            st = det.x_dapd_init(prob, cert.x_star + eps * rng.standard_normal(12), cert.y_star)
            assert psi(spec, st) > 0


def test_x_dapd_2000_steps_no_violation(rng):
    prob, Hd, M, cert = _instance(rng, m=40, n=20)
    tr = run("x-dapd", prob, cert, RunOptions(max_iter=2000))
    spec = LyapunovSpec("x-det", derive_params("x-dapd", prob), cert, prob)
    rep = check_contraction_det(spec, tr)
    assert rep.passed and rep.checked == 2000
    ps = tr.column("psi")
    p = spec.params
    k = np.arange(len(ps))
    assert np.all(ps <= ps[0] * (1 - 1 / p.Pi) ** k * (1 + k * 1e-9) + 1e-14 * k + 1e-300)


def test_y_dapd_on_qp_l1_no_violation():
    inst = gen_qp(QpConfig(variant="l1", m=40, n=20, L=100, s_max=10, seed=2))
    cert = reference_certificate(inst.problem)
    tr = run("y-dapd", inst.problem, cert, RunOptions(max_iter=2000))
    spec = LyapunovSpec("y-det", derive_params("y-dapd", inst.problem), cert, inst.problem)
    assert check_contraction_det(spec, tr, floor=psi_floor(spec)).passed


def test_papc_trace_mismatch(rng):
    prob, Hd, M, cert = _instance(rng)
    tr = run("papc", prob, cert, RunOptions(max_iter=5))
    spec = LyapunovSpec("y-det", derive_params("y-dapd", prob), cert, prob)
    with pytest.raises(SpecMismatchError):
        check_contraction_det(spec, tr)
    with pytest.raises(SpecMismatchError):
        psi(spec, tr.final_state)


def test_stoc_n1_reduces_to_single_branch(rng):
    prob, cert = block_problem(rng, N=1, mi=6)
    p = derive_params("x-sbc-dapd", prob)
    rep = check_contraction_stoc(LyapunovSpec("x-stoc", p, cert, prob), prob, p, 20, seed=0)
    assert rep.passed and rep.checked == 20


@pytest.mark.parametrize("method,kind,N", [("x-sbc-dapd", "x-stoc", 3), ("y-sbc-dapd", "y-stoc", 4)])
def test_stoc_enumerated_contraction(rng, method, kind, N):
    prob, cert = block_problem(rng, N=N)
    p = derive_params(method, prob)
    rep = check_contraction_stoc(LyapunovSpec(kind, p, cert, prob), prob, p, 200, seed=1)
    assert rep.passed and rep.max_ratio <= 1 - 1 / p.Pi + 1e-9


def test_psi_nonnegative_on_probes(rng):
    prob, cert = block_problem(rng, N=3)
    for method, kind in (("x-sbc-dapd", "x-stoc"), ("y-sbc-dapd", "y-stoc")):
        p = derive_params(method, prob)
        spec = LyapunovSpec(kind, p, cert, prob)
        for _ in range(30):
            st = stoc.random_reachable_state(method, prob, p, rng, warmup=3)
            assert psi(spec, st) >= 0
