import math

import numpy as np
import pytest

from dapd import stoc
from dapd.experiments import rescale_spectrum
from dapd.lyapunov import LyapunovSpec, check_contraction_stoc, psi
from dapd.problem import (BlockObjective, DenseCoupling, QuadraticOracle, SaddleCertificate,
                          SaddleProblem)
from dapd.prox import L1Term
from dapd.runner import RunOptions, derive_params, run

from conftest import dense_kkt_certificate


def block_problem(rng, N=3, mi=2, n=4, mu=1.0, L=10.0, separable=True):
    m = N * mi
    if separable:
        h = rng.uniform(mu, L, m)
        h[0], h[-1] = mu, L
        H = np.diag(h)
        oracle = QuadraticOracle(h, rng.standard_normal(m), mu, L)
    else:
        Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        ev = rng.uniform(mu, L, m)
        ev[0], ev[-1] = mu, L
        H = (Q * ev) @ Q.T
        H = 0.5 * (H + H.T)
        oracle = QuadraticOracle(H, rng.standard_normal(m), mu, L)
    M = rescale_spectrum(rng.standard_normal((n, m)), 1.0, 3.0)
    b = rng.standard_normal(n)
    prob = SaddleProblem(BlockObjective(oracle, [mi] * N, separable=separable), DenseCoupling(M, [mi] * N), b)
    x, y = dense_kkt_certificate(H, oracle.c, M, b)
    return prob, SaddleCertificate.from_primal_dual(prob, x, y)


# --- parameters ---------------------------------------------------------------


def test_xsbc_params_examples():
    p = stoc.derive_xsbc_params(2.0, 2.0, 1.0, 1.0, 1)
    assert p.alpha == pytest.approx(0.1) and p.t == pytest.approx(0.2 / (2.8 * 2.0))
    r = 7 / 32
    assert 1 - r - 16 * r * r == pytest.approx(1 / 64)
    assert p.hat_s == pytest.approx(7 / 32)


@pytest.mark.parametrize("seed", range(10))
def test_xsbc_pi_at_least_n(seed):
    r = np.random.default_rng(seed)
    N = int(r.integers(1, 50))
    p = stoc.derive_xsbc_params(1.0, 10 ** r.uniform(0, 4), 1.0, 10 ** r.uniform(0, 2), N)
    assert p.Pi >= N and p.t > 0


def test_ysbc_params_examples():
    p = stoc.derive_ysbc_params(1.0, 1.0, 1.0, 1.0, 5)
    xi0 = 1 / (1 - math.sqrt(2 / 3))
    assert p.xi == pytest.approx(xi0) and xi0 == pytest.approx(5.449, abs=1e-3)
    assert p.Pi == pytest.approx(4 * xi0 * 5)
    assert p.hat_s == 0.25
    q = stoc.derive_ysbc_params(1.0, 1.0, 1.0, 40.0, 3)
    assert q.Pi == pytest.approx(8 * 3 * 1600 / q.xi)
    assert q.xi * (q.xi - 1) >= q.alpha * (1 + q.tau) * (q.xi - 1) + q.beta * q.xi**2


def test_nonsep_params_omega():
    p = stoc.derive_xsbc_nonsep_params(1.0, 4.0, 1.0, 2.0, 3)
    assert p.omega == pytest.approx((p.tau + p.xi / 3) / ((1 + p.gamma) * (1 + p.tau)))
    assert p.t > 0


# --- scalar hand evaluations --------------------------------------------------


def scalar_blocks():
    h = np.array([2.0, 3.0])
    a = np.array([[1.0, 2.0]])
    prob = SaddleProblem(BlockObjective(QuadraticOracle(h, np.array([0.5, -1.0])), [1, 1]),
                         DenseCoupling(a, [1, 1]), np.array([0.3]))
    return prob, h, a[0]


def test_x_sbc_step_scalar():
    prob, h, a = scalar_blocks()
    c, b = np.array([0.5, -1.0]), 0.3
    p = derive_params("x-sbc-dapd", prob)
    x, z, y = np.array([0.4, -0.2]), np.array([1.0, 0.7]), np.array([0.9])
    xh = p.xi * z - (p.xi - 1) * x
    gz = h * z - c
    st = stoc.XStocState(x, z, y, np.array([a @ xh]), gz, None, None)
    out = stoc.x_sbc_step(st, prob, p, i=0, j=1)
    y1 = y[0] + (p.chi * p.s / 2) * (a @ xh - b) - p.hat_s * a[0] * (a[0] * y[0] + gz[0])
    x1 = z[1] - p.t * (gz[1] + a[1] * y1)
    z1 = (1 + p.gamma) * x1 - p.gamma * x[1]
    assert out.y[0] == pytest.approx(y1, rel=1e-14)
    assert (out.x[1], out.z[1]) == pytest.approx((x1, z1), rel=1e-14)
    assert (out.x[0], out.z[0]) == (x[0], z[0])


def test_y_sbc_step_scalar_forced_refresh():
    prob, h, a = scalar_blocks()
    c, b = np.array([0.5, -1.0]), 0.3
    p = derive_params("y-sbc-dapd", prob)
    x, y, w, u = np.array([0.4, -0.2]), np.array([0.9]), np.array([-0.1]), np.array([0.2])
    gx = h * x - c
    st = stoc.YStocState(x, y, w, u, gx, np.array([a @ (x - p.t * gx)]), a * y[0], np.array([a @ a * y[0]]))
    out = stoc.y_sbc_step(st, prob, p, i=1, j=0, refresh=True)
    yt = (w[0] + (p.s / 2) * (a @ x - b) - (p.hat_s / 2) * (a @ (a * y[0] + gx))
          - p.hat_s * a[1] * a[1] * (w[0] - y[0]))
    u1 = p.xi * yt - (p.xi - 1) * y[0]
    w1 = (p.tau * yt + u1) / (1 + p.tau)
    x0 = x[0] - p.tilde_t * (gx[0] + a[0] * u1)
    assert (out.y[0], out.u[0], out.w[0], out.x[0]) == pytest.approx((yt, u1, w1, x0), rel=1e-13)
    assert out.x[1] == x[1]


# --- structural properties -----------------------------------------------------


@pytest.mark.parametrize("method", list(stoc._STEPS))
def test_fixed_point_all_branches(rng, method):
    prob, cert = block_problem(rng, separable=method != "x-sbc-nonsep")
    p = derive_params(method, prob)
    st = stoc._INITS[method](prob, p, cert.x_star, cert.y_star)
    for kw, _ in stoc._branches(method, prob.N, p, "independent-ij"):
        out = stoc._STEPS[method](st, prob, p, **kw)
        assert np.allclose(out.x, cert.x_star, atol=1e-12) and np.allclose(out.y, cert.y_star, atol=1e-12)


def test_branch_counts_and_weights(rng):
    prob, cert = block_problem(rng, N=3)
    p = derive_params("x-sbc-dapd", prob)
    br = stoc._branches("x-sbc-dapd", 3, p, "independent-ij")
    assert len(br) == 9 and all(w == pytest.approx(1 / 9) for _, w in br)
    prob1, cert1 = block_problem(rng, N=1, mi=6)
    py = derive_params("y-sbc-dapd", prob1)
    st = stoc.y_sbc_init(prob1, py, cert1.x_star + 1, cert1.y_star)
    spec = LyapunovSpec("y-stoc", py, cert1, prob1)
    ev, cnt = stoc.enumerate_one_step_expectation("y-sbc-dapd", st, prob1, py, lambda s: psi(spec, s))
    assert cnt == 2
    # refresh_p = 1 when N = 1, so the expectation is the forced-refresh branch
    single = psi(spec, stoc.y_sbc_step(st, prob1, py, i=0, j=0, refresh=True))
    assert ev == pytest.approx(single, rel=1e-12)
    with pytest.raises(ValueError):
        stoc.enumerate_one_step_expectation("bogus", st, prob1, py, lambda s: 0.0)


@pytest.mark.parametrize("method", list(stoc._STEPS))
def test_cache_coherence(rng, method):
    prob, cert = block_problem(rng, N=4, separable=method != "x-sbc-nonsep")
    p = derive_params(method, prob)
    st = stoc._INITS[method](prob, p, rng.standard_normal(prob.m), rng.standard_normal(prob.n))
    sampler = stoc.BlockSampler(3, prob.N)
    for _ in range(200):
        st = stoc._STEPS[method](st, prob, p, sampler=sampler)
        assert max(stoc.cache_errors(st, prob, p).values()) <= 1e-10


@pytest.mark.parametrize("method,per_iter", [("x-sbc-dapd", 4), ("x-sbc-nonsep", 4)])
def test_x_cost_exact(rng, method, per_iter):
    prob, cert = block_problem(rng, N=5, separable=method == "x-sbc-dapd")
    tr = run(method, prob, cert, RunOptions(max_iter=100, log_every=100))
    assert tr.rows[-1]["actual_block_ops"] == per_iter * 100


def test_y_cost_expected_six(rng):
    prob, cert = block_problem(rng, N=5)
    tr = run("y-sbc-dapd", prob, cert, RunOptions(max_iter=20000, log_every=20000, compute_psi=False))
    ops = tr.rows[-1]["actual_block_ops"] / 20000
    # 4 units always plus 2N units with probability 1/N
    assert abs(ops - 6) < 4 * math.sqrt(4 * 5 * 0.2 * 0.8 * 5 / 20000) + 0.05


def test_unsupported(rng):
    prob, cert = block_problem(rng, separable=False)
    with pytest.raises(stoc.UnsupportedMethodError):
        run("x-sbc-dapd", prob, cert, RunOptions(max_iter=1))
    sep, _ = block_problem(rng)
    l1 = SaddleProblem(sep.objective, sep.coupling, sep.b, L1Term(0.1))
    with pytest.raises(stoc.UnsupportedMethodError):
        run("y-sbc-dapd", l1, None, RunOptions(max_iter=1))


def test_reproducible_and_streams_independent(rng):
    prob, cert = block_problem(rng, N=4)
    a = run("x-sbc-dapd", prob, cert, RunOptions(max_iter=50, seed=9))
    b = run("x-sbc-dapd", prob, cert, RunOptions(max_iter=50, seed=9))
    assert np.array_equal(a.final_state.x, b.final_state.x)
    s = stoc.BlockSampler(0, 50)
    i = np.array([s.draw_i() for _ in range(2000)])
    j = np.array([s.draw_j() for _ in range(2000)])
    assert not np.array_equal(i, j) and abs(np.corrcoef(i, j)[0, 1]) < 0.1


def test_j_equals_i_mode_converges(rng):
    prob, cert = block_problem(rng, N=3)
    for meth in ("x-sbc-dapd", "y-sbc-dapd"):
        tr = run(meth, prob, cert, RunOptions(max_iter=20000, log_every=20000, mode="j-equals-i",
                                              compute_psi=False))
        assert tr.rows[-1]["rel_err_x"] < 1e-6


def test_sep_and_nonsep_both_contract(rng):
    prob, cert = block_problem(rng, N=3)
    ps = derive_params("x-sbc-dapd", prob)
    pn = derive_params("x-sbc-nonsep", prob)
    for kind, p in (("x-stoc", ps), ("x-stoc-nonsep", pn)):
        rep = check_contraction_stoc(LyapunovSpec(kind, p, cert, prob), prob, p, 20, seed=4)
        assert rep.passed, rep.violations[:3]
