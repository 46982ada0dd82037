import numpy as np
import pytest

from dapd.hard import build_c1
from dapd.problem import (BlockObjective, ChainCoupling, Counters, DenseCoupling, KroneckerCoupling,
                          ParameterDomainError, PseudoHuberOracle, QuadraticOracle, SaddleCertificate,
                          SaddleProblem, bregman_f, dphi_bregman, kkt_residual, weighted_norm_sq)
from dapd.prox import L1Term, ZeroTerm

from conftest import exact_cert, random_quadratic_problem


def _operators(rng):
    return [
        DenseCoupling(rng.standard_normal((6, 9))),
        DenseCoupling(rng.standard_normal((6, 9)), [3, 3, 3]),
        KroneckerCoupling(rng.standard_normal((4, 3)), sign=-1.0),
        ChainCoupling(5, 1.0, 2.0),
    ]


def test_adjoint_identity_all_operators(rng):
    for op in _operators(rng):
        for _ in range(100):
            x, y = rng.standard_normal(op.m), rng.standard_normal(op.n)
            lhs, rhs = op.apply(x) @ y, x @ op.apply_adjoint(y)
            assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs)) * 10


def test_block_apply_sums_to_apply(rng):
    for op in _operators(rng):
        x = rng.standard_normal(op.m)
        tot = sum(op.block_apply(i, x[sl]) for i, sl in enumerate(op.slices))
        assert np.allclose(tot, op.apply(x), rtol=1e-12, atol=1e-12)
        y = rng.standard_normal(op.n)
        cat = np.concatenate([op.block_apply_adjoint(i, y) for i in range(op.N)])
        assert np.allclose(cat, op.apply_adjoint(y), rtol=1e-12, atol=1e-12)


def test_spectrum_brackets_singular_values(rng):
    for op in _operators(rng):
        sv = np.linalg.svd(op.to_dense(), compute_uv=False)
        assert op.s_min <= sv.min() * (1 + 1e-10) and sv.max() <= op.s_max * (1 + 1e-10)


def test_counters_block_units(rng):
    op = DenseCoupling(rng.standard_normal((4, 6)), [2, 2, 2])
    c = Counters()
    op.apply(np.ones(6), c)
    op.apply_adjoint(np.ones(4), c)
    op.block_apply(1, np.ones(2), c)
    assert (c.block_ops, c.full_apply, c.full_adjoint, c.block_apply) == (7, 1, 1, 1)


def test_kkt_residual_hand_example():
    prob = SaddleProblem(QuadraticOracle(np.array([1.0])), DenseCoupling(np.array([[1.0]])), np.zeros(1))
    assert kkt_residual(prob, np.array([1.0]), np.array([0.0])) == (1.0, 1.0)
    with pytest.raises(ValueError):
        kkt_residual(prob, np.ones(2), np.zeros(1))


def test_kkt_residual_zero_at_certificate(small_problem):
    prob, cert = small_problem
    rd, rp = kkt_residual(prob, cert.x_star, cert.y_star)
    assert rd <= 1e-10 and rp <= 1e-10


def test_kkt_residual_perturbed_hard_instance():
    inst = build_c1(1.0, 1.0, 1.0, np.sqrt(5.0), k_budget=8)
    assert inst.n == 8
    cert = inst.cert
    d = 1e-3
    y = cert.y_star.copy()
    y[0] += d
    rd, _ = kkt_residual(inst.problem, cert.x_star, y)
    # dense oracle: the dual residual is d times the norm of the first row of M
    M = inst.problem.coupling.to_dense()
    assert rd == pytest.approx(d * np.linalg.norm(M[0]), rel=1e-8)


def test_bregman_examples(rng):
    q = QuadraticOracle(np.full(3, 8.0))
    cert0 = SaddleCertificate(np.zeros(3), np.zeros(1), np.zeros(1))
    assert bregman_f(q, np.array([1.0, 0, 0]), cert0) == pytest.approx(4.0)
    ph = PseudoHuberOracle(7, 0.3)
    x, xs = rng.standard_normal(7), rng.standard_normal(7)
    direct = ph.value(x) - ph.value(xs) - ph.gradient(xs) @ (x - xs)
    assert ph.bregman(x, xs) == pytest.approx(direct, rel=1e-9, abs=1e-12)
    assert ph.bregman(xs, xs) == 0.0


def test_bregman_sandwich(rng):
    ph = PseudoHuberOracle(10, 0.2)
    for _ in range(50):
        x, xs = 3 * rng.standard_normal(10), 3 * rng.standard_normal(10)
        d2 = float((x - xs) @ (x - xs))
        D = ph.bregman(x, xs)
        assert ph.mu / 2 * d2 - 1e-10 <= D <= ph.lip / 2 * d2 + 1e-10


def test_weighted_norm(rng):
    eye = DenseCoupling(np.eye(3))
    assert weighted_norm_sq(eye, np.zeros(3), 0.5) == 0.0
    assert weighted_norm_sq(eye, np.array([1.0, 0, 0]), 0.5) == pytest.approx(0.5)
    M = rng.standard_normal((5, 8))
    op = DenseCoupling(M)
    c = 0.5 / op.s_max**2
    y = rng.standard_normal(5)
    assert weighted_norm_sq(op, y, c) == pytest.approx(y @ (np.eye(5) - c * M @ M.T) @ y, rel=1e-12)
    with pytest.raises(ParameterDomainError):
        weighted_norm_sq(op, y, 2.0 / op.s_max**2)


def test_dphi_bregman_examples():
    cert = SaddleCertificate(np.zeros(1), np.zeros(2), np.zeros(2))
    assert dphi_bregman(L1Term(1.0), np.array([2.0, -3.0]), cert) == pytest.approx(5.0)
    assert dphi_bregman(ZeroTerm(), np.array([2.0, -3.0]), cert) == 0.0
    assert dphi_bregman(L1Term(1.0), cert.y_star, cert) == 0.0


def test_block_objective_partial_gradients(rng):
    ph = PseudoHuberOracle(9, 0.4)
    obj = BlockObjective(ph, [3, 3, 3])
    x = rng.standard_normal(9)
    cat = np.concatenate([obj.block_gradient(j, x[sl]) for j, sl in enumerate(obj.slices)])
    assert np.allclose(cat, obj.gradient(x), atol=1e-12)
    nonsep = BlockObjective(QuadraticOracle(np.eye(9) + 0.1), [4, 5], separable=False)
    cat = np.concatenate([nonsep.block_gradient(j, x) for j in range(2)])
    assert np.allclose(cat, nonsep.gradient(x), atol=1e-12)
    with pytest.raises(ValueError):
        BlockObjective(ph, [4, 4])


def test_problem_dimension_checks(rng):
    with pytest.raises(ValueError):
        SaddleProblem(PseudoHuberOracle(5, 1.0), DenseCoupling(np.ones((2, 4))), np.zeros(2))
    with pytest.raises(ValueError):
        SaddleProblem(PseudoHuberOracle(4, 1.0), DenseCoupling(np.ones((2, 4))), np.zeros(3))


def test_certificate_subgradient_membership(rng):
    prob, Hd, c, M, b = random_quadratic_problem(rng, m=12, n=5)
    cert = exact_cert(prob, Hd, c, M, b)
    assert prob.dual_term.subgradient_member_check(cert.y_star, cert.g_star, tol=1e-9)
