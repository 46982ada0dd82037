import numpy as np
import pytest

from dapd.experiments import rescale_spectrum
from dapd.problem import (BlockObjective, DenseCoupling, PseudoHuberOracle, QuadraticOracle, SaddleCertificate,
                          SaddleProblem)
from dapd.prox import ZeroTerm


def dense_kkt_certificate(H, c, M, b):
    """Saddle point of 0.5 x'Hx - c'x + y'(Mx - b) by one dense block solve."""
    n, m = M.shape
    K = np.block([[H, M.T], [M, np.zeros((n, n))]])
    sol = np.linalg.solve(K, np.concatenate([c, b]))
    return sol[:m], sol[m:]


def random_quadratic_problem(rng, m=40, n=20, mu=1.0, L=10.0, s_min=1.0, s_max=10.0, dual=None,
                             blocks=None, diagonal=False):
    """Random strongly convex quadratic with a rescaled Gaussian coupling."""
    if diagonal:
        H = rng.uniform(mu, L, m)
        H[0], H[-1] = mu, L
        Hd = np.diag(H)
    else:
        Q, _ = np.linalg.qr(rng.standard_normal((m, m)))
        ev = rng.uniform(mu, L, m)
        ev[0], ev[-1] = mu, L
        Hd = (Q * ev) @ Q.T
        Hd = 0.5 * (Hd + Hd.T)
        H = Hd
    c = rng.standard_normal(m)
    M = rescale_spectrum(rng.standard_normal((n, m)), s_min, s_max)
    b = rng.standard_normal(n)
    oracle = QuadraticOracle(H, c, mu, L, block_sizes=blocks if not diagonal else None)
    coupling = DenseCoupling(M, blocks)
    objective = BlockObjective(oracle, blocks) if blocks else oracle
    prob = SaddleProblem(objective, coupling, b, dual or ZeroTerm())
    return prob, Hd, c, M, b


def exact_cert(prob, Hd, c, M, b):
    x, y = dense_kkt_certificate(Hd, c, M, b)
    return SaddleCertificate.from_primal_dual(prob, x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_problem(rng):
    prob, Hd, c, M, b = random_quadratic_problem(rng, m=20, n=10)
    return prob, exact_cert(prob, Hd, c, M, b)


def pseudo_huber_problem(rng, m=12, n=8, e=0.5):
    M = rescale_spectrum(rng.standard_normal((n, m)), 1.0, 3.0)
    b = M @ rng.standard_normal(m)
    return SaddleProblem(PseudoHuberOracle(m, e), DenseCoupling(M), b)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
