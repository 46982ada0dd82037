import os

import numpy as np
import pytest

from dapd.bench import log_ci
from dapd.cli import EXIT_FAIL, EXIT_OK, EXIT_USAGE, main
from dapd.experiments import QpConfig, gen_qp
from dapd.io import ContainerError, load_problem, read_trace_csv, save_problem, write_trace_csv
from dapd.plot import svg_convergence_plot
from dapd.runner import RunOptions, reference_certificate, run


@pytest.fixture
def qp_instance():
    inst = gen_qp(QpConfig(variant="l1", m=20, n=8, L=20, s_max=5, seed=1))
    return inst.problem, reference_certificate(inst.problem)


def test_problem_container_roundtrip(tmp_path, qp_instance):
    prob, cert = qp_instance
    path = str(tmp_path / "p.npz")
    save_problem(path, prob, cert, {"kind": "qp-l1"})
    p2, c2, header = load_problem(path)
    assert np.array_equal(p2.coupling.to_dense(), prob.coupling.to_dense())
    assert np.array_equal(p2.b, prob.b) and p2.coupling.spectrum == prob.coupling.spectrum
    assert np.array_equal(c2.x_star, cert.x_star) and c2.quality == cert.quality
    x = np.linspace(-1, 1, prob.m)
    assert p2.objective.value(x) == prob.objective.value(x)
    y = np.linspace(-2, 2, prob.n)
    assert np.array_equal(p2.dual_term.prox(0.3, y), prob.dual_term.prox(0.3, y))
    assert header["generator"]["kind"] == "qp-l1"


def test_corrupted_container(tmp_path, qp_instance):
    path = tmp_path / "bad.npz"
    path.write_bytes(b"not a container")
    with pytest.raises(ContainerError):
        load_problem(str(path))


def test_trace_csv_roundtrip(tmp_path, qp_instance):
    prob, cert = qp_instance
    tr = run("y-dapd", prob, cert, RunOptions(max_iter=40, log_every=7))
    path = str(tmp_path / "t.csv")
    write_trace_csv(path, tr)
    back = read_trace_csv(path)
    assert back.method == tr.method and back.params == pytest.approx(tr.params)
    assert len(back.rows) == len(tr.rows)
    for a, b in zip(back.rows, tr.rows):
        assert a.keys() == b.keys()
        assert all(a[k] == b[k] or (np.isnan(a[k]) and np.isnan(b[k])) for k in a)


def test_trace_rejects_foreign_file(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("a,b\n1,2\n")
    with pytest.raises(ContainerError):
        read_trace_csv(str(p))


def test_svg_deterministic():
    series = [("a", [0, 1, 2], [1.0, 1e-3, 0.0]), ("b", [0, 2], [0.5, 1e-8])]
    s1, s2 = svg_convergence_plot(series), svg_convergence_plot(series)
    assert s1 == s2 and s1.startswith("<svg") and "a" in s1
    with pytest.raises(ValueError):
        svg_convergence_plot([])


def test_log_ci():
    assert log_ci([3.0, 3.0, 3.0]) == pytest.approx((3.0, 3.0, 3.0))
    gm, lo, hi = log_ci([1e-2, 1e-4])
    assert gm == pytest.approx(1e-3) and lo < gm < hi
    with pytest.raises(ValueError):
        log_ci([1.0])
    with pytest.raises(ValueError):
        log_ci([1.0, 0.0])


# --- command line ---------------------------------------------------------------


def test_cli_gen_run_verify(tmp_path):
    inst = str(tmp_path / "qp.npz")
    assert main(["gen", "qp-l1", "-p", "m=20", "-p", "n=8", "-p", "L=20", "-p", "s_max=5", "--certify", "-o", inst]) == EXIT_OK
    trace = str(tmp_path / "y.csv")
    assert main(["run", "--instance", inst, "--method", "y-dapd", "--max-iter", "300", "-o", trace,
                 "--svg", str(tmp_path / "y.svg")]) == EXIT_OK
    assert os.path.exists(tmp_path / "y.svg")
    assert main(["verify", "contraction", "--instance", inst, "--trace", trace]) == EXIT_OK
    assert main(["verify", "certificate", "--instance", inst]) == EXIT_OK
    assert main(["verify", "spectrum", "--instance", inst]) == EXIT_OK


def test_cli_usage_errors(tmp_path):
    assert main(["gen", "cst", "-p", "kappa=1", "-o", str(tmp_path / "c.npz")]) == EXIT_USAGE
    assert main(["gen", "cst", "-p", "bogus=3", "-o", str(tmp_path / "c.npz")]) == EXIT_USAGE
    assert main(["run", "--kind", "qp-l1", "-p", "m=20", "-p", "n=8", "--method", "x-sbc-dapd",
                 "--max-iter", "5", "-o", str(tmp_path / "t.csv")]) == EXIT_USAGE
    assert main(["run", "--kind", "qp-l1", "--method", "y-dapd", "-o", str(tmp_path / "t.csv")]) == EXIT_USAGE


def test_cli_mismatched_trace(tmp_path):
    a, b = str(tmp_path / "a.npz"), str(tmp_path / "b.npz")
    main(["gen", "qp-l1", "-p", "m=20", "-p", "n=8", "-p", "seed=1", "-o", a])
    main(["gen", "qp-l1", "-p", "m=20", "-p", "n=8", "-p", "seed=2", "-o", b])
    t = str(tmp_path / "t.csv")
    assert main(["run", "--instance", a, "--method", "x-dapd", "--max-iter", "10", "-o", t]) == EXIT_OK
    assert main(["verify", "contraction", "--instance", b, "--trace", t]) == EXIT_USAGE
    # x-DAPD trace does not describe a PAPC run and vice versa
    tp = str(tmp_path / "p.csv")
    assert main(["run", "--instance", a, "--method", "papc", "--max-iter", "10", "-o", tp]) == EXIT_OK
    assert main(["verify", "contraction", "--instance", a, "--trace", tp]) == EXIT_USAGE


def test_cli_corrupted_certificate(tmp_path):
    p = tmp_path / "bad.npz"
    p.write_bytes(b"\x00" * 64)
    assert main(["verify", "certificate", "--instance", str(p)]) == EXIT_FAIL


def test_cli_max_iter_zero(tmp_path):
    t = str(tmp_path / "t.csv")
    assert main(["run", "--kind", "qp-l1", "-p", "m=20", "-p", "n=8", "--method", "y-dapd",
                 "--max-iter", "0", "-o", t]) == EXIT_OK
    assert len(read_trace_csv(t).rows) == 1


def test_cli_lower_bound(tmp_path):
    inst = str(tmp_path / "h.npz")
    assert main(["gen", "hard-c1", "-p", "L=100", "-p", "s_max=10", "-p", "k_budget=40", "-o", inst]) == EXIT_OK
    it = str(tmp_path / "it.npz")
    n = load_problem(inst)[0].n
    assert main(["run", "--instance", inst, "--method", "y-dapd", "--max-iter", str(n), "--save-iterates", it,
                 "-o", str(tmp_path / "t.csv")]) == EXIT_OK
    assert main(["verify", "lower-bound", "--instance", inst, "--iterates", it]) == EXIT_OK


def test_cli_config_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[dapd]\nformat = dapd-config/1\n[instance]\nkind = qp-l1\n[instance.params]\nm = 20\nn = 8\n"
                   "[run]\nmethod = x-dapd\nmax_iter = 20\n")
    assert main(["run", "--config", str(cfg), "-o", str(tmp_path / "t.csv")]) == EXIT_OK
    bad = tmp_path / "bad.ini"
    bad.write_text("[instance]\nkind = qp-l1\n")
    assert main(["run", "--config", str(bad), "-o", str(tmp_path / "t.csv")]) == EXIT_USAGE


def test_cli_bench(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--kind", "qp-l1", "-p", "m=20", "-p", "n=8", "--methods", "x-dapd,papc",
                 "--reps", "3", "--max-iter", "200", "-o", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert lines[0] == "# dapd-bench/1" and lines[1] == "method,reps,geo_mean,ci_lo,ci_hi" and len(lines) == 4
    for line in lines[2:]:
        _, reps, gm, lo, hi = line.split(",")
        assert int(reps) == 3 and float(lo) <= float(gm) <= float(hi)
    assert main(["bench", "--kind", "qp-l1", "--methods", "x-dapd", "--reps", "1", "--max-iter", "5"]) == EXIT_USAGE


def test_bench_identical_seeds_degenerate():
    from dapd.bench import run_bench
    from dapd.cli import InstanceBuilder
    rows = run_bench(InstanceBuilder("qp-l1", {"m": "20", "n": "8"}), [3, 3], ["y-dapd"], {"max_iter": 50})
    assert rows[0].ci_lo == rows[0].ci_hi == rows[0].geo_mean


def test_bench_desk_cst_y_dapd_interval_below_papc():
    from dapd.bench import run_bench
    from dapd.cli import InstanceBuilder
    build = InstanceBuilder("cst", {"m": "400", "n": "100", "nnz": "20", "kappa": "100", "s_max": "100"})
    rows = {r.method: r for r in run_bench(build, range(20), ["papc", "y-dapd"], {"max_iter": 3000})}
    assert rows["y-dapd"].ci_hi < rows["papc"].ci_lo


def test_cli_gen_hard_c1_certificate(tmp_path, capsys):
    inst = str(tmp_path / "h.npz")
    assert main(["gen", "hard-c1", "-p", "k_budget=8", "-o", inst]) == EXIT_OK
    prob, cert, _ = load_problem(inst)
    from dapd.problem import kkt_residual
    assert cert is not None and max(kkt_residual(prob, cert.x_star, cert.y_star)) <= 1e-10
    assert main(["verify", "certificate", "--instance", inst]) == EXIT_OK


def test_cli_gen_cst_reports_spectrum(tmp_path, capsys):
    inst = str(tmp_path / "c.npz")
    assert main(["gen", "cst", "-p", "m=60", "-p", "n=20", "-p", "nnz=5", "-p", "s_max=30", "-o", inst]) == EXIT_OK
    assert "s_min=1 s_max=30" in capsys.readouterr().out


def test_cli_lower_bound_papc(tmp_path):
    inst = str(tmp_path / "h.npz")
    main(["gen", "hard-c1", "-p", "k_budget=40", "-o", inst])
    it = str(tmp_path / "it.npz")
    n = load_problem(inst)[0].n
    assert main(["run", "--instance", inst, "--method", "papc", "--max-iter", str(n), "--save-iterates", it,
                 "-o", str(tmp_path / "t.csv")]) == EXIT_OK
    assert main(["verify", "lower-bound", "--instance", inst, "--iterates", it]) == EXIT_OK


def test_cli_stochastic_bmm_budget(tmp_path):
    t, svg = str(tmp_path / "s.csv"), str(tmp_path / "s.svg")
    assert main(["run", "--kind", "cst", "-p", "m=60", "-p", "n=20", "-p", "nnz=5", "-p", "N=6",
                 "--method", "x-sbc-dapd", "--bmm-budget", "4000", "--log-every", "100", "-o", t,
                 "--svg", svg]) == EXIT_OK
    tr = read_trace_csv(t)
    assert tr.rows[-1]["nominal_bmm"] <= 4000 and tr.rows[1]["nominal_bmm"] == 400
    assert "block matrix multiplications" in open(svg).read()
    assert main(["verify", "contraction", "--instance", str(tmp_path / "missing.npz"), "--trace", t]) == EXIT_USAGE
