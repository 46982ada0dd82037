"""Command-line harness: ``dapd gen | run | verify | bench``.

Exit codes: 0 success/pass, 1 verification failure, 2 usage or configuration error.
Default output directory is ``$DAPD_OUTPUT_DIR`` (falls back to the current directory).
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io as _io
import os
import sys

import numpy as np

from . import det, stoc
from .bench import run_bench
from .experiments import CstConfig, NseConfig, QpConfig, gen_cst, gen_nse, gen_qp
from .hard import build_c1, build_c1_stoc, verify_empirical_lower_bound
from .io import (ContainerError, atomic_write_bytes, load_problem, read_trace_csv, save_problem,
                 write_trace_csv)
from .lyapunov import (LYAPUNOV_KINDS, LyapunovSpec, SpecMismatchError, check_contraction_det,
                       check_contraction_stoc, psi_floor)
from .plot import svg_convergence_plot
from .problem import ParameterDomainError, kkt_residual
from .runner import METHODS, STOCHASTIC, RunOptions, instance_hash, reference_certificate, run
from .spectral import certify_spectrum

CONFIG_FORMAT = "dapd-config/1"
EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
OUTPUT_ENV = "DAPD_OUTPUT_DIR"

GENERATORS = ("cst", "nse", "qp-l1", "qp-ineq", "hard-c1", "hard-c1-stoc")
_HARD_C1_KEYS = {"L": float, "mu": float, "s_min": float, "s_max": float, "k_budget": int}
_HARD_C1S_KEYS = {"barL": float, "mu": float, "s_min": float, "bar_s_max": float, "N": int, "k_budget": int}

PARAM_CLASSES = {
    "x-dapd": det.XDapdParams, "y-dapd": det.YDapdParams, "papc": det.PapcParams,
    "x-sbc-dapd": stoc.XSbcParams, "y-sbc-dapd": stoc.YSbcParams, "x-sbc-nonsep": stoc.XSbcNonsepParams,
}
_METHOD_LYAP = {v[1]: k for k, v in LYAPUNOV_KINDS.items()}


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# instance construction


def _coerce(value, typ):
    if typ is bool:
        return str(value).lower() in ("1", "true", "yes")
    if typ is int:
        return int(float(value)) if isinstance(value, str) and "e" in value.lower() else int(value)
    return typ(value)


def _typed_params(schema: dict, params: dict) -> dict:
    out = {}
    for k, v in params.items():
        if k not in schema:
            raise UsageError(f"unknown parameter {k!r}; expected one of {sorted(schema)}")
        try:
            out[k] = _coerce(v, schema[k])
        except ValueError as exc:
            raise UsageError(f"bad value for {k!r}: {v!r}") from exc
    return out


def _schema_of(cls) -> dict:
    return {f.name: type(f.default) for f in dataclasses.fields(cls)}


def build_instance(kind: str, params: dict):
    """Return ``(problem, certificate or None, generator record)``."""
    if kind == "cst":
        cfg = CstConfig(**_typed_params(_schema_of(CstConfig), params))
        return gen_cst(cfg).problem, None, {"kind": kind, "params": dataclasses.asdict(cfg)}
    if kind == "nse":
        cfg = NseConfig(**_typed_params(_schema_of(NseConfig), params))
        return gen_nse(cfg).problem, None, {"kind": kind, "params": dataclasses.asdict(cfg)}
    if kind in ("qp-l1", "qp-ineq"):
        p = _typed_params(_schema_of(QpConfig), params)
        p["variant"] = "l1" if kind == "qp-l1" else "inequality"
        cfg = QpConfig(**p)
        inst = gen_qp(cfg)
        return inst.problem, inst.cert, {"kind": kind, "params": dataclasses.asdict(cfg)}
    if kind == "hard-c1":
        p = {"L": 100.0, "mu": 1.0, "s_min": 1.0, "s_max": 10.0, "k_budget": 1}
        p.update(_typed_params(_HARD_C1_KEYS, params))
        inst = build_c1(**p)
        return inst.problem, inst.cert, {"kind": kind, "params": p}
    if kind == "hard-c1-stoc":
        p = {"barL": 100.0, "mu": 1.0, "s_min": 1.0, "bar_s_max": 10.0, "N": 4, "k_budget": 1}
        p.update(_typed_params(_HARD_C1S_KEYS, params))
        inst = build_c1_stoc(**p)
        return inst.problem, inst.cert, {"kind": kind, "params": p}
    raise UsageError(f"unknown generator {kind!r}; choose from {GENERATORS}")


@dataclasses.dataclass
class InstanceBuilder:
    """Picklable ``seed -> (problem, cert)`` factory for replications."""

    kind: str
    params: dict

    def __call__(self, seed: int):
        p = dict(self.params)
        if self.kind not in ("hard-c1", "hard-c1-stoc"):
            p["seed"] = seed
        problem, cert, _ = build_instance(self.kind, p)
        return problem, cert


# ---------------------------------------------------------------------------
# configuration


def read_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep parameter names case-sensitive
    if path is None:
        return cp
    if not os.path.exists(path):
        raise UsageError(f"config file {path!r} not found")
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise UsageError(f"config parse error: {exc}") from exc
    fmt = cp.get("dapd", "format", fallback=None)
    if fmt != CONFIG_FORMAT:
        raise UsageError(f"config must declare [dapd] format = {CONFIG_FORMAT} (got {fmt!r})")
    return cp


def _section(cp, name) -> dict:
    return dict(cp[name]) if cp.has_section(name) else {}


def _kv_list(items) -> dict:
    out = {}
    for it in items or []:
        if "=" not in it:
            raise UsageError(f"expected key=value, got {it!r}")
        k, v = it.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def _instance_from_args(args, cp):
    """Load ``--instance`` or build from ``--kind``/config; returns (problem, cert, header-ish)."""
    if getattr(args, "instance", None):
        problem, cert, header = load_problem(args.instance)
        return problem, cert, header.get("generator")
    kind = getattr(args, "kind", None) or cp.get("instance", "kind", fallback=None)
    if kind is None:
        raise UsageError("give --instance PATH or a generator (--kind or [instance] kind)")
    params = _section(cp, "instance.params")
    params.update(_kv_list(getattr(args, "param", None)))
    problem, cert, gen = build_instance(kind, params)
    return problem, cert, gen


def _out_path(path, default_name):
    if path:
        return path
    return os.path.join(os.environ.get(OUTPUT_ENV, "."), default_name)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen(args) -> int:
    cp = read_config(args.config)
    params = _section(cp, "instance.params")
    params.update(_kv_list(args.param))
    problem, cert, gen = build_instance(args.kind, params)
    if cert is None and args.certify:
        cert = reference_certificate(problem)
    s_lo, s_hi, bar = problem.coupling.spectrum
    out = _out_path(args.output, f"{args.kind}.npz")
    save_problem(out, problem, cert, gen)
    print(f"wrote {out}")
    print(f"spectrum s_min={s_lo:.10g} s_max={s_hi:.10g} bar_s_max={bar:.10g}")
    if cert is not None:
        r = kkt_residual(problem, cert.x_star, cert.y_star)
        print(f"certificate quality={cert.quality} kkt_dual={r[0]:.3e} kkt_prim={r[1]:.3e}")
    return EXIT_OK


def cmd_run(args) -> int:
    cp = read_config(args.config)
    rs = _section(cp, "run")
    method = args.method or rs.get("method")
    if method not in METHODS:
        raise UsageError(f"--method must be one of {METHODS}")
    max_iter = args.max_iter if args.max_iter is not None else (int(rs["max_iter"]) if "max_iter" in rs else None)
    budget = args.bmm_budget if args.bmm_budget is not None else (int(rs["bmm_budget"]) if "bmm_budget" in rs else None)
    if (max_iter is None) == (budget is None):
        raise UsageError("set exactly one of --max-iter and --bmm-budget")
    overrides = {k: float(v) for k, v in {**_section(cp, "run.overrides"), **_kv_list(args.override)}.items()}
    opt = RunOptions(max_iter=max_iter, bmm_budget=budget,
                     log_every=args.log_every or int(rs.get("log_every", 1)),
                     seed=args.seed if args.seed is not None else int(rs.get("seed", 0)),
                     mode=args.mode or rs.get("mode", "independent-ij"),
                     overrides=overrides, store_iterates=bool(args.save_iterates),
                     target_rel_err=args.target)
    problem, cert, _ = _instance_from_args(args, cp)
    if cert is None:
        cert = reference_certificate(problem)
        print(f"reference certificate computed (kkt {cert.tol:.2e})")
    trace = run(method, problem, cert, opt)
    out = _out_path(args.output, f"{method}.csv")
    write_trace_csv(out, trace)
    print(f"wrote {out} ({len(trace.rows)} rows); final rel_err_x={trace.rows[-1]['rel_err_x']:.3e}")
    if args.save_iterates:
        buf = _io.BytesIO()
        np.savez(buf, x=np.array(trace.iterates["x"]), y=np.array(trace.iterates["y"]))
        atomic_write_bytes(args.save_iterates, buf.getvalue())
    if args.svg:
        traces = [trace] + [read_trace_csv(p) for p in (args.overlay or [])]
        write_svg(args.svg, traces, args.x_axis if args.x_axis else ("bmm" if method in STOCHASTIC else "iter"))
        print(f"wrote {args.svg}")
    return EXIT_OK


def write_svg(path, traces, x_axis="iter"):
    col = "nominal_bmm" if x_axis == "bmm" else "iter"
    series = [(t.method, t.column(col), t.column("rel_err_x")) for t in traces]
    svg = svg_convergence_plot(series, x_label="block matrix multiplications" if x_axis == "bmm" else "iteration")
    atomic_write_bytes(path, svg.encode())


def _params_from_trace(trace):
    cls = PARAM_CLASSES[trace.method]
    try:
        return cls(**trace.params)
    except TypeError as exc:
        raise SpecMismatchError(f"trace parameters do not match {trace.method}: {exc}") from exc


def _write_report(path, header, rows):
    if not path:
        return
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write_bytes(path, buf.getvalue().encode())


def cmd_verify(args) -> int:
    what = args.what
    if what == "certificate":
        try:
            problem, cert, _ = load_problem(args.instance)
        except ContainerError as exc:
            print(f"FAIL certificate: {exc}")
            return EXIT_FAIL
        if cert is None:
            print("FAIL certificate: container has no certificate")
            return EXIT_FAIL
        r_d, r_p = kkt_residual(problem, cert.x_star, cert.y_star)
        g = problem.coupling.apply(cert.x_star) - problem.b
        tol = max(10 * cert.tol, 1e-10)
        ok_g = float(np.linalg.norm(g - cert.g_star)) <= 1e-10 * (1 + float(np.linalg.norm(problem.b)))
        ok_sub = problem.dual_term.subgradient_member_check(cert.y_star, cert.g_star, tol=1e-8)
        ok = r_d <= tol and r_p <= tol and ok_g and ok_sub
        _write_report(args.report, ["check", "value", "threshold", "passed"],
                      [["kkt_dual", r_d, tol, r_d <= tol], ["kkt_prim", r_p, tol, r_p <= tol],
                       ["g_star_consistent", ok_g, "", ok_g], ["subgradient", ok_sub, "", ok_sub]])
        print(f"{'PASS' if ok else 'FAIL'} certificate: kkt_dual={r_d:.3e} kkt_prim={r_p:.3e} tol={tol:.1e}")
        return EXIT_OK if ok else EXIT_FAIL

    problem, cert, header = load_problem(args.instance)
    if what == "spectrum":
        stored = problem.coupling.spectrum
        fresh = certify_spectrum(_fresh_coupling(problem), args.mode)
        rel = [abs(a - b) / max(abs(b), 1e-300) for a, b in zip(stored, fresh)]
        ok = max(rel) <= 1e-8 and fresh[0] > 0
        _write_report(args.report, ["quantity", "stored", "certified", "rel_diff"],
                      [[n, a, b, r] for n, a, b, r in zip(("s_min", "s_max", "bar_s_max"), stored, fresh, rel)])
        print(f"{'PASS' if ok else 'FAIL'} spectrum: stored={stored} certified={fresh}")
        return EXIT_OK if ok else EXIT_FAIL

    if what == "lower-bound":
        gen = header.get("generator") or {}
        if gen.get("kind") != "hard-c1":
            raise UsageError("lower-bound verification needs a hard-c1 container")
        inst = build_c1(**gen["params"])
        A, B = inst.problem.coupling.to_dense(), problem.coupling.to_dense()
        same = (A.shape == B.shape and np.allclose(A, B, rtol=0, atol=1e-12 * np.abs(A).max())
                and np.allclose(inst.problem.oracle.c, problem.oracle.c, rtol=1e-12, atol=0))
        if not same:
            raise SpecMismatchError("container data does not match its hard-c1 generator record")
        if not args.iterates:
            raise UsageError("--iterates NPZ (from run --save-iterates) is required")
        with np.load(args.iterates) as z:
            ys = z["y"]
        rep = verify_empirical_lower_bound(inst, ys)
        _write_report(args.report, ["iter", "error", "bound"], [list(v) for v in rep.violations])
        print(f"{'PASS' if rep.passed else 'FAIL'} lower-bound: checked={rep.checked} "
              f"violations={len(rep.violations)}")
        return EXIT_OK if rep.passed else EXIT_FAIL

    if what == "contraction":
        if cert is None:
            cert = reference_certificate(problem)
        if args.trace:
            trace = read_trace_csv(args.trace)
            if trace.instance != instance_hash(problem):
                raise SpecMismatchError("trace was produced on a different instance")
            if trace.method not in _METHOD_LYAP:
                raise SpecMismatchError(f"no Lyapunov function for method {trace.method!r}")
            params = _params_from_trace(trace)
            spec = LyapunovSpec(_METHOD_LYAP[trace.method], params, cert, problem)
            if trace.method in STOCHASTIC:
                rep = check_contraction_stoc(spec, problem, params, args.states, args.seed, mode=args.mode)
            else:
                rep = check_contraction_det(spec, trace, floor=psi_floor(spec))
        else:
            raise UsageError("--trace is required for contraction verification")
        _write_report(args.report, ["step", "psi_before", "psi_after"], [list(v) for v in rep.violations])
        print(f"{'PASS' if rep.passed else 'FAIL'} contraction: checked={rep.checked} "
              f"violations={len(rep.violations)} max_ratio={rep.max_ratio:.6f}")
        return EXIT_OK if rep.passed else EXIT_FAIL
    raise UsageError(f"unknown verification {what!r}")


def _fresh_coupling(problem):
    from .problem import DenseCoupling
    return DenseCoupling(problem.coupling.to_dense(), problem.coupling.block_sizes)


def cmd_bench(args) -> int:
    cp = read_config(args.config)
    kind = args.kind or cp.get("instance", "kind", fallback=None)
    if kind is None:
        raise UsageError("--kind is required")
    params = _section(cp, "instance.params")
    params.update(_kv_list(args.param))
    build_instance(kind, {**params})  # validate early
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}")
    if args.seeds:
        seeds = [int(s) for s in args.seeds.split(",")]
    else:
        seeds = [args.seed0 + r for r in range(args.reps)]
    if len(seeds) < 2:
        raise UsageError("replication count must be at least 2")
    if (args.max_iter is None) == (args.bmm_budget is None):
        raise UsageError("set exactly one of --max-iter and --bmm-budget")
    opts = {"max_iter": args.max_iter, "bmm_budget": args.bmm_budget, "log_every": 10**9}
    rows = run_bench(InstanceBuilder(kind, params), seeds, methods, opts, jobs=args.jobs, level=args.level)
    buf = _io.StringIO()
    buf.write("# dapd-bench/1\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["method", "reps", "geo_mean", "ci_lo", "ci_hi"])
    for r in rows:
        w.writerow([r.method, r.reps, repr(r.geo_mean), repr(r.ci_lo), repr(r.ci_hi)])
        print(f"{r.method:12s} geo_mean={r.geo_mean:.3e} CI=[{r.ci_lo:.3e}, {r.ci_hi:.3e}]")
    out = _out_path(args.output, "bench.csv")
    atomic_write_bytes(out, buf.getvalue().encode())
    print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dapd", description="Accelerated primal-dual saddle-point toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate an instance container")
    g.add_argument("kind", choices=GENERATORS)
    g.add_argument("--param", "-p", action="append", help="generator parameter key=value (repeatable)")
    g.add_argument("--config", help=f"config file ({CONFIG_FORMAT})")
    g.add_argument("--certify", action="store_true", help="compute a reference certificate when none is exact")
    g.add_argument("--output", "-o")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run a method and write a trace CSV")
    src = r.add_mutually_exclusive_group()
    src.add_argument("--instance", help="problem container path")
    src.add_argument("--kind", choices=GENERATORS, help="generate inline")
    r.add_argument("--param", "-p", action="append")
    r.add_argument("--config")
    r.add_argument("--method", choices=METHODS)
    budget = r.add_mutually_exclusive_group()
    budget.add_argument("--max-iter", type=int)
    budget.add_argument("--bmm-budget", type=int)
    r.add_argument("--log-every", type=int)
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=stoc.MODES)
    r.add_argument("--target", type=float, help="stop once rel_err_x falls below this value")
    r.add_argument("--override", action="append", help="parameter override, e.g. Pi=5000")
    r.add_argument("--output", "-o")
    r.add_argument("--svg", help="write a convergence plot")
    r.add_argument("--overlay", action="append", help="extra trace CSV to overlay on the plot")
    r.add_argument("--x-axis", choices=("iter", "bmm"))
    r.add_argument("--save-iterates", help="NPZ file for per-iteration x and y snapshots")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("verify", help="verify contraction, certificate, lower bound or spectrum")
    v.add_argument("what", choices=("contraction", "certificate", "lower-bound", "spectrum"))
    v.add_argument("--instance", required=True)
    v.add_argument("--trace")
    v.add_argument("--iterates")
    v.add_argument("--mode", default=None)
    v.add_argument("--states", type=int, default=50, help="random states for stochastic checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--report", help="CSV report path")
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="seeded replications with log-space confidence intervals")
    b.add_argument("--kind", choices=GENERATORS)
    b.add_argument("--param", "-p", action="append")
    b.add_argument("--config")
    b.add_argument("--methods", required=True, help="comma-separated method ids")
    b.add_argument("--reps", type=int, default=20)
    b.add_argument("--seeds", help="explicit comma-separated seeds (overrides --reps)")
    b.add_argument("--seed0", type=int, default=0)
    bb = b.add_mutually_exclusive_group()
    bb.add_argument("--max-iter", type=int)
    bb.add_argument("--bmm-budget", type=int)
    b.add_argument("--jobs", type=int, default=1)
    b.add_argument("--level", type=float, default=0.95)
    b.add_argument("--output", "-o")
    b.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "what", None) == "spectrum" and args.mode is None:
        args.mode = "dense-svd"
    if getattr(args, "what", None) == "contraction" and args.mode is None:
        args.mode = "independent-ij"
    try:
        return args.func(args)
    except (UsageError, ParameterDomainError, stoc.UnsupportedMethodError, SpecMismatchError,
            ContainerError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
