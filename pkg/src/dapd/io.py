"""Problem container files and trace CSV serialization.

Problem container (schema ``dapd-problem/1``) is a NumPy ``.npz`` archive:

* ``header``: UTF-8 JSON (stored as a uint8 array) with keys ``schema``,
  ``name``, ``m``, ``n``, ``N``, ``block_sizes``, ``separable``,
  ``objective`` (``{"kind", "params"}`` with scalar parameters), ``dual``
  (``{"kind", "params"}``), ``spectrum`` (``[s_min, s_max, bar_s_max]``),
  ``generator`` (config used to build the instance, or null) and
  ``certificate`` (``{"quality", "tol"}`` or null).
* ``M``: dense coupling, shape ``(n, m)``, C (row-major) order.
* ``b``: offset, shape ``(n,)``.
* ``obj_H``, ``obj_c``: quadratic objective data (quadratic kind only).
* ``cert_x``, ``cert_y``, ``cert_g``: certificate vectors (when present).

Trace CSV (schema ``dapd-trace/1``): line 1 is ``# dapd-trace/1``, line 2 is
``# meta: <json>``, line 3 the column header, then one row per logged
iteration. Floats are written with ``repr`` so parsing is exact.
"""
from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile

import numpy as np

from .problem import (BlockObjective, DenseCoupling, PseudoHuberOracle, QuadraticOracle, SaddleCertificate,
                      SaddleProblem)
from .prox import make_prox_term
from .runner import TRACE_COLUMNS, RunTrace

__all__ = ["PROBLEM_SCHEMA", "TRACE_SCHEMA", "ContainerError", "save_problem", "load_problem",
           "write_trace_csv", "read_trace_csv", "atomic_write_bytes"]

PROBLEM_SCHEMA = "dapd-problem/1"
TRACE_SCHEMA = "dapd-trace/1"
_INT_COLUMNS = {"iter", "nominal_bmm", "actual_block_ops", "grad_calls"}


class ContainerError(ValueError):
    """Malformed or inconsistent problem container."""


def atomic_write_bytes(path: str, data: bytes) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _jsonable(v):
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    return v


def save_problem(path: str, problem: SaddleProblem, cert: SaddleCertificate | None = None,
                 generator: dict | None = None) -> None:
    oracle = problem.oracle
    arrays = {"M": np.ascontiguousarray(problem.coupling.to_dense()), "b": problem.b}
    if isinstance(oracle, QuadraticOracle):
        obj = {"kind": "quadratic", "params": {"mu": oracle.mu, "lip": oracle.lip, "diagonal": oracle.diagonal}}
        arrays["obj_H"] = oracle.H
        arrays["obj_c"] = oracle.c
    elif isinstance(oracle, PseudoHuberOracle):
        obj = {"kind": "pseudo_huber", "params": {"e": oracle.e}}
    else:
        raise ContainerError(f"cannot serialize objective of type {type(oracle).__name__}")
    header = {
        "schema": PROBLEM_SCHEMA,
        "name": problem.name,
        "m": problem.m,
        "n": problem.n,
        "N": problem.N,
        "block_sizes": list(problem.coupling.block_sizes),
        "separable": bool(problem.separable) if problem.is_block else None,
        "objective": obj,
        "dual": {"kind": problem.dual_term.kind, "params": problem.dual_term.params()},
        "spectrum": list(problem.coupling.spectrum),
        "generator": generator,
        "certificate": None if cert is None else {"quality": cert.quality, "tol": cert.tol},
    }
    if cert is not None:
        arrays.update(cert_x=cert.x_star, cert_y=cert.y_star, cert_g=cert.g_star)
    arrays["header"] = np.frombuffer(json.dumps(_jsonable(header), sort_keys=True).encode(), dtype=np.uint8)
    buf = _io.BytesIO()
    np.savez(buf, **arrays)
    atomic_write_bytes(path, buf.getvalue())


def load_problem(path: str) -> tuple[SaddleProblem, SaddleCertificate | None, dict]:
    """Return ``(problem, certificate or None, header)``."""
    try:
        with np.load(path, allow_pickle=False) as z:
            data = {k: z[k] for k in z.files}
        header = json.loads(bytes(data.pop("header")).decode())
    except ContainerError:
        raise
    except Exception as exc:
        raise ContainerError(f"unreadable problem container {path!r}: {exc}") from exc
    if header.get("schema") != PROBLEM_SCHEMA:
        raise ContainerError(f"unsupported schema {header.get('schema')!r}")
    try:
        M, b = data["M"], data["b"]
        n, m = int(header["n"]), int(header["m"])
        if M.shape != (n, m) or b.shape != (n,):
            raise ContainerError("array shapes disagree with the header")
        sizes = [int(s) for s in header["block_sizes"]]
        coupling = DenseCoupling(M, sizes)
        coupling.set_spectrum(*[float(s) for s in header["spectrum"]])
        ob = header["objective"]
        if ob["kind"] == "quadratic":
            oracle = QuadraticOracle(data["obj_H"], data["obj_c"], ob["params"]["mu"], ob["params"]["lip"],
                                     block_sizes=sizes if len(sizes) > 1 else None)
        elif ob["kind"] == "pseudo_huber":
            oracle = PseudoHuberOracle(m, ob["params"]["e"])
        else:
            raise ContainerError(f"unknown objective kind {ob['kind']!r}")
        objective = oracle
        if len(sizes) > 1:
            objective = BlockObjective(oracle, sizes, separable=bool(header.get("separable", True)))
        dual = make_prox_term(header["dual"]["kind"], **header["dual"]["params"])
        problem = SaddleProblem(objective, coupling, b, dual, name=header.get("name", ""))
        cert = None
        if header.get("certificate") is not None:
            ch = header["certificate"]
            cert = SaddleCertificate(data["cert_x"], data["cert_y"], data["cert_g"], ch["quality"], float(ch["tol"]))
            if cert.x_star.shape != (m,) or cert.y_star.shape != (n,) or cert.g_star.shape != (n,):
                raise ContainerError("certificate shapes disagree with the header")
    except ContainerError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ContainerError(f"inconsistent problem container: {exc}") from exc
    return problem, cert, header


# ---------------------------------------------------------------------------
# traces


def _fmt(v, col):
    if col in _INT_COLUMNS:
        return str(int(v))
    return repr(float(v))


def write_trace_csv(path: str, trace: RunTrace) -> None:
    buf = _io.StringIO()
    buf.write(f"# {TRACE_SCHEMA}\n")
    buf.write("# meta: " + json.dumps(_jsonable(trace.meta), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in trace.rows:
        w.writerow([_fmt(row[c], c) for c in TRACE_COLUMNS])
    atomic_write_bytes(path, buf.getvalue().encode())


def read_trace_csv(path: str) -> RunTrace:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != f"# {TRACE_SCHEMA}":
            raise ContainerError(f"not a {TRACE_SCHEMA} file")
        meta_line = fh.readline()
        if not meta_line.startswith("# meta: "):
            raise ContainerError("missing trace metadata line")
        meta = json.loads(meta_line[len("# meta: "):])
        reader = csv.reader(fh)
        cols = tuple(next(reader))
        if cols != TRACE_COLUMNS:
            raise ContainerError(f"unexpected trace columns {cols}")
        rows = []
        for rec in reader:
            if not rec:
                continue
            rows.append({c: (int(v) if c in _INT_COLUMNS else float(v)) for c, v in zip(cols, rec)})
    return RunTrace(meta["method"], meta["params"], meta["seed"], meta["prng"], meta["instance"],
                    meta["cert_quality"], rows)
