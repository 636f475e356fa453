"""Command-line entry point: ``passivecbf {simulate,compare,atlas,check}``."""

from __future__ import annotations

import argparse
import ast
import csv
import json
import math
import operator
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .manipulability import manipulability_batch
from .robot_model import ModelError, load_model_file
from .sim import COMPARED, MU_FRACTION, VDOT_TOL, Controller, ScenarioError, SimulationAbort, load_scenario, run_scenario, summarize
from .task_space import TaskMapConfig, task_jacobian_batch

MAX_GRID = 10_000_000
CHUNK = 20_000
TIE_TOL = 1e-12
MAX_TIES = 10


@dataclass
class RunConfig:
    scenario_path: str
    out_dir: str = "out"
    emit_plots: bool = False
    seed: int = 0
    controller: str = None

    def output_dir(self):
        p = Path(self.out_dir)
        p.mkdir(parents=True, exist_ok=True)
        return p


def _err(msg):
    print(f"error: {msg}", file=sys.stderr)


# ---------------------------------------------------------------------------
# trace export

def trace_header(n, m):
    cols = ["t"] + [f"q{i}" for i in range(n)] + [f"qd{i}" for i in range(n)]
    cols += [f"x{i}" for i in range(m)] + [f"xr{i}" for i in range(m)] + ["V", "Vdot", "mu"]
    cols += [f"tau{i}" for i in range(n)] + [f"ur{i}" for i in range(m)] + ["status", "solve_time"]
    return cols


def _num(v):
    return format(float(v), ".17g")


def write_trace(rows, path):
    """Write the trace as CSV with 17 significant digits and '\\n' line endings."""
    n, m = (len(rows[0].q), len(rows[0].x)) if rows else (0, 0)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(trace_header(n, m))
        for r in rows:
            vals = [r.t, *r.q, *r.qd, *r.x, *r.xr, r.V, r.Vdot, r.mu, *r.tau, *r.ur]
            w.writerow([_num(v) for v in vals] + [r.status, _num(r.solve_time)])


def read_trace(path):
    """Parse a trace CSV into (header, float matrix without status, status list)."""
    with open(path, newline="", encoding="utf-8") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        data, status = [], []
        k = header.index("status")
        for row in rd:
            data.append([float(v) for i, v in enumerate(row) if i != k])
            status.append(row[k])
    return header, np.array(data), status


def _jsonable(d):
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def write_outputs(rows, summary, sc, out, plots):
    write_trace(rows, out / "trace.csv")
    doc = {"scenario": sc.name, **_jsonable(summary.as_dict()),
           "passive": bool(summary.max_Vdot <= VDOT_TOL),
           "safe": bool(summary.min_mu >= MU_FRACTION * sc.barrier.epsilon)}
    (out / "summary.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if plots and rows:
        from .plotting import write_trace_plots
        write_trace_plots(rows, out, sc.barrier.epsilon)
    return doc


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(cfg: RunConfig) -> int:
    try:
        sc = load_scenario(cfg.scenario_path)
        if cfg.controller:
            sc = sc.with_controller(cfg.controller)
        out = cfg.output_dir()
        rows, summary = run_scenario(sc)
    except (FileNotFoundError, ValueError) as exc:  # scenario, model or controller errors
        _err(exc)
        return 1
    except SimulationAbort as exc:
        _err(f"simulation aborted: {exc}")
        if exc.rows:
            write_outputs(exc.rows, summarize(exc.rows, sc), sc, out, cfg.emit_plots)
        return 2
    write_outputs(rows, summary, sc, out, cfg.emit_plots)
    print(f"{sc.name} [{summary.controller}] steps={summary.steps} min_mu={summary.min_mu:.6g} "
          f"max_Vdot={summary.max_Vdot:.6g} final_error={summary.final_target_error:.6g} -> {out}")
    return 0


# ---------------------------------------------------------------------------
# compare

def _run_one(path, controller):
    sc = load_scenario(path)
    try:
        rows, summary = run_scenario(sc, controller)
        return sc, rows, summary, None
    except SimulationAbort as exc:
        return sc, exc.rows, (summarize(exc.rows, sc, Controller(controller)) if exc.rows else None), str(exc)


def format_table(records):
    head = f"{'scenario':<24} {'controller':<14} {'min_mu':>10} {'max_Vdot':>12} {'final_err':>10}  safe  passive"
    lines = [head, "-" * len(head)]
    for r in records:
        if r.get("min_mu") is None:
            lines.append(f"{r['scenario']:<24} {r['controller']:<14} {'aborted':>10}")
            continue
        lines.append(f"{r['scenario']:<24} {r['controller']:<14} {r['min_mu']:>10.5f} {r['max_Vdot']:>12.4g} "
                     f"{r['final_target_error']:>10.4g}  {'yes' if r['safe'] else 'no':<4}  "
                     f"{'yes' if r['passive'] else 'no'}{'  (aborted)' if r.get('aborted') else ''}")
    return "\n".join(lines)


def cmd_compare(paths, out_dir="out", emit_plots=False, jobs=None) -> int:
    if not paths:
        _err("no scenarios given")
        return 1
    try:
        for p in paths:
            load_scenario(p)
    except (FileNotFoundError, ScenarioError, ModelError) as exc:
        _err(exc)
        return 1
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tasks = [(p, c.value) for p in paths for c in COMPARED]
    jobs = jobs or min(len(tasks), os.cpu_count() or 1)
    try:
        if jobs > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                results = list(ex.map(_run_one, *zip(*tasks)))
        else:
            results = [_run_one(*t) for t in tasks]
    except (ScenarioError, ModelError) as exc:
        _err(exc)
        return 1
    records, aborted = [], False
    for (sc, rows, summary, abort), (_, ctrl) in zip(results, tasks):
        sub = out / sc.name / ctrl
        sub.mkdir(parents=True, exist_ok=True)
        if summary is None:
            records.append({"scenario": sc.name, "controller": ctrl, "min_mu": None, "aborted": abort})
            aborted = True
            continue
        doc = write_outputs(rows, summary, sc, sub, emit_plots)
        if abort:
            doc["aborted"] = abort
            aborted = True
        records.append(doc)
    (out / "compare.json").write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    print(format_table(records))
    return 2 if aborted else 0


# ---------------------------------------------------------------------------
# atlas

_OPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}


def _value(text):
    """A number or a simple arithmetic expression in ``pi`` such as ``-pi/2``."""
    def ev(node):
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return float(node.value)
        if isinstance(node, ast.Name) and node.id == "pi":
            return math.pi
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            v = ev(node.operand)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.BinOp) and type(node.op) in _OPS:
            return _OPS[type(node.op)](ev(node.left), ev(node.right))
        raise ValueError(f"bad grid value {text!r}")
    try:
        return ev(ast.parse(text.strip(), mode="eval").body)
    except (SyntaxError, ZeroDivisionError):
        raise ValueError(f"bad grid value {text!r}") from None


def parse_grid(specs, n):
    """Per-joint ``min:max:count`` strings -> list of value arrays."""
    if len(specs) != n:
        raise ValueError(f"need one --grid per joint ({n}), got {len(specs)}")
    axes = []
    for s in specs:
        parts = s.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid spec {s!r} is not min:max:count")
        lo, hi = _value(parts[0]), _value(parts[1])
        try:
            count = int(parts[2])
        except ValueError:
            raise ValueError(f"grid count {parts[2]!r} is not an integer") from None
        if count < 1:
            raise ValueError(f"grid count must be at least 1 in {s!r}")
        if count == 1 and lo != hi:
            raise ValueError(f"single-point grid needs min == max in {s!r}")
        axes.append(np.linspace(lo, hi, count))
    total = math.prod(len(a) for a in axes)
    if total > MAX_GRID:
        raise ValueError(f"grid has {total} points, limit is {MAX_GRID}")
    return axes


def _mu_batch(model, Q, task):
    return manipulability_batch(task_jacobian_batch(model, Q, task, on_singular="nan"))


def cmd_atlas(model_path, task, grid, out_dir="out") -> int:
    try:
        model = load_model_file(model_path)
        task = TaskMapConfig(task)
        axes = parse_grid(grid, model.n)
    except (FileNotFoundError, ModelError, ValueError) as exc:
        _err(exc)
        return 1
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    counts = [len(a) for a in axes]
    total = math.prod(counts)
    best, ties = np.inf, []
    with open(out / "atlas.csv", "w", encoding="utf-8") as fh:
        fh.write(",".join([f"q{i}" for i in range(model.n)] + ["mu"]) + "\n")
        for start in range(0, total, CHUNK):
            idx = np.unravel_index(np.arange(start, min(start + CHUNK, total)), counts)
            Q = np.stack([a[i] for a, i in zip(axes, idx)], axis=1)
            mu = _mu_batch(model, Q, task)
            np.savetxt(fh, np.column_stack([Q, mu]), fmt="%.17g", delimiter=",")
            if not np.any(np.isfinite(mu)):
                continue
            lo = float(np.nanmin(mu))
            if lo < best - TIE_TOL:
                best, ties = lo, []
            best = min(best, lo)
            near = np.flatnonzero(mu <= best + TIE_TOL)
            ties += [Q[k].copy() for k in near[:MAX_TIES - len(ties)]]
    if not ties:
        _err("manipulability undefined on the whole grid")
        return 1
    fmt = lambda q: "[" + ", ".join(f"{v:.6g}" for v in q) + "]"
    print(f"points={total} min_mu={best:.17g} argmin_q={fmt(ties[0])} -> {out / 'atlas.csv'}")
    if len(ties) > 1:
        print(f"minimum also attained at: {' '.join(fmt(q) for q in ties[1:])}")
    return 0


# ---------------------------------------------------------------------------
# check

def cmd_check(seed=0, suites=None, out_dir=None) -> int:
    from .checks import SUITES, run_all
    unknown = [s for s in suites or [] if s not in SUITES]
    if unknown:
        _err(f"unknown suite(s) {unknown}; choose from {list(SUITES)}")
        return 1
    results = []
    for name in suites or SUITES:
        r = run_all(seed, [name])[0]
        print(r.line(), flush=True)
        results.append(r)
    if out_dir:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "check.json").write_text(json.dumps([r.__dict__ for r in results], indent=2) + "\n")
    ok = all(r.passed for r in results)
    print(f"{sum(r.passed for r in results)}/{len(results)} suites passed (seed {seed})")
    return 0 if ok else 1


# ---------------------------------------------------------------------------

def build_parser():
    ap = argparse.ArgumentParser(prog="passivecbf", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run one scenario and export its trace")
    s.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    s.add_argument("--out", default="out")
    s.add_argument("--plots", action="store_true", help="also write V.svg, Vdot.svg and mu.svg")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--controller", choices=[c.value for c in Controller], default=None)

    c = sub.add_parser("compare", help="run scenarios under all four controllers")
    c.add_argument("--scenario", action="append", default=[], help="repeatable")
    c.add_argument("--out", default="out")
    c.add_argument("--plots", action="store_true")
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--jobs", type=int, default=None, help="worker processes (default: one per run)")

    a = sub.add_parser("atlas", help="manipulability over a joint-space grid")
    a.add_argument("--model", required=True)
    a.add_argument("--task", default="pose6", choices=["planar2", "position3", "pose6"])
    a.add_argument("--grid", action="append", default=[], help="min:max:count, once per joint")
    a.add_argument("--out", default="out")

    k = sub.add_parser("check", help="run the randomized invariant suite")
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--suite", action="append", default=None, help="restrict to named suite(s)")
    k.add_argument("--out", default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "simulate":
        return cmd_simulate(RunConfig(args.scenario, args.out, args.plots, args.seed, args.controller))
    if args.command == "compare":
        return cmd_compare(args.scenario, args.out, args.plots, args.jobs)
    if args.command == "atlas":
        return cmd_atlas(args.model, args.task, args.grid, args.out)
    return cmd_check(args.seed, args.suite, args.out)


if __name__ == "__main__":
    sys.exit(main())
