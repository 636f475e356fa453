"""Overlay figures from a ``compare`` output directory.

For each scenario under ``--out`` this writes ``<scenario>/mu_overlay.svg``
(all controllers against epsilon) and ``<scenario>/<controller>/Vdot.svg``
plus ``V.svg``, reading only the exported trace.csv files.

Usage: python3 scripts/make_figures.py [--out out]
"""

import argparse
import json
import sys
from pathlib import Path

from passivecbf.cli import read_trace
from passivecbf.plotting import line_plot_svg, overlay_plot_svg

ORDER = ("unconstrained", "damped", "standard_qp", "proposed_qp")


def figures_for(scenario_dir, epsilon):
    series = {}
    for ctrl in ORDER:
        path = scenario_dir / ctrl / "trace.csv"
        if not path.is_file():
            continue
        header, data, _ = read_trace(path)
        cols = [h for h in header if h != "status"]
        col = {h: data[:, k] for k, h in enumerate(cols)}
        series[ctrl] = (col["t"], col["mu"])
        (scenario_dir / ctrl / "Vdot.svg").write_text(
            line_plot_svg(col["t"], col["Vdot"], f"{ctrl}: storage derivative", "dV/dt [W]", 0.0, "0"))
        (scenario_dir / ctrl / "V.svg").write_text(
            line_plot_svg(col["t"], col["V"], f"{ctrl}: storage function", "V [J]"))
    if series:
        (scenario_dir / "mu_overlay.svg").write_text(
            overlay_plot_svg(series, f"{scenario_dir.name}: manipulability", "mu", epsilon, f"epsilon = {epsilon:g}"))
    return sorted(series)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="out")
    args = ap.parse_args(argv)
    out = Path(args.out)
    index = out / "compare.json"
    if not index.is_file():
        print(f"error: {index} not found; run scripts/run_comparison.py first", file=sys.stderr)
        return 1
    eps = {}
    for rec in json.loads(index.read_text()):
        eps.setdefault(rec["scenario"], rec.get("epsilon", 0.03))
    for name, epsilon in eps.items():
        ctrls = figures_for(out / name, epsilon)
        print(f"{name}: {', '.join(ctrls)} -> {out / name / 'mu_overlay.svg'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
