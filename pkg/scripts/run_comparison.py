"""Run every controller on the bundled comparison scenarios and print the summary table.

Usage: python3 scripts/run_comparison.py [--out out] [--plots] [--jobs N] [scenario ...]
"""

import argparse
import sys

from passivecbf.cli import cmd_compare

DEFAULT = ["planar2_unreachable", "arm7_unreachable", "planar2_reachable", "arm7_reachable"]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("scenarios", nargs="*", default=DEFAULT)
    ap.add_argument("--out", default="out")
    ap.add_argument("--plots", action="store_true")
    ap.add_argument("--jobs", type=int, default=None)
    args = ap.parse_args(argv)
    return cmd_compare(args.scenarios, args.out, args.plots, args.jobs)


if __name__ == "__main__":
    sys.exit(main())
