#!/usr/bin/env python3
"""Dynamic check counts for the 1000-iteration array-store loop under
each optimization selection.  Same-lock should leave one full check in
the preheader and verify the 999 loop stores on the fast path.

Usage: python scripts/opt_microbench.py [--seed 0]
"""
import argparse
import sys
from pathlib import Path

from pasan.instrument import instrument
from pasan.interp import run
from pasan.miniir import parse, validate
from pasan.optpasses import count_checks, run_passes
from pasan.pacore import AddressConfig

BENCH = Path(__file__).resolve().parent.parent / "tests" / "data" / "loop1000.ir"


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    source = parse(BENCH.read_text())
    validate(source)
    base = instrument(source)
    print(f"{'opts':<10} {'static F/f':>11} {'dynamic F/f':>12} verdict")
    for opts in ("none", "redundant", "samelock", "all"):
        prog = run_passes(base, opts)
        full, fast = count_checks(prog)
        result = run(prog, AddressConfig(47), seed=args.seed)
        print(f"{opts:<10} {full:>5}/{fast:<5} "
              f"{result.stats.checks_full:>5}/{result.stats.checks_fast:<6} "
              f"{result.verdict}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
