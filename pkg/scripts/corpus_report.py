#!/usr/bin/env python3
"""Run the shipped corpus and dump the detection table plus the
per-program static/dynamic check-count table as JSON.

Usage: python scripts/corpus_report.py [--n 47] [--seed 0] [--out corpus_report.json]
"""
import argparse
import json
import sys
from pathlib import Path

from pasan.cli import run_corpus

REPO = Path(__file__).resolve().parent.parent


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=47)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--dir", default=str(REPO / "corpus"))
    ap.add_argument("--out", default="corpus_report.json")
    args = ap.parse_args()

    outcomes, categories = run_corpus(args.dir, n=args.n, seed=args.seed, opts="all")

    print("CWE   ratio   bad detected miss-ok  good  fp")
    for cwe in sorted(categories):
        c = categories[cwe]
        miss = f"{c['miss_ok']}/{c['miss_fixtures']}" if c["miss_fixtures"] else "  -"
        print(f"{cwe:<5} {c['ratio']:>6.1%} {c['bad']:>4} {c['detected']:>8} "
              f"{miss:>7} {c['good']:>5} {c['false_positives']:>3}")
    print()
    print(f"{'program':<44} {'static F/f':>11} {'dynamic F/f':>12}")
    for o in outcomes:
        print(f"{o.file:<44} {o.static_full:>5}/{o.static_fast:<5} "
              f"{o.dynamic_full:>5}/{o.dynamic_fast:<6}")

    payload = {
        "config": {"n": args.n, "seed": args.seed},
        "categories": {str(k): v for k, v in sorted(categories.items())},
        "files": [vars(o) for o in outcomes],
    }
    Path(args.out).write_text(json.dumps(payload, indent=2) + "\n")
    print(f"\nwrote {args.out}")
    return 0 if all(o.ok for o in outcomes) else 1


if __name__ == "__main__":
    sys.exit(main())
