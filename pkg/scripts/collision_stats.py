#!/usr/bin/env python3
"""Forgery statistics at the two standard configurations: a reduced
11-bit field with 2^21 trials, and the full 16-bit field (n=47) with
2^22 trials.  Both should land within 5 sigma of 2^-p.

Usage: python scripts/collision_stats.py [--seed 0]
"""
import argparse
import sys

from pasan.cli import run_collide


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    ok = True
    for label, trials, override in (("p=11", 1 << 21, 11), ("p=16", 1 << 22, None)):
        stats = run_collide(trials=trials, n=47, seed=args.seed, p_override=override)
        within = abs(stats["z_score"]) <= 5.0
        ok &= within
        print(f"{label}: trials={stats['trials']} hits={stats['hits']} "
              f"empirical={stats['empirical_rate']:.3e} "
              f"expected={stats['expected_rate']:.3e} "
              f"z={stats['z_score']:+.2f} {'OK' if within else 'OUT OF TOLERANCE'}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
