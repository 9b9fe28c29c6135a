"""Driver and corpus harness.

Subcommands:
  run      compile/instrument/optimize/execute one program
  corpus   run a directory of cwe-named fixtures and table the results
  collide  signature-forgery statistics against one object

Exit codes: 0 clean completion (or all expectations met), 1 violation
(or expectation failures / out-of-tolerance statistics), 2 tool error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import random
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .errors import PasanError
from .interp import ExecResult, run
from .memspace import MemSpace, RegionMap
from .miniir import Program, format_program, parse, validate
from .instrument import instrument
from .optpasses import PASS_SETS, count_checks, run_passes
from .pacore import AddressConfig, PacKey, pac_auth, strip, with_pac_field
from .runtime import IdGenerator, SanitizerRuntime


def _build(text: str, opts: str) -> Program:
    prog = parse(text)
    validate(prog)
    if not prog.instrumented:
        prog = run_passes(instrument(prog), opts)
    return prog


def _result_json(result: ExecResult, prog: Program, cfg: AddressConfig,
                 seed: int, opts: str) -> dict:
    full, fast = count_checks(prog)
    out: dict = {
        "verdict": result.verdict,
        "stats": result.stats.to_json(),
        "static_checks": {"checks_full": full, "checks_fast": fast},
        "config": {"n": cfg.n, "p": cfg.p, "seed": seed, "opts": opts},
    }
    if result.completed:
        out["exit_value"] = result.exit_value
    else:
        out.update(result.report.to_json())
    return out


def cmd_run(args) -> int:
    try:
        text = Path(args.file).read_text()
        cfg = AddressConfig(args.n)
        prog = _build(text, args.opts)
    except (OSError, ValueError, PasanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if args.emit:
        print(format_program(prog), end="")
    try:
        result = run(prog, cfg, args.seed)
    except PasanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    payload = _result_json(result, prog, cfg, args.seed, args.opts)
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
    if result.completed:
        print(f"completed: exit value {result.exit_value}")
    else:
        r = result.report
        print(f"violation: {r.kind.value} in @{r.function} at instruction "
              f"{r.inst_index} (pointer 0x{r.pointer:016x}, shadow id 0x{r.found_id:08x})")
        print(f"  {r.narrative}")
    s = result.stats
    print(f"stats: {s.insts} insts, {s.checks_full} full checks, "
          f"{s.checks_fast} fast checks, {s.allocs} allocs, {s.frees} frees")
    return 0 if result.completed else 1


# ---------------------------------------------------------------------------
# Corpus harness
# ---------------------------------------------------------------------------

_CORPUS_RE = re.compile(
    r"^cwe(?P<cwe>\d+)_(?P<name>.+)_(?P<variant>good|bad)"
    r"(?:_expect=(?P<expect>\w+))?\.ir$"
)


@dataclass
class CorpusOutcome:
    file: str
    cwe: int
    variant: str
    expect: str | None
    verdict: str
    kind: str | None
    ok: bool
    problem: str
    static_full: int
    static_fast: int
    dynamic_full: int
    dynamic_fast: int


def _judge(variant: str, expect: str | None, result: ExecResult) -> tuple[bool, str]:
    detected = not result.completed
    kind = result.report.kind.value if detected else None
    if variant == "good":
        return (not detected,
                "" if not detected else f"false positive: {kind}")
    if expect == "miss":
        return (not detected,
                "" if not detected else f"documented miss unexpectedly detected as {kind}")
    if not detected:
        return False, "bad variant completed without detection"
    if expect is not None and kind != expect:
        return False, f"expected {expect}, detected {kind}"
    return True, ""


def run_corpus_file(path: str, n: int, seed: int, opts: str) -> CorpusOutcome:
    name = Path(path).name
    m = _CORPUS_RE.match(name)
    if not m:
        raise PasanError(f"{name}: corpus files must match cwe<k>_<name>_{{good|bad}}"
                         f"[_expect=<kind|miss>].ir")
    cfg = AddressConfig(n)
    prog = _build(Path(path).read_text(), opts)
    result = run(prog, cfg, seed)
    ok, problem = _judge(m["variant"], m["expect"], result)
    full, fast = count_checks(prog)
    return CorpusOutcome(
        file=name,
        cwe=int(m["cwe"]),
        variant=m["variant"],
        expect=m["expect"],
        verdict=result.verdict,
        kind=result.report.kind.value if result.report else None,
        ok=ok,
        problem=problem,
        static_full=full,
        static_fast=fast,
        dynamic_full=result.stats.checks_full,
        dynamic_fast=result.stats.checks_fast,
    )


def _corpus_worker(job: tuple[str, int, int, str]) -> CorpusOutcome:
    return run_corpus_file(*job)


def run_corpus(directory: str, n: int = 47, seed: int = 0, opts: str = "all",
               jobs: int | None = None) -> tuple[list[CorpusOutcome], dict]:
    files = sorted(str(p) for p in Path(directory).glob("*.ir"))
    if not files:
        raise PasanError(f"no .ir corpus files in {directory!r}")
    jobs = jobs or min(8, os.cpu_count() or 1)
    work = [(f, n, seed, opts) for f in files]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outcomes = list(pool.map(_corpus_worker, work))
    else:
        outcomes = [_corpus_worker(item) for item in work]
    outcomes.sort(key=lambda o: o.file)

    categories: dict[int, dict] = {}
    for o in outcomes:
        cat = categories.setdefault(o.cwe, {
            "bad": 0, "detected": 0, "miss_fixtures": 0, "miss_ok": 0,
            "good": 0, "false_positives": 0, "expect_failures": 0,
        })
        if not o.ok:
            cat["expect_failures"] += 1
        if o.variant == "good":
            cat["good"] += 1
            if o.verdict != "completed":
                cat["false_positives"] += 1
        elif o.expect == "miss":
            cat["miss_fixtures"] += 1
            if o.verdict == "completed":
                cat["miss_ok"] += 1
        else:
            cat["bad"] += 1
            if o.verdict != "completed":
                cat["detected"] += 1
    for cat in categories.values():
        cat["ratio"] = cat["detected"] / cat["bad"] if cat["bad"] else 1.0
    return outcomes, categories


def cmd_corpus(args) -> int:
    try:
        outcomes, categories = run_corpus(args.dir, args.n, args.seed, args.opts, args.jobs)
    except (ValueError, PasanError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("CWE   ratio    bad  detected  miss-ok  good  false-pos")
    for cwe in sorted(categories):
        c = categories[cwe]
        miss = f"{c['miss_ok']}/{c['miss_fixtures']}" if c["miss_fixtures"] else "-"
        print(f"{cwe:<5} {c['ratio']:>6.1%}  {c['bad']:>4} {c['detected']:>9} "
              f"{miss:>8} {c['good']:>5} {c['false_positives']:>10}")
    print()
    print(f"{'file':<44} {'verdict':<10} {'kind':<16} "
          f"{'stat F/f':>9} {'dyn F/f':>9}")
    for o in outcomes:
        print(f"{o.file:<44} {o.verdict:<10} {o.kind or '-':<16} "
              f"{o.static_full:>4}/{o.static_fast:<4} {o.dynamic_full:>4}/{o.dynamic_fast:<4}")
    failures = [o for o in outcomes if not o.ok]
    if args.json:
        payload = {
            "ok": not failures,
            "config": {"n": args.n, "seed": args.seed, "opts": args.opts},
            "categories": {str(k): v for k, v in sorted(categories.items())},
            "files": [vars(o) for o in outcomes],
        }
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
    if failures:
        print(f"\n{len(failures)} expectation failure(s):")
        for o in failures:
            print(f"  {o.file}: {o.problem}")
        return 1
    print(f"\nall {len(outcomes)} corpus expectations met")
    return 0


# ---------------------------------------------------------------------------
# Collision statistics
# ---------------------------------------------------------------------------

def run_collide(trials: int, n: int = 47, seed: int = 0,
                p_override: int | None = None) -> dict:
    """Authenticate `trials` uniformly random signature fields against
    one protected object; reports the empirical forgery rate against the
    ideal 2^-p with a binomial z-score."""
    cfg = AddressConfig(n, p_override)
    p_eff = cfg.effective_p
    if trials < 10 * (1 << p_eff):
        raise PasanError(f"trials={trials} below the statistical floor 10*2^{p_eff}"
                         f" = {10 * (1 << p_eff)}")
    rng = random.Random(seed)
    mem = MemSpace(cfg, RegionMap.default(heap_size=1 << 12))
    rt = SanitizerRuntime(mem, PacKey.generate(rng), IdGenerator.seeded(rng))
    signed = rt.protected_malloc(16)
    base = strip(signed, cfg)
    obj_id = mem.id_at(base)
    key = rt.key
    hits = 0
    getrandbits = rng.getrandbits
    for _ in range(trials):
        candidate = with_pac_field(base, getrandbits(p_eff), cfg)
        # Success clears the field, restoring the bare base address.
        if pac_auth(candidate, obj_id, key, cfg) == base:
            hits += 1
    p0 = 1.0 / (1 << p_eff)
    expected = trials * p0
    sigma = math.sqrt(trials * p0 * (1.0 - p0))
    z = (hits - expected) / sigma
    return {
        "trials": trials,
        "hits": hits,
        "empirical_rate": hits / trials,
        "expected_rate": p0,
        "z_score": z,
        "config": {"n": n, "p": cfg.p, "p_effective": p_eff, "seed": seed},
    }


def cmd_collide(args) -> int:
    try:
        stats = run_collide(args.trials, args.n, args.seed, args.p_override)
    except (PasanError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print(f"trials={stats['trials']} hits={stats['hits']} "
          f"empirical={stats['empirical_rate']:.3e} expected={stats['expected_rate']:.3e} "
          f"z={stats['z_score']:+.2f}")
    if args.json:
        Path(args.json).write_text(json.dumps(stats, indent=2) + "\n")
    return 0 if abs(stats["z_score"]) <= 5.0 else 1


# ---------------------------------------------------------------------------

def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="pasan", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--n", type=int, default=47,
                       help="virtual-address width (33..52, default 47)")
        p.add_argument("--seed", type=int, default=0, help="run seed (default 0)")
        p.add_argument("--json", metavar="PATH", help="write a JSON report")

    p_run = sub.add_parser("run", help="instrument and execute one program")
    p_run.add_argument("file")
    common(p_run)
    p_run.add_argument("--opts", choices=sorted(PASS_SETS), default="all",
                       help="optimization passes (default all)")
    p_run.add_argument("--emit", action="store_true",
                       help="print the instrumented program before running")
    p_run.set_defaults(func=cmd_run)

    p_corpus = sub.add_parser("corpus", help="run a cwe fixture directory")
    p_corpus.add_argument("dir")
    common(p_corpus)
    p_corpus.add_argument("--opts", choices=sorted(PASS_SETS), default="all")
    p_corpus.add_argument("--jobs", type=int, default=None,
                          help="parallel workers (default: cpu count, capped at 8)")
    p_corpus.set_defaults(func=cmd_corpus)

    p_collide = sub.add_parser("collide", help="signature forgery statistics")
    p_collide.add_argument("--trials", type=int, required=True)
    common(p_collide)
    p_collide.add_argument("--p-override", type=int, default=None, dest="p_override",
                           help="shrink the effective signature width for fast statistics")
    p_collide.set_defaults(func=cmd_collide)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
