"""Interpreter semantics: determinism, trap completeness, frame hygiene."""
import pytest

from pasan.errors import LimitExceeded
from pasan.instrument import instrument
from pasan.interp import Interpreter, Limits, run, run_unoptimized_oracle
from pasan.miniir import parse, validate
from pasan.optpasses import run_passes
from pasan.pacore import AddressConfig
from pasan.runtime import ViolationKind

CFG = AddressConfig(47)


def build(text, opts="all"):
    prog = parse(text)
    validate(prog)
    return run_passes(instrument(prog), opts)


def test_arithmetic_and_loop_semantics():
    # sum 1..5 via a countdown loop
    prog = parse("""\
func @main() -> i32 {
bb0:
  %n = const.i32 5
  %zero = const.i32 0
  br bb1
bb1:
  %i = phi [bb0: %n], [bb1: %in]
  %acc = phi [bb0: %zero], [bb1: %accn]
  %accn = add.i32 %acc, %i
  %one = const.i32 1
  %in = sub.i32 %i, %one
  cbr %in, bb1, bb2
bb2:
  ret %accn
}
""")
    validate(prog)
    result = run(prog, CFG, seed=0)
    assert result.completed
    assert result.exit_value == 15


def test_i32_wraparound():
    prog = parse("""\
func @main() -> i32 {
bb0:
  %a = const.i32 -1
  %b = const.i32 2
  %c = add.i32 %a, %b
  ret %c
}
""")
    validate(prog)
    assert run(prog, CFG, seed=0).exit_value == 1


def test_store_load_widths():
    prog = parse("""\
func @main() -> i32 {
bb0:
  %sz = const.i64 16
  %p = malloc %sz
  %v = const.i64 -1
  store.i64 %p, %v
  %b = load.i8 %p
  ret %b
}
""")
    validate(prog)
    assert run(prog, CFG, seed=0).exit_value == 0xFF


def test_pointer_round_trip_through_memory():
    prog = build("""\
func @main() -> i32 {
bb0:
  %szs = const.i64 8
  %slot = malloc %szs
  %sz = const.i64 8
  %p = malloc %sz
  %v = const.i32 77
  store.i32 %p, %v
  store.ptr %slot, %p
  %q = load.ptr %slot
  %x = load.i32 %q
  free %p
  free %slot
  ret %x
}
""")
    result = run(prog, CFG, seed=0)
    assert result.completed
    assert result.exit_value == 77


def test_determinism_bit_identical():
    text = (  # the reuse scenario: nontrivial allocator and shadow traffic
        "func @main() -> i32 {\n"
        "bb0:\n  %sz = const.i64 12\n  %p = malloc %sz\n  %v = const.i32 1\n"
        "  store.i32 %p, %v\n  free %p\n  %sz2 = const.i64 12\n  %q = malloc %sz2\n"
        "  store.i32 %q, %v\n  %x = load.i32 %p\n  ret %x\n}\n"
    )
    prog = build(text)
    a = run(prog, CFG, seed=123)
    b = run(prog, CFG, seed=123)
    assert a.verdict == b.verdict
    assert vars(a.report) == vars(b.report)
    assert vars(a.stats) == vars(b.stats)


def test_verdict_stable_across_seeds():
    prog = build(
        "func @main() -> i32 {\n"
        "bb0:\n  %sz = const.i64 12\n  %p = malloc %sz\n  free %p\n"
        "  %x = load.i32 %p\n  ret %x\n}\n"
    )
    outcomes = {
        (r.report.kind, r.report.function, r.report.inst_uid)
        for r in (run(prog, CFG, seed=s) for s in range(16))
    }
    assert len(outcomes) == 1
    assert next(iter(outcomes))[0] is ViolationKind.USE_AFTER_FREE


def test_instruction_budget():
    prog = parse("""\
func @main() -> i32 {
bb0:
  %one = const.i32 1
  br bb1
bb1:
  cbr %one, bb1, bb2
bb2:
  ret %one
}
""")
    validate(prog)
    with pytest.raises(LimitExceeded):
        run(prog, CFG, seed=0, limits=Limits(max_insts=1000))


def test_stack_budget():
    prog = parse("""\
func @rec() -> i32 {
bb0:
  %buf = alloca 64
  %r = call @rec()
  ret %r
}

func @main() -> i32 {
bb0:
  %r = call @rec()
  ret %r
}
""")
    validate(prog)
    with pytest.raises(LimitExceeded):
        run(prog, CFG, seed=0, limits=Limits(stack_bytes=1 << 12))


def test_raw_program_runs_unchecked():
    # uninstrumented: no ids, no checks, plain allocation
    prog = parse("""\
func @main() -> i32 {
bb0:
  %sz = const.i64 8
  %p = malloc %sz
  %v = const.i32 1
  store.i32 %p, %v
  %x = load.i32 %p
  free %p
  ret %x
}
""")
    validate(prog)
    result = run(prog, CFG, seed=0)
    assert result.completed
    assert result.stats.checks_full == 0
    assert result.stats.allocs == 1
    assert result.stats.frees == 1


def test_frame_hygiene_after_return():
    # every signed stack extent must read as freed after the frame pops
    prog = build("""\
func @sink(%p: ptr) -> i32 {
bb0:
  %z = const.i32 0
  ret %z
}

func @helper() -> i32 {
bb0:
  %buf = alloca 16
  %v = const.i32 9
  store.i32 %buf, %v
  %r = call @sink(%buf)
  ret %r
}

func @main() -> i32 {
bb0:
  %a = call @helper()
  %b = call @helper()
  %z = const.i32 0
  ret %z
}
""")
    interp = Interpreter(prog, CFG, seed=0)
    result = interp.run()
    assert result.completed
    stack_retired = [e for e in interp.rt.retired if e.origin == "stack"]
    assert len(stack_retired) == 2
    for ext in stack_retired:
        assert all(interp.mem.id_at(ext.base + off) == 0 for off in range(0, ext.size, 4))


def test_use_after_scope_detected():
    prog = build("""\
func @leak() -> ptr {
bb0:
  %buf = alloca 8
  %v = const.i32 5
  store.i32 %buf, %v
  ret %buf
}

func @main() -> i32 {
bb0:
  %p = call @leak()
  %x = load.i32 %p
  ret %x
}
""")
    result = run(prog, CFG, seed=0)
    assert result.report.kind is ViolationKind.USE_AFTER_SCOPE


def test_external_alloc_interop():
    prog = build("""\
extern @ext_alloc(i64) -> ptr

func @main() -> i32 {
bb0:
  %sz = const.i64 16
  %p = call @ext_alloc(%sz)
  %v = const.i32 3
  store.i32 %p, %v
  %x = load.i32 %p
  ret %x
}
""")
    result = run(prog, CFG, seed=0)
    assert result.completed
    assert result.exit_value == 3


def test_external_write_through_stripped_pointer_is_permitted():
    prog = build("""\
extern @ext_poke(ptr, i64) -> i32

func @main() -> i32 {
bb0:
  %sz = const.i64 16
  %p = malloc %sz
  %v = const.i64 513
  %r = call @ext_poke(%p, %v)
  %x = load.i32 %p
  free %p
  ret %x
}
""")
    result = run(prog, CFG, seed=0)
    assert result.completed
    assert result.exit_value == 513


def test_resign_of_never_allocated_pointer_traps_on_use():
    prog = build("""\
extern @ext_id(ptr) -> ptr

func @main() -> i32 {
bb0:
  %sz = const.i64 16
  %p = malloc %sz
  free %p
  %q = call @ext_id(%p)
  %x = load.i32 %q
  ret %x
}
""")
    result = run(prog, CFG, seed=0)
    assert not result.completed
    # the freed shadow yields id 0, the re-sign poisons, the check fires
    assert result.report.kind in (ViolationKind.USE_AFTER_FREE, ViolationKind.CRAFTED_PAC)


def test_raw_crafted_field_deref_is_poisoned_deref():
    prog = parse("""\
func @main() -> i32 {
bb0:
  %sz = const.i64 16
  %p = malloc %sz
  %big = const.i64 140737488355328
  %q = gep %p, %big
  %x = load.i32 %q
  ret %x
}
""")
    validate(prog)
    result = run(prog, CFG, seed=0)
    assert result.report.kind is ViolationKind.POISONED_DEREF


def test_raw_shadow_deref_is_shadow_access():
    prog = parse("""\
func @main() -> i32 {
bb0:
  %sz = const.i64 16
  %p = malloc %sz
  %big = const.i64 70368744177664
  %q = gep %p, %big
  %x = load.i32 %q
  ret %x
}
""")
    validate(prog)
    assert run(prog, CFG, seed=0).report.kind is ViolationKind.SHADOW_ACCESS


def test_oracle_agrees_and_detects_one_byte_overrun():
    text = """\
extern @memcpy(ptr, ptr, i64) -> ptr

func @main() -> i32 {
bb0:
  %szD = const.i64 12
  %d = malloc %szD
  %szS = const.i64 16
  %s = malloc %szS
  %n = const.i64 13
  %r = call @memcpy(%d, %s, %n)
  %z = const.i32 0
  ret %z
}
"""
    src = parse(text)
    validate(src)
    pipeline = run(run_passes(instrument(src), "all"), CFG, seed=0)
    oracle = run_unoptimized_oracle(src, CFG, seed=0)
    assert not pipeline.completed and not oracle.completed
    assert pipeline.report.kind == oracle.report.kind == ViolationKind.SPATIAL_OOB
    assert pipeline.report.inst_uid == oracle.report.inst_uid


def test_stats_populated():
    prog = build(
        "func @main() -> i32 {\nbb0:\n  %sz = const.i64 8\n  %p = malloc %sz\n"
        "  %v = const.i32 1\n  store.i32 %p, %v\n  free %p\n"
        "  %z = const.i32 0\n  ret %z\n}\n"
    )
    stats = run(prog, CFG, seed=0).stats
    assert stats.insts > 0
    assert stats.allocs == 1
    assert stats.frees == 1
    assert stats.checks_full == 1
