"""Protected allocation, the checks, wrappers, and violation taxonomy."""
import random

import pytest

from pasan.errors import LimitExceeded
from pasan.memspace import MemSpace, RegionMap
from pasan.pacore import (
    AddressConfig,
    PacKey,
    is_poisoned,
    lock_bits,
    pac_field,
    strip,
    with_pac_field,
)
from pasan.runtime import (
    IdGenerator,
    SanitizerRuntime,
    ViolationError,
    ViolationKind,
    padded_size,
)

CFG = AddressConfig(47)


def make_rt(seed=1, bytewise=False):
    rng = random.Random(seed)
    mem = MemSpace(CFG, RegionMap.default(heap_size=1 << 20, stack_size=1 << 16))
    return SanitizerRuntime(mem, PacKey.generate(rng), IdGenerator.seeded(rng),
                            bytewise=bytewise)


def kind_of(exc_info) -> ViolationKind:
    return exc_info.value.report.kind


def test_padded_size():
    assert padded_size(10) == 12
    assert padded_size(4) == 4
    assert padded_size(0) == 4
    assert padded_size(1) == 4
    with pytest.raises(ValueError):
        padded_size(-1)


def test_malloc_pads_and_shadows():
    rt = make_rt()
    signed = rt.protected_malloc(10)
    base = strip(signed, CFG)
    obj_id = rt.mem.id_at(base)
    assert obj_id != 0
    assert rt.mem.id_at(base + 11) == obj_id
    assert rt.mem.id_at(base + 12) == 0


def test_zero_size_malloc_is_checkable():
    rt = make_rt()
    signed = rt.protected_malloc(0)
    assert rt.checked_access(signed, 1) == strip(signed, CFG)
    assert rt.alloc[strip(signed, CFG)].size == 4


def test_consecutive_ids_increment():
    rt = make_rt()
    a = rt.mem.id_at(strip(rt.protected_malloc(4), CFG))
    b = rt.mem.id_at(strip(rt.protected_malloc(4), CFG))
    assert b == (a % 0xFFFFFFFF) + 1 or (a == 0xFFFFFFFF and b == 1)


def test_id_generator_skips_zero():
    gen = IdGenerator(0)
    assert gen.next() == 1
    gen = IdGenerator(0xFFFFFFFF)
    assert gen.next() == 0xFFFFFFFF
    assert gen.next() == 1


def test_checked_access_in_bounds_offset():
    rt = make_rt()
    signed = rt.protected_malloc(12)
    derived = signed + 4
    assert rt.checked_access(derived, 4) == strip(signed, CFG) + 4


def test_checked_access_underflow_into_neighbor():
    rt = make_rt()
    first = rt.protected_malloc(12)
    second = rt.protected_malloc(12)
    with pytest.raises(ViolationError) as exc:
        rt.checked_access(second - 4, 4)
    assert kind_of(exc) is ViolationKind.SPATIAL_OOB


def test_checked_access_after_free_reuse():
    rt = make_rt()
    stale = rt.protected_malloc(12)
    rt.protected_free(stale)
    fresh = rt.protected_malloc(12)
    assert strip(fresh, CFG) == strip(stale, CFG)  # eager exact-size reuse
    with pytest.raises(ViolationError) as exc:
        rt.checked_access(stale, 4)
    assert kind_of(exc) is ViolationKind.USE_AFTER_FREE
    assert rt.checked_access(fresh, 4) == strip(fresh, CFG)


def test_checked_access_width_straddles_object():
    rt = make_rt()
    a = rt.protected_malloc(12)
    b = rt.protected_malloc(12)
    with pytest.raises(ViolationError) as exc:
        rt.checked_access(a + 8, 8)  # bytes 8..15 cross into the neighbor
    assert kind_of(exc) is ViolationKind.SPATIAL_OOB
    assert rt.checked_access(a + 4, 8) == strip(a, CFG) + 4


def test_checked_access_crafted_field():
    rt = make_rt()
    signed = rt.protected_malloc(12)
    garbled = with_pac_field(signed, pac_field(signed, CFG) ^ 1, CFG)
    with pytest.raises(ViolationError) as exc:
        rt.checked_access(garbled, 4)
    assert kind_of(exc) is ViolationKind.CRAFTED_PAC


def test_checked_access_shadow_half():
    rt = make_rt()
    signed = rt.protected_malloc(12)
    with pytest.raises(ViolationError) as exc:
        rt.checked_access(signed | 1 << 46, 4)
    assert kind_of(exc) is ViolationKind.SHADOW_ACCESS


def test_free_happy_path_clears_extent():
    rt = make_rt()
    signed = rt.protected_malloc(12)
    base = strip(signed, CFG)
    rt.protected_free(signed)
    assert all(rt.mem.id_at(base + off) == 0 for off in (0, 4, 8))


def test_free_first_object_passes_begin_check():
    rt = make_rt()
    rt.protected_free(rt.protected_malloc(4))  # guard word below heap base


def test_free_inside_buffer():
    rt = make_rt()
    signed = rt.protected_malloc(12)
    with pytest.raises(ViolationError) as exc:
        rt.protected_free(signed + 4)
    assert kind_of(exc) is ViolationKind.FREE_INSIDE_BUFFER


def test_double_free():
    rt = make_rt()
    signed = rt.protected_malloc(12)
    rt.protected_free(signed)
    with pytest.raises(ViolationError) as exc:
        rt.protected_free(signed)
    assert kind_of(exc) is ViolationKind.DOUBLE_FREE


def test_free_neighboring_base_is_legal():
    rt = make_rt()
    a = rt.protected_malloc(12)
    b = rt.protected_malloc(12)
    rt.protected_free(b)  # begin check sees a's differing id below
    rt.protected_free(a)


def test_fast_check_in_object_derivation():
    rt = make_rt()
    signed = rt.protected_malloc(16)
    token = rt.mem.id_at(strip(signed, CFG))
    for off in (0, 4, 8, 12):
        assert rt.fast_check(signed + off, token, signed, 4) == strip(signed, CFG) + off
    assert rt.stats.checks_fast == 4


def test_fast_check_crossing_neighbor():
    rt = make_rt()
    a = rt.protected_malloc(12)
    b = rt.protected_malloc(12)
    token = rt.mem.id_at(strip(a, CFG))
    with pytest.raises(ViolationError) as exc:
        rt.fast_check(a + 12, token, a, 4)
    assert kind_of(exc) is ViolationKind.SPATIAL_OOB


def test_fast_check_carry_into_signature_field():
    rt = make_rt()
    signed = rt.protected_malloc(16)
    token = rt.mem.id_at(strip(signed, CFG))
    carried = (signed + (1 << 46)) & ((1 << 64) - 1)
    with pytest.raises(ViolationError) as exc:
        rt.fast_check(carried, token, signed, 4)
    assert kind_of(exc) is ViolationKind.SPATIAL_OOB
    assert lock_bits(carried, CFG) != lock_bits(signed, CFG)


def test_fast_check_never_weaker_than_full_check():
    # Wherever the full check rejects, the fast path must reject too.
    rt = make_rt(seed=5)
    signed = rt.protected_malloc(16)
    rt.protected_malloc(16)
    token = rt.mem.id_at(strip(signed, CFG))
    rng = random.Random(11)
    for _ in range(200):
        off = rng.randrange(-32, 48)
        derived = (signed + off) & ((1 << 64) - 1)
        try:
            rt.checked_access(derived, 4)
            full_ok = True
        except ViolationError:
            full_ok = False
        try:
            rt.fast_check(derived, token, signed, 4)
            fast_ok = True
        except ViolationError:
            fast_ok = False
        assert not (fast_ok and not full_ok), f"fast accepted what full rejected at {off}"


def test_wrapper_memset_in_bounds():
    rt = make_rt()
    signed = rt.protected_malloc(16)
    assert rt.wrapper_call("memset", [signed, 0xAB, 16]) == signed
    assert rt.mem.read(strip(signed, CFG) + 15, 1) == 0xAB


def test_wrapper_memcpy_overrun_detected_at_last_byte():
    rt = make_rt()
    dest = rt.protected_malloc(12)
    src = rt.protected_malloc(16)
    with pytest.raises(ViolationError) as exc:
        rt.wrapper_call("memcpy", [dest, src, 16])
    assert kind_of(exc) is ViolationKind.SPATIAL_OOB


def test_wrapper_memcpy_returns_signed_dest():
    rt = make_rt()
    dest = rt.protected_malloc(16)
    src = rt.protected_malloc(16)
    rt.mem.write(strip(src, CFG), 4, 0xCAFEBABE)
    assert rt.wrapper_call("memcpy", [dest, src, 16]) == dest
    assert rt.mem.read(strip(dest, CFG), 4) == 0xCAFEBABE


def test_wrapper_zero_length_skips_checks():
    rt = make_rt()
    dest = rt.protected_malloc(4)
    before = rt.stats.checks_full
    rt.wrapper_call("memcpy", [dest, dest, 0])
    assert rt.stats.checks_full == before


def test_wrapper_strlen():
    rt = make_rt()
    signed = rt.protected_malloc(8)
    rt.mem.write(strip(signed, CFG), 4, 0x00414141)
    assert rt.wrapper_call("strlen", [signed]) == 3


def test_external_alloc_unsigned_then_resign():
    rt = make_rt()
    raw = rt.external_alloc(12)
    assert pac_field(raw, CFG) == 0
    signed = rt.resign_return(raw)
    assert rt.checked_access(signed, 4) == raw


def test_resign_unshadowed_memory_poisons():
    rt = make_rt()
    resigned = rt.resign_return(rt.mem.regions.heap.base + 0x800)
    assert is_poisoned(resigned, CFG)


def test_heap_exhaustion_is_harness_error():
    rng = random.Random(0)
    mem = MemSpace(CFG, RegionMap.default(heap_size=64))
    rt = SanitizerRuntime(mem, PacKey.generate(rng), IdGenerator.seeded(rng))
    with pytest.raises(LimitExceeded):
        for _ in range(64):
            rt.protected_malloc(16)
