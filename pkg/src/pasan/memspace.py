"""Simulated flat virtual address space with a one-way metadata mapping.

The space is split in halves by the top address bit: the program half
holds heap, stack, and globals; the upper half shadows every program
byte 1:1 with metadata and is reachable only through the shadow_*
operations.  Backing storage is a sparse map of 4 KiB pages so a 2^47
space fits in host memory; untouched pages read as zero.
"""
from __future__ import annotations

from dataclasses import dataclass

from .errors import AlignmentError, FaultKind, MemoryFault
from .pacore import AddressConfig

PAGE_SIZE = 4096
PAGE_MASK = PAGE_SIZE - 1

GLOBALS_BASE = 0x0001_0000
HEAP_BASE = 0x1000_0000
STACK_TOP = 0x3000_0000


@dataclass(frozen=True)
class Region:
    base: int
    size: int

    @property
    def limit(self) -> int:
        return self.base + self.size

    def contains(self, addr: int, width: int = 1) -> bool:
        return self.base <= addr and addr + width <= self.limit


@dataclass(frozen=True)
class RegionMap:
    """Disjoint program-half regions; the stack grows down from its limit."""

    globals: Region
    heap: Region
    stack: Region

    @classmethod
    def default(cls, globals_size: int = 1 << 16, heap_size: int = 64 << 20,
                stack_size: int = 1 << 20) -> "RegionMap":
        return cls(
            globals=Region(GLOBALS_BASE, globals_size),
            heap=Region(HEAP_BASE, heap_size),
            stack=Region(STACK_TOP - stack_size, stack_size),
        )


def shadow_of(addr: int, cfg: AddressConfig) -> int:
    """Map a program address to its metadata address by SETTING the
    address MSB.  Setting rather than flipping makes the mapping one-way:
    metadata addresses map to themselves."""
    return addr | 1 << cfg.msb_bit


def align4(addr: int) -> int:
    return addr & ~3


class MemSpace:
    """One interpreter run's memory.  Single-threaded mutation."""

    def __init__(self, cfg: AddressConfig, regions: RegionMap | None = None):
        self.cfg = cfg
        self.regions = regions or RegionMap.default()
        self._pages: dict[int, bytearray] = {}
        for name in ("globals", "heap", "stack"):
            region = getattr(self.regions, name)
            if region.limit > 1 << cfg.msb_bit:
                raise ValueError(f"{name} region extends past the program half")

    # -- raw byte store (no checks; callers enforce their own contracts) --

    def _load_bytes(self, addr: int, width: int) -> bytes:
        out = bytearray()
        while width:
            page, off = addr >> 12, addr & PAGE_MASK
            chunk = min(width, PAGE_SIZE - off)
            buf = self._pages.get(page)
            out += buf[off : off + chunk] if buf is not None else bytes(chunk)
            addr += chunk
            width -= chunk
        return bytes(out)

    def _store_bytes(self, addr: int, data: bytes) -> None:
        pos = 0
        while pos < len(data):
            page, off = addr >> 12, addr & PAGE_MASK
            chunk = min(len(data) - pos, PAGE_SIZE - off)
            buf = self._pages.get(page)
            if buf is None:
                buf = self._pages[page] = bytearray(PAGE_SIZE)
            buf[off : off + chunk] = data[pos : pos + chunk]
            addr += chunk
            pos += chunk

    # -- metadata (shadow) operations --

    def id_at(self, addr: int) -> int:
        """The 32-bit object id shadowing addr (0 = freed or never
        allocated).  Lookup is at the 4-aligned shadow word."""
        return int.from_bytes(
            self._load_bytes(shadow_of(align4(addr), self.cfg), 4), "little"
        )

    def _check_shadow_range(self, base: int, size: int) -> None:
        if base & 3 or size <= 0 or size & 3:
            raise AlignmentError(
                f"shadow range base=0x{base:x} size={size} must be 4-aligned and nonzero"
            )
        if (base + size - 1) >> self.cfg.msb_bit:
            raise AlignmentError(f"shadow range 0x{base:x}+{size} leaves the program half")

    def shadow_fill(self, base: int, size: int, obj_id: int) -> None:
        """Write obj_id across every shadow word covering [base, base+size)."""
        self._check_shadow_range(base, size)
        word = obj_id.to_bytes(4, "little")
        self._store_bytes(shadow_of(base, self.cfg), word * (size // 4))

    def shadow_clear(self, base: int, size: int) -> None:
        self._check_shadow_range(base, size)
        self._store_bytes(shadow_of(base, self.cfg), bytes(size))

    # -- program-visible raw access (the trap surface) --

    def region_of(self, addr: int) -> str | None:
        for name in ("globals", "heap", "stack"):
            if getattr(self.regions, name).contains(addr):
                return name
        return None

    def _check_access(self, addr: int, width: int) -> None:
        # Any bit in [n, 64) — signature field or bit 55 — traps the access.
        if addr >> self.cfg.n:
            raise MemoryFault(FaultKind.POISONED_POINTER, addr)
        if (addr >> self.cfg.msb_bit) & 1:
            raise MemoryFault(FaultKind.SHADOW_ACCESS, addr)
        for name in ("globals", "heap", "stack"):
            if getattr(self.regions, name).contains(addr, width):
                return
        raise MemoryFault(FaultKind.UNMAPPED, addr)

    def read(self, addr: int, width: int) -> int:
        self._check_access(addr, width)
        return int.from_bytes(self._load_bytes(addr, width), "little")

    def write(self, addr: int, width: int, value: int) -> None:
        self._check_access(addr, width)
        self._store_bytes(addr, (value & ((1 << (8 * width)) - 1)).to_bytes(width, "little"))
