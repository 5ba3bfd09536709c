"""On-chip memory fabric: one feature bank and two compute banks.

Every bank is 128 bits wide and true dual-port. Cycle-level accesses go
through :meth:`MemoryBank.read` / :meth:`MemoryBank.write`, which enforce one
access per port per cycle and read-first behaviour on a same-cycle race.
Engines moving whole tensors use the bulk byte helpers; those bypass port
arbitration (their timing lives in the engine cost models) but are still
counted so the metrics can report traffic per bank.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import config
from .errors import OutOfMemory, OutOfRange, Overlap, PortConflict

FEATURE = "feature"
COMPUTE0 = "compute0"
COMPUTE1 = "compute1"
BANK_NAMES = (FEATURE, COMPUTE0, COMPUTE1)


@dataclass(frozen=True)
class Address:
    bank: str
    word_index: int


@dataclass(frozen=True)
class Region:
    name: str
    bank: str
    base: int
    words: int

    @property
    def end(self) -> int:
        return self.base + self.words

    @property
    def byte_base(self) -> int:
        return self.base * config.WORD_BYTES

    @property
    def nbytes(self) -> int:
        return self.words * config.WORD_BYTES


class MemoryBank:
    def __init__(self, name: str, depth: int, width: int = config.WORD_BYTES):
        self.name = name
        self.depth = depth
        self.width = width
        self.data = np.zeros((depth, width), dtype=np.uint8)
        self.reset_ports()
        self.word_reads = 0
        self.word_writes = 0

    def reset_ports(self) -> None:
        self._cycle = -1
        self._busy: Dict[int, int] = {}
        self._pending: List = []

    def _advance(self, cycle: int) -> None:
        if cycle < self._cycle:
            raise PortConflict(f"{self.name}: access at cycle {cycle} after cycle {self._cycle}")
        if cycle > self._cycle:
            for idx, word in self._pending:
                self.data[idx] = word
            self._pending.clear()
            self._busy.clear()
            self._cycle = cycle

    def _claim(self, port: int, cycle: int) -> None:
        if port not in (0, 1):
            raise PortConflict(f"{self.name}: no port {port}")
        self._advance(cycle)
        if port in self._busy:
            raise PortConflict(f"{self.name}: port {port} used twice in cycle {cycle}")
        self._busy[port] = cycle

    def _check(self, index: int) -> None:
        if not 0 <= index < self.depth:
            raise OutOfRange(f"{self.name}[{index}] outside depth {self.depth}")

    def read(self, index: int, port: int, cycle: int) -> bytes:
        """One-cycle word read; a write issued in the same cycle is not visible."""
        self._check(index)
        self._claim(port, cycle)
        self.word_reads += 1
        return self.data[index].tobytes()

    def write(self, index: int, word: bytes, port: int, cycle: int) -> int:
        self._check(index)
        if len(word) != self.width:
            raise ValueError(f"word must be {self.width} bytes")
        self._claim(port, cycle)
        self._pending.append((index, np.frombuffer(bytes(word), dtype=np.uint8).copy()))
        self.word_writes += 1
        return 1

    def flush(self) -> None:
        """Commit writes still pending from the last accessed cycle."""
        self._advance(self._cycle + 1)

    # -- bulk helpers -------------------------------------------------------

    @property
    def nbytes(self) -> int:
        return self.depth * self.width

    def _span(self, byte_addr: int, n: int):
        if byte_addr < 0 or byte_addr + n > self.nbytes:
            raise OutOfRange(f"{self.name}: bytes [{byte_addr}, {byte_addr + n}) out of range")
        first = byte_addr // self.width
        last = (byte_addr + max(n, 1) - 1) // self.width
        return last - first + 1

    def load_bytes(self, byte_addr: int, n: int) -> np.ndarray:
        self.word_reads += self._span(byte_addr, n)
        return self.data.reshape(-1)[byte_addr:byte_addr + n].copy()

    def store_bytes(self, byte_addr: int, raw) -> None:
        raw = np.asarray(raw).view(np.uint8).reshape(-1) if not isinstance(raw, (bytes, bytearray)) \
            else np.frombuffer(bytes(raw), dtype=np.uint8)
        self.word_writes += self._span(byte_addr, raw.size)
        self.data.reshape(-1)[byte_addr:byte_addr + raw.size] = raw

    def clear(self) -> None:
        self.data[:] = 0
        self.reset_ports()


class Fabric:
    """The three banks plus a static region allocator per bank."""

    def __init__(self, feature_depth: int = config.FEATURE_MEM_DEPTH,
                 compute_depth: int = config.COMPUTE_MEM_DEPTH):
        self.banks: Dict[str, MemoryBank] = {
            FEATURE: MemoryBank(FEATURE, feature_depth),
            COMPUTE0: MemoryBank(COMPUTE0, compute_depth),
            COMPUTE1: MemoryBank(COMPUTE1, compute_depth),
        }
        self.regions: Dict[str, Region] = {}

    def __getitem__(self, bank: str) -> MemoryBank:
        return self.banks[bank]

    def read(self, addr: Address, port: int, cycle: int) -> bytes:
        return self.banks[addr.bank].read(addr.word_index, port, cycle)

    def write(self, addr: Address, word: bytes, port: int, cycle: int) -> int:
        return self.banks[addr.bank].write(addr.word_index, word, port, cycle)

    # -- geometry -----------------------------------------------------------

    def geometry(self) -> Dict[str, dict]:
        return {name: {"depth": b.depth, "width_bits": b.width * 8, "bytes": b.nbytes}
                for name, b in self.banks.items()}

    # -- allocation ---------------------------------------------------------

    def allocate(self, name: str, words: int, bank: str = COMPUTE0,
                 base: Optional[int] = None) -> Region:
        if name in self.regions:
            raise Overlap(f"region {name!r} already allocated")
        if words < 1:
            raise ValueError("region must hold at least one word")
        depth = self.banks[bank].depth
        taken = sorted((r for r in self.regions.values() if r.bank == bank), key=lambda r: r.base)
        if base is not None:
            if base < 0 or base + words > depth:
                raise OutOfMemory(f"{name}: [{base}, {base + words}) exceeds {bank} depth {depth}")
            for r in taken:
                if base < r.end and r.base < base + words:
                    raise Overlap(f"{name} overlaps {r.name}")
        else:
            cursor = 0
            for r in taken:
                if r.base - cursor >= words:
                    break
                cursor = max(cursor, r.end)
            if cursor + words > depth:
                raise OutOfMemory(f"{name}: {words} words do not fit in {bank}")
            base = cursor
        region = Region(name, bank, base, words)
        self.regions[name] = region
        return region

    def free(self, name: str) -> None:
        del self.regions[name]

    def region_array(self, region: Region, dtype, shape) -> np.ndarray:
        n = int(np.prod(shape)) * np.dtype(dtype).itemsize
        if n > region.nbytes:
            raise OutOfRange(f"{region.name}: {n} bytes exceed region size {region.nbytes}")
        raw = self.banks[region.bank].load_bytes(region.byte_base, n)
        return raw.view(dtype).reshape(shape)

    def store_array(self, region: Region, array, offset_bytes: int = 0) -> None:
        arr = np.ascontiguousarray(array)
        if offset_bytes + arr.nbytes > region.nbytes:
            raise OutOfRange(f"{region.name}: write of {arr.nbytes} bytes overruns region")
        self.banks[region.bank].store_bytes(region.byte_base + offset_bytes, arr.view(np.uint8))

    def clear(self) -> None:
        for b in self.banks.values():
            b.clear()
        self.regions.clear()

    # -- image dump / load --------------------------------------------------

    def dump(self, directory) -> Path:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name, bank in self.banks.items():
            (d / f"{name}.bin").write_bytes(bank.data.tobytes())
        manifest = {
            "geometry": self.geometry(),
            "regions": [asdict(r) for r in sorted(self.regions.values(), key=lambda r: (r.bank, r.base))],
        }
        path = d / "layout.json"
        path.write_text(json.dumps(manifest, indent=2))
        return path

    @classmethod
    def load(cls, directory) -> "Fabric":
        d = Path(directory)
        manifest = json.loads((d / "layout.json").read_text())
        geo = manifest["geometry"]
        fab = cls(geo[FEATURE]["depth"], geo[COMPUTE0]["depth"])
        for name, bank in fab.banks.items():
            raw = np.frombuffer((d / f"{name}.bin").read_bytes(), dtype=np.uint8)
            bank.data[:] = raw.reshape(bank.depth, bank.width)
        for r in manifest["regions"]:
            fab.regions[r["name"]] = Region(**r)
        return fab
