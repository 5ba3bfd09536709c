"""Pack a list of VPE operations into VLIW words.

Greedy list scheduling: each operation, in program order, goes to the
earliest cycle where its unit is free and every dependence is met.

- RAW: a source is read no earlier than the producer's result cycle.
- WAR: a destination is issued strictly after the last read of the old value.
- WAW: a new result never lands before an older one.

Memory operands are disambiguated by address register and byte range.
References through different address registers are assumed disjoint; the
code generator only binds distinct regions to distinct registers. The
parameter stream is laid out afterwards in issue order, so reordering
parameter-consuming products is safe.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..vpe import LATENCY, LANES, CtrlOp, MemRef, MifOp, SimdOp, VliwWord, VuOp, VuTile

DYN = "dyn"


def _unit(op) -> str:
    if isinstance(op, SimdOp):
        return "simd"
    if isinstance(op, (VuOp, VuTile)):
        return "vu"
    if isinstance(op, MifOp):
        return "mif"
    return "ctrl"


def _memkey(m: MemRef):
    return ("abs", m.bank) if m.bank else ("a", m.reg)


def _mem_span(op) -> Tuple[List[tuple], List[tuple]]:
    """(reads, writes) as (key, lo, hi) byte ranges relative to the base register."""
    reads, writes = [], []
    if isinstance(op, MifOp):
        if op.kind == "ld":
            n = LANES * (4 if op.wide else 1)
            reads.append((_memkey(op.addr), op.addr.offset, op.addr.offset + n))
        elif op.kind == "ldw":
            reads.append((_memkey(op.addr), op.addr.offset, op.addr.offset + op.n))
        elif op.kind == "pl":
            span = max(op.rows, op.cols) * max(op.stride, LANES) + LANES
            reads.append((_memkey(op.addr), op.addr.offset, op.addr.offset + span))
    elif isinstance(op, (SimdOp, VuOp)) and isinstance(op.dst, MemRef):
        wide = op.q is None and not getattr(op, "narrow", False)
        n = LANES * (4 if wide else 1)
        d = op.dst
        writes.append((_memkey(d), d.offset, d.offset + n))
        if isinstance(op, SimdOp) and op.kind == "prds":
            writes.append((_memkey(d), d.offset + d.stride, d.offset + d.stride + n))
    return reads, writes


def _regs(op) -> Tuple[List[object], List[object]]:
    """(uses, defs) over data registers (ints), address registers ('a', n) and DYN."""
    uses, defs = [], []

    def addr_use(m):
        if isinstance(m, MemRef) and not m.bank:
            uses.append(("a", m.reg))

    if isinstance(op, SimdOp):
        uses.append(op.src)
        if op.dyn:
            uses.append(DYN)
        if isinstance(op.dst, MemRef):
            addr_use(op.dst)
        else:
            defs.append(op.dst)
            if op.kind == "prds":
                defs.append(op.dst + 1)
    elif isinstance(op, VuOp):
        uses += [op.a, op.b]
        if isinstance(op.dst, MemRef):
            addr_use(op.dst)
        else:
            defs.append(op.dst)
    elif isinstance(op, MifOp):
        if op.kind == "fa":
            defs.append(("a", op.addr))
        else:
            addr_use(op.addr)
            defs.append(DYN if op.kind == "pl" else op.dst)
    elif isinstance(op, CtrlOp) and op.kind == "seta":
        defs.append(("a", op.reg))
    return uses, defs


@dataclass
class Bundle:
    words: List[VliwWord]
    stream: np.ndarray  # parameter bytes in consumption order
    simd_ops: int

    @property
    def cycles(self) -> int:
        from ..vpe import program_latency

        return program_latency(self.words)


def bundle(ops: Sequence[object], params: Optional[Sequence[Optional[np.ndarray]]] = None,
           fin: bool = True) -> Bundle:
    """Schedule ``ops``; ``params[i]`` is the 64-byte block a streamed product consumes."""
    params = list(params) if params is not None else [None] * len(ops)
    ready: Dict[object, int] = {}
    last_read: Dict[object, int] = {}
    mem_w: List[tuple] = []  # (key, lo, hi, done)
    mem_r: List[tuple] = []  # (key, lo, hi, cycle)
    busy: Dict[int, set] = {}
    placed: List[Tuple[int, str, object, Optional[np.ndarray]]] = []
    finish = 0

    for op, prm in zip(ops, params):
        if isinstance(op, CtrlOp) and op.kind == "fin":
            raise ValueError("fin is appended by the bundler")
        unit = _unit(op)
        lat = LATENCY.get(op.kind, 1)
        uses, defs = _regs(op)
        reads, writes = _mem_span(op)
        t = 0
        for u in uses:
            t = max(t, ready.get(u, 0))
        for d in defs:
            t = max(t, last_read.get(d, -1) + 1, ready.get(d, 0) - lat)
        for key, lo, hi in reads:
            for k2, lo2, hi2, done in mem_w:
                if k2 == key and lo < hi2 and lo2 < hi:
                    t = max(t, done)
        for key, lo, hi in writes:
            for k2, lo2, hi2, done in mem_w:
                if k2 == key and lo < hi2 and lo2 < hi:
                    t = max(t, done - lat)
            for k2, lo2, hi2, c in mem_r:
                if k2 == key and lo < hi2 and lo2 < hi:
                    t = max(t, c + 1)
        while unit in busy.get(t, ()):
            t += 1
        busy.setdefault(t, set()).add(unit)
        for u in uses:
            last_read[u] = max(last_read.get(u, -1), t)
        for d in defs:
            ready[d] = t + lat
        for key, lo, hi in reads:
            mem_r.append((key, lo, hi, t))
        for key, lo, hi in writes:
            mem_w.append((key, lo, hi, t + lat))
        finish = max(finish, t + lat, t + 1)
        placed.append((t, unit, op, prm))

    n = max(finish, max((t + 1 for t, *_ in placed), default=0))
    slots: List[Dict[str, object]] = [dict() for _ in range(n + (1 if fin else 0))]
    for t, unit, op, _ in placed:
        slots[t][unit] = op
    if fin:
        slots[n]["ctrl"] = CtrlOp("fin")
    stream = [prm for t, unit, op, prm in sorted(placed, key=lambda p: p[0])
              if isinstance(op, SimdOp) and not op.dyn]
    if any(p is None for p in stream):
        raise ValueError("streamed product without a parameter block")
    blob = np.concatenate([np.asarray(p, dtype=np.int8).reshape(-1) for p in stream]) if stream \
        else np.zeros(0, dtype=np.int8)
    words = [VliwWord(**s) for s in slots]
    nsimd = sum(1 for _, u, *_ in placed if u == "simd")
    return Bundle(words, blob, nsimd)
