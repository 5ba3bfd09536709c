"""Weight-stationary k x k systolic array with LD / MM instructions.

Cost model: ``LD`` takes k cycles (column-by-column shift-in); ``MM l``
takes ``l + 2k - 1`` cycles (fill, stream, drain). LD of the next tile is
not overlapped with the previous drain. Utilisation counts only cells
holding a real weight while a real row passes through them.

Operands are addressed through descriptors in the address register file,
written by ``SETA`` (folded into the following instruction's issue)::

    SETA a2, pcache:0, rows=3, cols=16, rs=32     ; weight tile, row stride 32
    SETA a0, compute0:0, rows=640, cols=3, win=20/1/3/1/1/0
    SETA a1, compute1:0, rs=64, i32
    LD a2
    MM 640, a0, a1, q=3

``win=L/C/s/pad/stride/c0`` reads img2col rows: stream row r is window
``r % w`` of sample ``r // w`` of a row-major ``(L, C)`` int8 sequence, and
the tile takes img2col columns ``c0 .. c0+cols-1`` (column = tap * C +
channel). ``t`` on a weight descriptor loads the tile transposed.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .errors import AsmError, BadAddress, BadIndex, StreamTooWide
from .fabric import Fabric
from .kernels import systolic_ws
from .quant import Requant

PCACHE = "pcache"


@dataclass
class ArrayConfig:
    k: int = config.ARRAY_K
    dataflow: str = "weight-stationary"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("array dimension must be >= 1")

    def ld_cost(self) -> int:
        return self.k

    def mm_cost(self, l: int) -> int:
        return l + 2 * self.k - 1


@dataclass(frozen=True)
class Desc:
    bank: str
    byte: int
    rows: int = 0
    cols: int = 0
    rs: int = 0  # row stride in bytes (0: packed)
    i32: bool = False
    win: Optional[Tuple[int, int, int, int, int, int]] = None  # L, C, s, pad, stride, c0
    t: bool = False

    def text(self) -> str:
        parts = [f"{self.bank}:{self.byte}"]
        if self.rows:
            parts.append(f"rows={self.rows}")
        if self.cols:
            parts.append(f"cols={self.cols}")
        if self.rs:
            parts.append(f"rs={self.rs}")
        if self.win:
            parts.append("win=" + "/".join(str(v) for v in self.win))
        if self.i32:
            parts.append("i32")
        if self.t:
            parts.append("t")
        return ", ".join(parts)


@dataclass(frozen=True)
class AryInstr:
    kind: str  # SETA | LD | MM
    reg: int = 0  # SETA target / LD source
    desc: Optional[Desc] = None
    l: int = 0
    src: int = 0
    dst: int = 0
    q: Optional[int] = None

    def text(self) -> str:
        if self.kind == "SETA":
            return f"SETA a{self.reg}, {self.desc.text()}"
        if self.kind == "LD":
            return f"LD a{self.reg}"
        return f"MM {self.l}, a{self.src}, a{self.dst}" + (f", q={self.q}" if self.q is not None else "")


# ---------------------------------------------------------------------------
# assembler
# ---------------------------------------------------------------------------

_A = re.compile(r"^a(\d+)$")


def _areg(tok: str) -> int:
    m = _A.match(tok.strip())
    if not m:
        raise AsmError(f"expected address register, got {tok!r}")
    return int(m.group(1))


def parse_desc(parts: Sequence[str]) -> Desc:
    bank, _, byte = parts[0].partition(":")
    kw: Dict[str, object] = {}
    for p in parts[1:]:
        p = p.strip()
        if p in ("i32", "t"):
            kw[p] = True
        elif "=" in p:
            k, v = p.split("=", 1)
            if k == "win":
                kw["win"] = tuple(int(x) for x in v.split("/"))
                if len(kw["win"]) != 6:
                    raise AsmError(f"win needs 6 fields: {p!r}")
            elif k in ("rows", "cols", "rs"):
                kw[k] = int(v)
            else:
                raise AsmError(f"unknown descriptor key {k!r}")
        else:
            raise AsmError(f"bad descriptor field {p!r}")
    return Desc(bank, int(byte), **kw)


def assemble_line(line: str) -> Optional[AryInstr]:
    line = line.split(";", 1)[0].strip()
    if not line:
        return None
    op, _, rest = line.partition(" ")
    args = [a.strip() for a in rest.split(",")] if rest else []
    try:
        if op == "SETA":
            return AryInstr("SETA", _areg(args[0]), parse_desc(args[1:]))
        if op == "LD":
            return AryInstr("LD", _areg(args[0]))
        if op == "MM":
            q = None
            if len(args) > 3:
                if not args[3].startswith("q="):
                    raise AsmError(f"bad MM option {args[3]!r}")
                q = int(args[3][2:])
            return AryInstr("MM", l=int(args[0]), src=_areg(args[1]), dst=_areg(args[2]), q=q)
    except (IndexError, ValueError) as exc:
        raise AsmError(f"cannot parse {line!r}: {exc}") from exc
    raise AsmError(f"unknown AryPE instruction {op!r}")


def assemble(text: str) -> List[AryInstr]:
    return [i for i in (assemble_line(l) for l in text.splitlines()) if i is not None]


def disassemble(prog: Sequence[AryInstr]) -> str:
    return "".join(i.text() + "\n" for i in prog)


# ---------------------------------------------------------------------------
# utilisation
# ---------------------------------------------------------------------------


@dataclass
class UtilizationRecord:
    k: int
    active_mac_cycles: int = 0
    elapsed: int = 0
    per_instr: List[Tuple[str, int, int]] = field(default_factory=list)  # (text, cycles, active)

    @property
    def total_mac_cycles(self) -> int:
        return self.k * self.k * self.elapsed

    @property
    def utilization(self) -> float:
        return self.active_mac_cycles / self.total_mac_cycles if self.elapsed else 0.0

    def add(self, text: str, cycles: int, active: int = 0) -> None:
        self.elapsed += cycles
        self.active_mac_cycles += active
        self.per_instr.append((text, cycles, active))


def occupancy(a: int, b: int, k: int) -> float:
    """Steady-state fraction of cells doing work for an (l, a) x (a, b) tile."""
    return a * min(b, k) / (k * k)


def tile_efficiency(l: int, a: int, b: int, k: int, with_ld: bool = True) -> float:
    cost = l + 2 * k - 1 + (k if with_ld else 0)
    return a * min(b, k) * l / (k * k * cost)


def arype_latency_model(prog: Sequence[AryInstr], k: int) -> UtilizationRecord:
    """Cycle count and MAC accounting of a program without touching data."""
    rec = UtilizationRecord(k)
    regs: Dict[int, Desc] = {}
    tile = (0, 0)
    for ins in prog:
        if ins.kind == "SETA":
            regs[ins.reg] = ins.desc
        elif ins.kind == "LD":
            d = regs.get(ins.reg)
            if d is None:
                raise BadAddress(f"LD through unset a{ins.reg}")
            tile = (d.cols, d.rows) if d.t else (d.rows, d.cols)
            rec.add(ins.text(), k)
        else:
            a, b = tile
            rec.add(ins.text(), ins.l + 2 * k - 1, a * min(b, k) * ins.l)
    return rec


# ---------------------------------------------------------------------------
# machine
# ---------------------------------------------------------------------------


def gather_rows(fabric: Fabric, d: Desc, l: int) -> np.ndarray:
    """Stream operand rows ``(l, d.cols)`` as int8 via a source descriptor."""
    mem = fabric[d.bank]
    if d.win is None:
        rs = d.rs or d.cols
        raw = mem.load_bytes(d.byte, (l - 1) * rs + d.cols) if l else np.zeros(0, np.uint8)
        if rs == d.cols:
            return raw.view(np.int8).reshape(l, d.cols)
        flat = np.zeros(l * rs, dtype=np.uint8)
        flat[:raw.size] = raw
        return flat.reshape(l, rs)[:, :d.cols].view(np.int8)
    L, C, s, pad, stride, c0 = d.win
    w = (L + 2 * pad - s) // stride + 1
    samples = -(-l // w)
    seq = mem.load_bytes(d.byte, samples * L * C).view(np.int8).reshape(samples, L, C)
    padded = np.zeros((samples, L + 2 * pad, C), dtype=np.int8)
    padded[:, pad:pad + L] = seq
    taps = [padded[:, t: t + (w - 1) * stride + 1: stride, :] for t in range(s)]
    cols = np.concatenate(taps, axis=2).reshape(samples * w, s * C)
    return np.ascontiguousarray(cols[:l, c0:c0 + d.cols])


class AryPE:
    def __init__(self, fabric: Fabric, cfg: Optional[ArrayConfig] = None,
                 adrf_size: int = config.ADRF_SIZE, icache_words: int = config.ICACHE_WORDS,
                 cycle_level: bool = True):
        self.fabric = fabric
        self.cfg = cfg or ArrayConfig()
        self.adrf_size = adrf_size
        self.icache_words = icache_words
        self.icache: List[AryInstr] = []
        self.pcache = np.zeros(0, dtype=np.int8)
        self.requants: List[Requant] = []
        self.cycle_level = cycle_level  # False: plain matmul with modelled counts
        self.regs: Dict[int, Desc] = {}
        self.weights = np.zeros((self.cfg.k, self.cfg.k), dtype=np.int8)
        self.tile = (0, 0)
        self.util = UtilizationRecord(self.cfg.k)
        self.counts: Dict[str, int] = {}

    def load(self, prog: Sequence[AryInstr], pcache=None, requants=None) -> None:
        from .errors import CapacityError

        if len(prog) > self.icache_words:
            raise CapacityError(f"{len(prog)} AryPE instructions exceed iCache of {self.icache_words}")
        self.icache = list(prog)
        if pcache is not None:
            self.pcache = np.asarray(pcache, dtype=np.int8)
        if requants is not None:
            self.requants = list(requants)

    def _desc(self, reg: int) -> Desc:
        if not 0 <= reg < self.adrf_size:
            raise BadIndex(f"adRf index {reg}")
        if reg not in self.regs:
            raise BadAddress(f"a{reg} has no descriptor")
        return self.regs[reg]

    def ld_weights(self, d: Desc) -> int:
        k = self.cfg.k
        a, b = (d.cols, d.rows) if d.t else (d.rows, d.cols)
        if a > k or b > k or a < 1 or b < 1:
            raise StreamTooWide(f"weight tile {a}x{b} does not fit a {k}x{k} array")
        rs = d.rs or d.cols
        n = (d.rows - 1) * rs + d.cols
        if d.bank == PCACHE:
            if d.byte < 0 or d.byte + n > self.pcache.size:
                raise BadAddress(f"pCache bytes [{d.byte}, {d.byte + n}) out of range")
            raw = self.pcache[d.byte:d.byte + n].view(np.uint8)
        else:
            raw = self.fabric[d.bank].load_bytes(d.byte, n)
        flat = np.zeros(d.rows * rs, dtype=np.uint8)
        flat[:n] = raw
        tile = flat.reshape(d.rows, rs)[:, :d.cols].view(np.int8)
        if d.t:
            tile = tile.T
        self.weights = np.zeros((k, k), dtype=np.int8)
        self.weights[:a, :b] = tile
        self.tile = (a, b)
        self.counts["LD"] = self.counts.get("LD", 0) + 1
        cost = self.cfg.ld_cost()
        self.util.add(f"LD {a}x{b}", cost)
        return cost

    def mm(self, l: int, src: Desc, dst: Desc, q: Optional[int] = None):
        """Stream ``l`` rows; returns ``(result, cycles)``."""
        if l < 1:
            raise ValueError("MM stream length must be >= 1")
        a, b = self.tile
        if a == 0:
            raise BadAddress("MM before any LD")
        if src.cols > self.cfg.k:
            raise StreamTooWide(f"stream width {src.cols} exceeds k={self.cfg.k}")
        if src.cols != a:
            raise StreamTooWide(f"stream width {src.cols} does not match loaded tile depth {a}")
        x = gather_rows(self.fabric, src, l)
        if self.cycle_level:
            out, cycles, active = systolic_ws(x, self.weights[:a, :b], self.cfg.k)
        else:
            out = x.astype(np.int64) @ self.weights[:a, :b].astype(np.int64)
            out = out.astype(np.int32)
            cycles, active = self.cfg.mm_cost(l), l * a * min(b, self.cfg.k)
        if q is not None:
            if not 0 <= q < len(self.requants):
                raise BadIndex(f"requantiser q={q}")
            res = self.requants[q].apply(out).astype(np.int8)
        else:
            res = out.astype(np.int32)
        self._store(dst, res)
        self.counts["MM"] = self.counts.get("MM", 0) + 1
        self.util.add(f"MM {l}", cycles, active)
        return res, cycles

    def _store(self, d: Desc, res: np.ndarray) -> None:
        mem = self.fabric[d.bank]
        row_bytes = res.shape[1] * res.itemsize
        rs = d.rs or row_bytes
        if rs == row_bytes:
            mem.store_bytes(d.byte, np.ascontiguousarray(res).view(np.uint8))
            return
        start, end = d.byte, d.byte + (res.shape[0] - 1) * rs + row_bytes
        span = mem.load_bytes(start, end - start)
        mem.word_reads -= -(-(end - start) // config.WORD_BYTES)  # merge, not a real read
        view = np.zeros(res.shape[0] * rs, dtype=np.uint8)
        view[:span.size] = span
        view.reshape(res.shape[0], rs)[:, :row_bytes] = np.ascontiguousarray(res).view(np.uint8).reshape(
            res.shape[0], row_bytes)
        mem.store_bytes(start, view[:end - start])

    def execute(self, ins: AryInstr) -> int:
        if ins.kind == "SETA":
            if not 0 <= ins.reg < self.adrf_size:
                raise BadIndex(f"adRf index {ins.reg}")
            self.regs[ins.reg] = ins.desc
            return 0
        if ins.kind == "LD":
            return self.ld_weights(self._desc(ins.reg))
        if ins.kind == "MM":
            return self.mm(ins.l, self._desc(ins.src), self._desc(ins.dst), ins.q)[1]
        raise AsmError(f"unknown AryPE instruction {ins.kind!r}")

    def run(self, prog: Optional[Sequence[AryInstr]] = None) -> int:
        return sum(self.execute(i) for i in (self.icache if prog is None else prog))
