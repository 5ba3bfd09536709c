"""Vector processing element: VLIW-issued SIMDU, VU and Mif with int8 datapaths.

One :class:`VliwWord` issues per cycle. Results become visible after the
producing unit's latency (SIMDU 5, VU 1, ld/ldw/pl 2, fa/seta 1); reading a
register before its value lands raises :class:`HazardError`, so compiled
programs carry their own nops. Streaming VU tile ops (``vadd.t`` /
``vmax.t``) hold the sequencer for ``ceil(elements / VU_STREAM_ELEMS)``
cycles.

Assembly, one word per line, fields in brackets::

    [prd d0, d1, q=0] [vadd d2, d3, d4] [ld @a0+8, d5] [fin]
    [prds d1, @a1+0/32, q=1]  [pl @a2+64, 64, rows=7]  [seta a3, compute1:4096]
    [vadd.t @a1+0, @a2+0, @a3+0, 128, 16, q=2]  [vmax.t @a1+0, @a2+0, 40, 32, 20]
    [ldw @a0+-1, d0, w=3, n=20]  [fa a0]  [nop]

``dX`` is a data register, ``@aN+off`` a byte offset from address register
``aN``; ``/stride`` on a prds memory destination is the byte distance to
where sub-lane B results go. ``q=N`` selects a writeback requantiser from
the parameter cache; without it results stay int32.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .errors import AsmError, BadIndex, HazardError, RegisterConflict
from .fabric import Fabric
from .kernels import maxpool_groups
from .quant import Requant

LANES = config.SIMD_LANES
SUB = config.SUBLANE_WIDTH

LATENCY = {
    "prd": config.SIMDU_LATENCY,
    "prds": config.SIMDU_LATENCY,
    "vadd": config.VU_LATENCY,
    "vem": config.VU_LATENCY,
    "vmax": config.VU_LATENCY,
    "ld": config.LD_LATENCY,
    "ldw": config.LD_LATENCY,
    "pl": config.LD_LATENCY,
    "fa": config.FA_LATENCY,
    "seta": 1,
}


# ---------------------------------------------------------------------------
# instruction fields
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MemRef:
    reg: int
    offset: int = 0
    stride: int = 0  # prds: byte distance to the sub-lane B destination
    bank: str = ""  # absolute form ``@bank:byte`` (reg unused)

    def __str__(self):
        s = f"@{self.bank}:{self.offset}" if self.bank else f"@a{self.reg}+{self.offset}"
        return s + (f"/{self.stride}" if self.stride else "")


@dataclass(frozen=True)
class SimdOp:
    kind: str  # prd | prds
    src: int
    dst: object  # int (dRf) or MemRef
    q: Optional[int] = None
    dyn: bool = False  # take the parameter block loaded by ``pl``


@dataclass(frozen=True)
class VuOp:
    kind: str  # vadd | vem | vmax
    a: int
    b: int
    dst: object  # int or MemRef
    q: Optional[int] = None
    narrow: bool = False  # memory destination without q: store int8 instead of int32


@dataclass(frozen=True)
class VuTile:
    """Streaming VU op over memory tiles."""

    kind: str  # vadd.t | vmax.t
    a: MemRef
    b: Optional[MemRef]
    dst: MemRef
    rows: int
    cols: int
    group: int = 0  # vmax.t: rows per pooling group (one flow's sequence)
    q: Optional[int] = None
    ceil: bool = True
    dstride: int = 0  # vadd.t: destination row stride in bytes (0: packed)

    @property
    def elements(self) -> int:
        return self.rows * self.cols

    @property
    def cycles(self) -> int:
        return -(-self.elements // config.VU_STREAM_ELEMS)


@dataclass(frozen=True)
class MifOp:
    kind: str  # fa | ld | ldw | pl
    addr: object  # int (fa target) or MemRef
    dst: Optional[int] = None
    wide: bool = False  # ld: 8 x int32 instead of 8 x int8
    w: int = 0  # ldw window width
    n: int = 0  # ldw sequence length
    e: int = 0  # ldw first window start (may be negative: zero padding)
    stride: int = 0  # pl row stride
    rows: int = LANES
    cols: int = LANES
    transpose: bool = False


@dataclass(frozen=True)
class CtrlOp:
    kind: str  # fin | seta
    reg: int = 0
    bank: str = ""
    byte: int = 0


@dataclass(frozen=True)
class VliwWord:
    simd: Optional[SimdOp] = None
    vu: Optional[object] = None  # VuOp | VuTile
    mif: Optional[MifOp] = None
    ctrl: Optional[CtrlOp] = None

    def fields(self):
        return [f for f in (self.simd, self.vu, self.mif, self.ctrl) if f is not None]

    @property
    def empty(self) -> bool:
        return not self.fields()


# ---------------------------------------------------------------------------
# assembler
# ---------------------------------------------------------------------------

_MEM = re.compile(r"^@a(\d+)(?:\+(-?\d+))?(?:/(\d+))?$")
_ABS = re.compile(r"^@([a-z]\w*):(\d+)(?:/(\d+))?$")
_REG = re.compile(r"^d(\d+)$")
_AREG = re.compile(r"^a(\d+)$")


def _mem(tok: str) -> MemRef:
    a = _ABS.match(tok)
    if a:
        return MemRef(-1, int(a.group(2)), int(a.group(3) or 0), a.group(1))
    m = _MEM.match(tok)
    if not m:
        raise AsmError(f"bad memory operand {tok!r}")
    return MemRef(int(m.group(1)), int(m.group(2) or 0), int(m.group(3) or 0))


def _reg(tok: str) -> int:
    m = _REG.match(tok)
    if not m:
        raise AsmError(f"bad data register {tok!r}")
    return int(m.group(1))


def _dst(tok: str):
    return _mem(tok) if tok.startswith("@") else _reg(tok)


def _split_kw(args: List[str]):
    pos, kw = [], {}
    for a in args:
        if "=" in a:
            k, v = a.split("=", 1)
            kw[k.strip()] = v.strip()
        else:
            pos.append(a)
    return pos, kw


def parse_field(text: str):
    text = text.strip()
    if not text or text == "nop":
        return None
    head, _, rest = text.partition(" ")
    args = [a.strip() for a in rest.split(",")] if rest.strip() else []
    pos, kw = _split_kw(args)
    q = int(kw["q"]) if "q" in kw else None
    try:
        if head in ("prd", "prds"):
            return SimdOp(head, _reg(pos[0]), _dst(pos[1]), q, kw.get("p") == "dyn")
        if head in ("vadd", "vem", "vmax"):
            return VuOp(head, _reg(pos[0]), _reg(pos[1]), _dst(pos[2]), q, "i8" in pos[3:])
        if head == "vadd.t":
            return VuTile(head, _mem(pos[0]), _mem(pos[1]), _mem(pos[2]), int(pos[3]), int(pos[4]), q=q,
                          dstride=int(kw.get("ds", 0)))
        if head == "vmax.t":
            ceil = "floor" not in pos[5:]
            return VuTile(head, _mem(pos[0]), None, _mem(pos[1]), int(pos[2]), int(pos[3]),
                          group=int(pos[4]), ceil=ceil)
        if head == "fa":
            m = _AREG.match(pos[0])
            if not m:
                raise AsmError(f"fa needs an address register, got {pos[0]!r}")
            return MifOp("fa", int(m.group(1)))
        if head == "ld":
            return MifOp("ld", _mem(pos[0]), _reg(pos[1]), wide="i32" in pos[2:])
        if head == "ldw":
            return MifOp("ldw", _mem(pos[0]), _reg(pos[1]), w=int(kw["w"]), n=int(kw["n"]),
                         e=int(kw.get("e", 0)))
        if head == "pl":
            return MifOp("pl", _mem(pos[0]), None, stride=int(pos[1]),
                         rows=int(kw.get("rows", LANES)), cols=int(kw.get("cols", LANES)),
                         transpose="t" in pos[2:])
        if head == "fin":
            return CtrlOp("fin")
        if head == "seta":
            m = _AREG.match(pos[0])
            bank, byte = pos[1].split(":")
            return CtrlOp("seta", int(m.group(1)), bank, int(byte))
    except (IndexError, KeyError, ValueError, AttributeError) as exc:
        raise AsmError(f"cannot parse {text!r}: {exc}") from exc
    raise AsmError(f"unknown instruction {head!r}")


def format_field(f) -> str:
    def qs(q):
        return f", q={q}" if q is not None else ""

    if isinstance(f, SimdOp):
        return f"{f.kind} d{f.src}, {f.dst if isinstance(f.dst, MemRef) else 'd%d' % f.dst}{qs(f.q)}" + \
            (", p=dyn" if f.dyn else "")
    if isinstance(f, VuOp):
        d = f.dst if isinstance(f.dst, MemRef) else f"d{f.dst}"
        return f"{f.kind} d{f.a}, d{f.b}, {d}{qs(f.q)}" + (", i8" if f.narrow else "")
    if isinstance(f, VuTile):
        if f.kind == "vadd.t":
            return f"vadd.t {f.a}, {f.b}, {f.dst}, {f.rows}, {f.cols}{qs(f.q)}" + \
                (f", ds={f.dstride}" if f.dstride else "")
        return f"vmax.t {f.a}, {f.dst}, {f.rows}, {f.cols}, {f.group}" + ("" if f.ceil else ", floor")
    if isinstance(f, MifOp):
        if f.kind == "fa":
            return f"fa a{f.addr}"
        if f.kind == "ld":
            return f"ld {f.addr}, d{f.dst}" + (", i32" if f.wide else "")
        if f.kind == "ldw":
            return f"ldw {f.addr}, d{f.dst}, e={f.e}, w={f.w}, n={f.n}"
        s = f"pl {f.addr}, {f.stride}"
        if f.rows != LANES:
            s += f", rows={f.rows}"
        if f.cols != LANES:
            s += f", cols={f.cols}"
        return s + (", t" if f.transpose else "")
    if isinstance(f, CtrlOp):
        return "fin" if f.kind == "fin" else f"seta a{f.reg}, {f.bank}:{f.byte}"
    raise AsmError(f"cannot format {f!r}")


def assemble_line(line: str) -> VliwWord:
    line = line.split(";", 1)[0].strip()
    slots: Dict[str, object] = {}
    for body in re.findall(r"\[([^\]]*)\]", line) if line else []:
        f = parse_field(body)
        if f is None:
            continue
        key = {SimdOp: "simd", VuOp: "vu", VuTile: "vu", MifOp: "mif", CtrlOp: "ctrl"}[type(f)]
        if key in slots:
            raise AsmError(f"two {key} fields in one word: {line!r}")
        slots[key] = f
    if line and not line.startswith("[") and line != "nop":
        raise AsmError(f"expected bracketed fields: {line!r}")
    return VliwWord(**slots)


def assemble(text: str) -> List[VliwWord]:
    return [assemble_line(l) for l in text.splitlines() if l.split(";", 1)[0].strip()]


def disassemble(words: Sequence[VliwWord]) -> str:
    lines = []
    for w in words:
        fs = w.fields()
        lines.append(" ".join(f"[{format_field(f)}]" for f in fs) if fs else "[nop]")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# arithmetic units (pure functions, used by the interpreter and tests)
# ---------------------------------------------------------------------------


def simd_prd(x, params) -> np.ndarray:
    """Per-lane 8-wide int8 dot product: ``out[j] = sum_i x[i] * params[j, i]``."""
    x = np.asarray(x, dtype=np.int64).reshape(LANES)
    p = np.asarray(params, dtype=np.int64).reshape(LANES, LANES)
    return (p @ x).astype(np.int32)


def simd_prds(x, params) -> Tuple[np.ndarray, np.ndarray]:
    """Two independent 4-wide products per lane (elements 0-3 and 4-7)."""
    x = np.asarray(x, dtype=np.int64).reshape(2, SUB)
    p = np.asarray(params, dtype=np.int64).reshape(LANES, 2, SUB)
    a = p[:, 0, :] @ x[0]
    b = p[:, 1, :] @ x[1]
    return a.astype(np.int32), b.astype(np.int32)


def vu_exec(kind: str, a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.int64)
    b = np.asarray(b, dtype=np.int64)
    if kind == "vadd":
        r = a + b
    elif kind == "vem":
        r = a * b
    elif kind == "vmax":
        r = np.maximum(a, b)
    else:
        raise BadIndex(f"unknown VU op {kind!r}")
    return np.clip(r, -2 ** 31, 2 ** 31 - 1).astype(np.int32)


def activate(values, rq: Optional[Requant]) -> np.ndarray:
    if rq is None:
        return np.asarray(values, dtype=np.int32)
    return rq.apply(np.asarray(values, dtype=np.int32)).astype(np.int32)


# ---------------------------------------------------------------------------
# machine
# ---------------------------------------------------------------------------


@dataclass
class VpeStats:
    cycles: int = 0
    words: int = 0
    counts: Dict[str, int] = field(default_factory=dict)
    simd_mults: int = 0  # multiplier-slots doing useful (param-nonzero-shaped) work
    vu_elems: int = 0
    fins: int = 0

    def bump(self, key: str, n: int = 1) -> None:
        self.counts[key] = self.counts.get(key, 0) + n


class VPE:
    def __init__(self, fabric: Fabric, drf_size: int = config.DRF_SIZE,
                 adrf_size: int = config.ADRF_SIZE, icache_words: int = config.ICACHE_WORDS):
        self.fabric = fabric
        self.drf_size = drf_size
        self.adrf_size = adrf_size
        self.icache_words = icache_words
        self.icache: List[VliwWord] = []
        self.pcache = np.zeros(0, dtype=np.int8)
        self.requants: List[Requant] = []
        self.fetch_address: Optional[Callable[[], Tuple[str, int]]] = None
        self.on_fin: Optional[Callable[[int], None]] = None
        self.stats = VpeStats()
        self.reset_state()

    def reset_state(self) -> None:
        self.drf = np.zeros((self.drf_size, LANES), dtype=np.int32)
        self.adrf: List[Tuple[str, int]] = [("compute0", 0)] * self.adrf_size
        self.ready_at = np.zeros(self.drf_size, dtype=np.int64)
        self.aready_at = np.zeros(self.adrf_size, dtype=np.int64)
        self.dyn_params = np.zeros((LANES, LANES), dtype=np.int8)
        self.dyn_ready = 0
        self.pptr = 0

    def load(self, words: Sequence[VliwWord], pcache=None, requants=None) -> None:
        from .errors import CapacityError

        if len(words) > self.icache_words:
            raise CapacityError(f"{len(words)} VLIW words exceed iCache of {self.icache_words}")
        self.icache = list(words)
        if pcache is not None:
            self.pcache = np.asarray(pcache, dtype=np.int8)
        if requants is not None:
            self.requants = list(requants)

    # -- operand helpers ----------------------------------------------------

    def _chk(self, r: int) -> int:
        if not 0 <= r < self.drf_size:
            raise BadIndex(f"dRf index {r}")
        return r

    def _read_reg(self, r: int, t: int) -> np.ndarray:
        self._chk(r)
        if self.ready_at[r] > t:
            raise HazardError(f"d{r} read at cycle {t}, ready at {self.ready_at[r]}")
        return self.drf[r]

    def _write_reg(self, r: int, value, ready: int) -> None:
        self._chk(r)
        if self.ready_at[r] > ready:
            raise RegisterConflict(f"d{r}: write landing at {ready} overtakes one at {self.ready_at[r]}")
        self.drf[r] = value
        self.ready_at[r] = ready

    def _addr(self, m: MemRef, t: int) -> Tuple[str, int]:
        if m.bank:
            return m.bank, m.offset
        if not 0 <= m.reg < self.adrf_size:
            raise BadIndex(f"adRf index {m.reg}")
        if self.aready_at[m.reg] > t:
            raise HazardError(f"a{m.reg} read at cycle {t}, ready at {self.aready_at[m.reg]}")
        bank, base = self.adrf[m.reg]
        return bank, base + m.offset

    def _rq(self, q: Optional[int]) -> Optional[Requant]:
        if q is None:
            return None
        if not 0 <= q < len(self.requants):
            raise BadIndex(f"requantiser q={q}")
        return self.requants[q]

    def _take_params(self, n: int) -> np.ndarray:
        if self.pptr + n > self.pcache.size:
            raise BadIndex("parameter stream exhausted")
        p = self.pcache[self.pptr:self.pptr + n]
        self.pptr += n
        return p

    def _store(self, m: MemRef, values, wide: bool, t: int) -> None:
        bank, byte = self._addr(m, t)
        arr = np.asarray(values, dtype=np.int32 if wide else np.int8)
        self.fabric[bank].store_bytes(byte, arr.view(np.uint8))

    # -- execution ----------------------------------------------------------

    def execute_vliw(self, word: VliwWord, t: int) -> int:
        """Issue ``word`` at cycle ``t``; returns the cycle the next word may issue."""
        dsts = []
        for f in (word.simd, word.vu, word.mif):
            if isinstance(f, (SimdOp, VuOp)) and not isinstance(f.dst, MemRef):
                dsts.append(f.dst)
                if isinstance(f, SimdOp) and f.kind == "prds":
                    dsts.append(f.dst + 1)
            elif isinstance(f, MifOp) and f.dst is not None:
                dsts.append(f.dst)
        if len(dsts) != len(set(dsts)):
            raise RegisterConflict(f"word writes a register twice: {dsts}")

        next_t = t + 1
        self.stats.words += 1
        if word.mif is not None:
            self._mif(word.mif, t)
        if word.simd is not None:
            self._simd(word.simd, t)
        if word.vu is not None:
            if isinstance(word.vu, VuTile):
                next_t = t + word.vu.cycles
                self._tile(word.vu, t)
            else:
                self._vu(word.vu, t)
        if word.ctrl is not None:
            self._ctrl(word.ctrl, t)
        self.stats.cycles = max(self.stats.cycles, next_t)
        return next_t

    def _mif(self, op: MifOp, t: int) -> None:
        self.stats.bump(op.kind)
        lat = LATENCY[op.kind]
        if op.kind == "fa":
            if self.fetch_address is None:
                raise HazardError("fa with no ready-address source attached")
            if not 0 <= op.addr < self.adrf_size:
                raise BadIndex(f"adRf index {op.addr}")
            self.adrf[op.addr] = self.fetch_address()
            self.aready_at[op.addr] = t + lat
            return
        bank, byte = self._addr(op.addr, t)
        mem = self.fabric[bank]
        if op.kind == "ld":
            n = LANES * (4 if op.wide else 1)
            raw = mem.load_bytes(byte, n)
            vals = raw.view(np.int32 if op.wide else np.int8).astype(np.int32)
            self._write_reg(op.dst, vals, t + lat)
        elif op.kind == "ldw":
            # two img2col windows of a sequence starting at ``byte``:
            # x[e .. e+w-1] -> elements 0..3, x[e+1 .. e+w] -> 4..7, zero outside [0, n)
            vals = np.zeros(LANES, dtype=np.int32)
            seq = mem.load_bytes(byte, op.n).view(np.int8)
            for half in range(2):
                for i in range(op.w):
                    pos = op.e + half + i
                    if 0 <= pos < op.n:
                        vals[half * SUB + i] = int(seq[pos])
            self._write_reg(op.dst, vals, t + lat)
        elif op.kind == "pl":
            flat = mem.data.reshape(-1).view(np.int8)
            blk = np.zeros((LANES, LANES), dtype=np.int8)
            for j in range(LANES):
                for i in range(LANES):
                    if op.transpose:
                        ok, off = i < op.rows and j < op.cols, i * op.stride + j
                    else:
                        ok, off = j < op.rows and i < op.cols, j * op.stride + i
                    if ok:
                        blk[j, i] = flat[byte + off]
            mem.word_reads += max(1, -(-op.rows * max(op.stride, LANES) // config.WORD_BYTES))
            self.dyn_params = blk
            self.dyn_ready = t + lat
        else:
            raise BadIndex(f"unknown Mif op {op.kind!r}")

    def _params(self, op: SimdOp, t: int, n: int) -> np.ndarray:
        if op.dyn:
            if self.dyn_ready > t:
                raise HazardError(f"dynamic parameter block read at {t}, ready at {self.dyn_ready}")
            return self.dyn_params.reshape(-1)
        return self._take_params(n)

    def _simd(self, op: SimdOp, t: int) -> None:
        self.stats.bump(op.kind)
        x = self._read_reg(op.src, t)
        rq = self._rq(op.q)
        ready = t + LATENCY[op.kind]
        p = self._params(op, t, LANES * LANES)
        self.stats.simd_mults += int(np.count_nonzero(p))
        if op.kind == "prd":
            out = activate(simd_prd(x, p), rq)
            if isinstance(op.dst, MemRef):
                self._store(op.dst, out, rq is None, t)
            else:
                self._write_reg(op.dst, out, ready)
        else:
            a, b = simd_prds(x, p)
            a, b = activate(a, rq), activate(b, rq)
            if isinstance(op.dst, MemRef):
                self._store(op.dst, a, rq is None, t)
                self._store(replace(op.dst, offset=op.dst.offset + op.dst.stride), b, rq is None, t)
            else:
                self._write_reg(op.dst, a, ready)
                self._write_reg(op.dst + 1, b, ready)

    def _vu(self, op: VuOp, t: int) -> None:
        self.stats.bump(op.kind)
        self.stats.vu_elems += LANES
        r = activate(vu_exec(op.kind, self._read_reg(op.a, t), self._read_reg(op.b, t)), self._rq(op.q))
        if isinstance(op.dst, MemRef):
            self._store(op.dst, r, op.q is None and not op.narrow, t)
        else:
            self._write_reg(op.dst, r, t + LATENCY[op.kind])

    def _tile(self, op: VuTile, t: int) -> None:
        self.stats.bump(op.kind)
        self.stats.vu_elems += op.elements
        abank, abyte = self._addr(op.a, t)
        dbank, dbyte = self._addr(op.dst, t)
        if op.kind == "vadd.t":
            bbank, bbyte = self._addr(op.b, t)
            n = op.elements * 4
            a = self.fabric[abank].load_bytes(abyte, n).view(np.int32)
            b = self.fabric[bbank].load_bytes(bbyte, n).view(np.int32)
            r = vu_exec("vadd", a, b)
            rq = self._rq(op.q)
            out = rq.apply(r).astype(np.int8) if rq is not None else r
            row = op.cols * out.itemsize
            mem = self.fabric[dbank]
            if not op.dstride or op.dstride == row:
                mem.store_bytes(dbyte, out.view(np.uint8))
            else:
                rows = out.reshape(op.rows, op.cols).view(np.uint8).reshape(op.rows, row)
                flat = mem.data.reshape(-1)
                end = dbyte + (op.rows - 1) * op.dstride + row
                if dbyte < 0 or end > mem.nbytes:
                    raise BadIndex(f"vadd.t destination [{dbyte}, {end}) outside {dbank}")
                idx = dbyte + np.arange(op.rows)[:, None] * op.dstride + np.arange(row)[None, :]
                flat[idx] = rows
                mem.word_writes += op.rows * -(-row // config.WORD_BYTES)
        elif op.kind == "vmax.t":
            x = self.fabric[abank].load_bytes(abyte, op.elements).view(np.int8).reshape(op.rows, op.cols)
            y = maxpool_groups(x, op.group, op.ceil)
            self.fabric[dbank].store_bytes(dbyte, y.view(np.uint8))
        else:
            raise BadIndex(f"unknown tile op {op.kind!r}")

    def _ctrl(self, op: CtrlOp, t: int) -> None:
        self.stats.bump(op.kind)
        if op.kind == "fin":
            self.stats.fins += 1
            if self.on_fin is not None:
                self.on_fin(t)
        elif op.kind == "seta":
            if not 0 <= op.reg < self.adrf_size:
                raise BadIndex(f"adRf index {op.reg}")
            self.adrf[op.reg] = (op.bank, op.byte)
            self.aready_at[op.reg] = t + LATENCY["seta"]
        else:
            raise BadIndex(f"unknown ctrl op {op.kind!r}")

    def run(self, words: Optional[Sequence[VliwWord]] = None, pbase: int = 0,
            adrf: Optional[Dict[int, Tuple[str, int]]] = None) -> int:
        """Run a straight-line program; returns cycles until every result has landed.

        ``pbase`` is where the program's parameter stream starts in the pCache;
        ``adrf`` holds address registers written by the controller before start.
        """
        words = self.icache if words is None else words
        self.pptr = pbase
        self.ready_at[:] = 0
        self.aready_at[:] = 0
        self.dyn_ready = 0
        if adrf:
            for r, v in adrf.items():
                self.adrf[r] = v
        t = 0
        for w in words:
            t = self.execute_vliw(w, t)
        drain = max(int(self.ready_at.max()), int(self.aready_at.max()), self.dyn_ready, t)
        return drain


def program_latency(words: Sequence[VliwWord]) -> int:
    """Cycle count of a program under the documented latency model (no data)."""
    t = 0
    done = 0
    for w in words:
        if isinstance(w.vu, VuTile):
            nt = t + w.vu.cycles
        else:
            nt = t + 1
        for f in w.fields():
            kind = getattr(f, "kind", "")
            if kind in LATENCY:
                done = max(done, t + LATENCY[kind])
        t = nt
    return max(t, done)
