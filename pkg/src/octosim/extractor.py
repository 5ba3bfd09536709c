"""Feature extractor: hashed flow tracker, meta/history registers, 16-lane ALU
cluster, ready / in-flight FIFOs and vector/payload capture.

Feature-memory layout per tracked flow (``words_per_flow`` words starting at
``slot * words_per_flow``): word 0 holds the 16-byte ALU feature word, words
1.. hold captured vectors (interval/size bytes or payload rows) when a
capture mode is configured. Packet-granularity tasks use a separate ring of
words after the flow area, one word per in-flight packet.

Meta register (13 bytes)::

    0-1  pkt_size (u16 LE, saturating)     7-10  pkt_arv_intv (u32 LE, time units)
    2    flags                             11-12 tuple digest (low 16 hash bits)
    3    dir (flow-relative, 0 = forward)
    4    protocol
    5    constant 1 (packet counting)
    6    payload length (saturating)
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .errors import (CapacityExceeded, Collision, ConfigError, FifoFull, OutOfOrderFin,
                     ProgramError)
from .fabric import FEATURE, Fabric
from .kernels import hash_keys
from .traffic import FiveTuple, ParsedHeader

META = "meta"
HIST = "hist"

OPS = ("add", "sub", "max", "min", "wr")

M_SIZE, M_FLAGS, M_DIR, M_PROTO, M_ONE, M_PAYLEN, M_INTV, M_DIGEST = 0, 2, 3, 4, 5, 6, 7, 11

NEW_FLOW, HIT, READY, COLLISION, RECYCLED, PACKET = (
    "NewFlow", "Hit", "Ready", "Collision", "Recycled", "Packet")


def hash_tuple(tup: FiveTuple, table_depth: int = config.FLOW_TABLE_DEPTH) -> int:
    if table_depth & (table_depth - 1):
        raise ConfigError("table_depth must be a power of two")
    h = hash_keys(np.frombuffer(tup.key_bytes(), dtype=np.uint8))[0]
    return int(h) & (table_depth - 1)


def hash_tuple_digest(tup: FiveTuple) -> int:
    return int(hash_keys(np.frombuffer(tup.key_bytes(), dtype=np.uint8))[0])


# ---------------------------------------------------------------------------
# micro-op programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MicroOp:
    op: str
    a_bank: str
    a_byte: int
    b_bank: str
    b_byte: int
    dst: int
    width: int = 1
    b_width: Optional[int] = None
    skip_first: bool = False

    @property
    def src_b_width(self) -> int:
        return self.width if self.b_width is None else self.b_width

    @classmethod
    def from_row(cls, row: Sequence) -> "MicroOp":
        """Build from ``(op, bank, byte, bank2, byte2, dst, width[, b_width[, skip_first]])``."""
        if len(row) < 7:
            raise ProgramError(f"micro-op row needs 7 fields, got {row!r}")
        op, ab, abyte, bb, bbyte, dst, width = row[:7]
        b_width = row[7] if len(row) > 7 else None
        skip = bool(row[8]) if len(row) > 8 else False
        return cls(str(op), str(ab), int(abyte), str(bb), int(bbyte), int(dst), int(width),
                   None if b_width is None else int(b_width), skip)

    def to_row(self) -> list:
        return [self.op, self.a_bank, self.a_byte, self.b_bank, self.b_byte, self.dst,
                self.width, self.src_b_width, self.skip_first]


@dataclass
class MicroOpProgram:
    ops: List[MicroOp] = field(default_factory=list)
    # accumulator name -> (dst byte, width), filled by feature_program()
    layout: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    features: List[int] = field(default_factory=list)

    def validate(self) -> "MicroOpProgram":
        used = set()
        for op in self.ops:
            if op.op not in OPS:
                raise ProgramError(f"unknown micro-op {op.op!r}")
            if not 1 <= op.width <= 4 or not 1 <= op.src_b_width <= op.width:
                raise ProgramError(f"bad lane width in {op}")
            for bank, byte, w in ((op.a_bank, op.a_byte, op.width), (op.b_bank, op.b_byte, op.src_b_width)):
                limit = config.META_BYTES if bank == META else config.WORD_BYTES
                if bank not in (META, HIST) or byte < 0 or byte + w > limit:
                    raise ProgramError(f"source {bank}${byte} (w={w}) out of range in {op}")
            lanes = set(range(op.dst, op.dst + op.width))
            if op.dst < 0 or op.dst + op.width > config.WORD_BYTES:
                raise CapacityExceeded(f"lane {op.dst}+{op.width} exceeds the 16-byte output word")
            if lanes & used:
                raise ProgramError(f"output bytes {sorted(lanes & used)} written twice")
            used |= lanes
        if sum(op.width for op in self.ops) > config.WORD_BYTES:
            raise CapacityExceeded("program needs more than 16 ALU lanes")
        return self

    def rows(self) -> List[list]:
        return [op.to_row() for op in self.ops]

    @classmethod
    def from_rows(cls, rows) -> "MicroOpProgram":
        ops = [MicroOp.from_row(r) for r in rows]
        if len(ops) > config.WORD_BYTES:
            raise CapacityExceeded(f"{len(ops)} micro-ops for 16 lanes")
        return cls(ops).validate()


def _read(reg: np.ndarray, byte: int, width: int) -> int:
    return int.from_bytes(reg[byte:byte + width].tobytes(), "little")


def _identity(op: str, width: int) -> int:
    return (1 << (8 * width)) - 1 if op == "min" else 0


def alu_cluster_step(prog: MicroOpProgram, meta: np.ndarray, hist: np.ndarray,
                     new_flow: bool = False) -> np.ndarray:
    """Apply every lane of ``prog``; saturating unsigned arithmetic per lane width.

    On the first packet of a flow the history operand of each lane reads as
    that lane's identity (0, or all-ones for ``min``) because the stored word
    belongs to a previous occupant. Lanes flagged ``skip_first`` keep their
    identity value on that packet. Unwritten output bytes pass history through.
    """
    meta = np.asarray(meta, dtype=np.uint8)
    hist = np.asarray(hist, dtype=np.uint8)
    out = np.zeros(config.WORD_BYTES, dtype=np.uint8) if new_flow else hist.copy()
    for op in prog.ops:
        w = op.width
        top = (1 << (8 * w)) - 1

        def operand(bank, byte, width):
            if bank == HIST:
                return _identity(op.op, w) if new_flow else _read(hist, byte, width)
            return _read(meta, byte, width)

        if new_flow and op.skip_first:
            v = _identity(op.op, w)
        else:
            a = operand(op.a_bank, op.a_byte, w)
            b = operand(op.b_bank, op.b_byte, op.src_b_width)
            if op.op == "add":
                v = min(a + b, top)
            elif op.op == "sub":
                v = max(a - b, 0)
            elif op.op == "max":
                v = max(a, b)
            elif op.op == "min":
                v = min(a, b)
            else:
                v = b
        out[op.dst:op.dst + w] = np.frombuffer(v.to_bytes(w, "little"), dtype=np.uint8)
    return out


# accumulator name -> (op, meta byte, lane width, source width, skip_first)
ACCUMULATORS = {
    "sum_size": ("add", M_SIZE, 4, 2, False),
    "sum_intv": ("add", M_INTV, 4, 4, False),
    "max_size": ("max", M_SIZE, 2, 2, False),
    "min_size": ("min", M_SIZE, 2, 2, False),
    "max_intv": ("max", M_INTV, 4, 4, False),
    "min_intv": ("min", M_INTV, 4, 4, True),
    "count": ("add", M_ONE, 2, 1, False),
    "protocol": ("wr", M_PROTO, 1, 1, False),
    "last_flags": ("wr", M_FLAGS, 1, 1, False),
}

# whole-feature-set number -> accumulators it needs
FEATURE_ACCUMULATORS = {
    6: ("sum_size",),
    8: ("protocol",),
    9: ("sum_intv",),
    11: ("max_size",),
    12: ("min_size",),
    13: ("sum_size", "count"),
    19: ("max_intv",),
    20: ("min_intv",),
    21: ("sum_intv", "count"),
    28: ("last_flags",),
    36: ("count",),
}


def feature_program(feature_ids: Sequence[int]) -> MicroOpProgram:
    """Compile whole-feature-set numbers into a lane program.

    Accumulators shared between features (e.g. the packet count behind both
    mean length and total packets) are allocated once. Means are divided out
    at readout by the controller.
    """
    names: List[str] = []
    for fid in feature_ids:
        if fid not in FEATURE_ACCUMULATORS:
            raise ProgramError(f"feature {fid} is not derivable by the ALU cluster")
        for n in FEATURE_ACCUMULATORS[fid]:
            if n not in names:
                names.append(n)
    need = sum(ACCUMULATORS[n][2] for n in names)
    if need > config.WORD_BYTES:
        raise CapacityExceeded(f"features {list(feature_ids)} need {need} bytes > 16")
    ops, layout, dst = [], {}, 0
    for n in names:
        op, mbyte, w, bw, skip = ACCUMULATORS[n]
        ops.append(MicroOp(op, HIST, dst, META, mbyte, dst, w, bw, skip))
        layout[n] = (dst, w)
        dst += w
    return MicroOpProgram(ops, layout, list(feature_ids)).validate()


def read_accumulators(prog: MicroOpProgram, word) -> Dict[str, int]:
    word = np.asarray(word, dtype=np.uint8)
    return {n: _read(word, d, w) for n, (d, w) in prog.layout.items()}


# ---------------------------------------------------------------------------
# tracker
# ---------------------------------------------------------------------------


@dataclass
class ExtractorConfig:
    table_depth: int = config.FLOW_TABLE_DEPTH
    threshold: int = 20
    granularity: str = "flow"  # "flow" | "packet"
    time_unit_ns: int = 1000
    capture: str = "none"  # none | interval_vector | size_vector | payload
    capture_unit_ns: int = 8000
    payload_bytes: int = config.PAYLOAD_BYTES
    fifo_capacity: Optional[int] = None
    ring_words: int = 256
    strict_collisions: bool = False

    def __post_init__(self):
        if self.granularity not in ("flow", "packet"):
            raise ConfigError(f"granularity {self.granularity!r}")
        if self.granularity == "packet":
            self.threshold = 1
        if self.threshold < 1:
            raise ConfigError("flow threshold must be >= 1")
        if self.table_depth < 1 or self.table_depth & (self.table_depth - 1):
            raise ConfigError("table_depth must be a power of two")
        if self.capture not in ("none", "interval_vector", "size_vector", "payload"):
            raise ConfigError(f"capture mode {self.capture!r}")

    @property
    def capture_words(self) -> int:
        if self.capture in ("interval_vector", "size_vector"):
            return -(-self.threshold // config.WORD_BYTES)
        if self.capture == "payload":
            return self.threshold
        return 0

    @property
    def words_per_flow(self) -> int:
        return 1 + self.capture_words

    @property
    def capacity(self) -> int:
        return self.fifo_capacity or self.table_depth


@dataclass
class ExtractorEvent:
    kind: str
    slot: int
    tuple: FiveTuple
    time_ns: int = 0
    frozen: bool = False


@dataclass
class ReadyEntry:
    slot: int
    address: int  # feature-memory word index of the entry's first word
    tuple: FiveTuple
    time_ns: int
    packet: bool = False


class Extractor:
    """Flow tracker + ALU cluster, stepped one packet at a time."""

    def __init__(self, cfg: ExtractorConfig, program: MicroOpProgram, fabric: Fabric,
                 packet_encoder=None):
        self.cfg = cfg
        self.program = program.validate()
        self.fabric = fabric
        self.fmem = fabric[FEATURE]
        flow_words = cfg.table_depth * cfg.words_per_flow
        ring = cfg.ring_words if cfg.granularity == "packet" else 0
        if flow_words + ring > self.fmem.depth:
            raise ConfigError(f"{cfg.table_depth} slots x {cfg.words_per_flow} words + ring "
                              f"{ring} exceed feature memory depth {self.fmem.depth}")
        self.ring_base = flow_words
        self.packet_encoder = packet_encoder
        n = cfg.table_depth
        self.pkt_count = np.zeros(n, dtype=np.int64)
        self.last_ts = np.zeros(n, dtype=np.int64)
        self.orientation = np.zeros(n, dtype=np.uint8)
        self.frozen = np.zeros(n, dtype=bool)
        self.tags: List[Optional[FiveTuple]] = [None] * n
        self.freeze_digest: Dict[int, bytes] = {}
        self.ready: deque = deque()
        self.inflight: deque = deque()
        self._ring_next = 0
        self._ring_used = 0
        self.last_slot: Optional[int] = None
        self.cycles = config.EXTRACTOR_STAGES - 1
        self.stats = dict(packets=0, new_flows=0, hits=0, ready=0, collisions=0,
                          recycled=0, frozen_hits=0, occupancy=0, occupancy_peak=0)

    # -- helpers ------------------------------------------------------------

    def slot_of(self, tup: FiveTuple) -> int:
        return hash_tuple(tup, self.cfg.table_depth)

    def base_word(self, slot: int) -> int:
        return slot * self.cfg.words_per_flow

    def feature_word(self, slot: int) -> np.ndarray:
        return self.fmem.data[self.base_word(slot)].copy()

    def occupancy(self) -> int:
        return int(np.count_nonzero(self.pkt_count))

    def make_meta(self, hdr: ParsedHeader, direction: int, interval_units: int) -> np.ndarray:
        meta = np.zeros(config.META_BYTES, dtype=np.uint8)
        meta[0:2] = np.frombuffer(min(hdr.pkt_size, 0xFFFF).to_bytes(2, "little"), dtype=np.uint8)
        meta[M_FLAGS] = hdr.flags & 0xFF
        meta[M_DIR] = direction
        meta[M_PROTO] = hdr.tuple.protocol
        meta[M_ONE] = 1
        meta[M_PAYLEN] = min(hdr.payload_len, 255)
        meta[7:11] = np.frombuffer(min(interval_units, 0xFFFFFFFF).to_bytes(4, "little"), dtype=np.uint8)
        digest = hash_tuple_digest(hdr.tuple) & 0xFFFF
        meta[11:13] = np.frombuffer(digest.to_bytes(2, "little"), dtype=np.uint8)
        return meta

    def _issue_cost(self, slot: int) -> int:
        # read-after-write hazard on the slot's state when the same flow repeats
        cost = config.EXTRACTOR_STAGES if slot == self.last_slot else 1
        self.last_slot = slot
        self.cycles += cost
        return cost

    def _capture(self, slot: int, index: int, hdr: ParsedHeader, interval_ns: int) -> None:
        cfg = self.cfg
        base = self.base_word(slot) + 1
        flat = self.fmem.data.reshape(-1)
        if cfg.capture == "payload":
            row = np.frombuffer(hdr.payload_prefix[:cfg.payload_bytes].ljust(config.WORD_BYTES, b"\0"),
                                dtype=np.uint8) ^ np.uint8(0x80)
            self.fmem.data[base + index] = row
            self.fmem.word_writes += 1
        elif cfg.capture in ("interval_vector", "size_vector"):
            if cfg.capture == "interval_vector":
                v = min(interval_ns // cfg.capture_unit_ns, 127)
            else:
                v = min(hdr.pkt_size >> 4, 127)
            flat[base * config.WORD_BYTES + index] = v
            self.fmem.word_writes += 1

    # -- main step ----------------------------------------------------------

    def ingest(self, hdr: ParsedHeader) -> Tuple[ExtractorEvent, int]:
        cfg = self.cfg
        tup = hdr.tuple
        slot = self.slot_of(tup)
        cost = self._issue_cost(slot)
        self.stats["packets"] += 1
        count = int(self.pkt_count[slot])
        new_flow = count == 0
        if not new_flow and self.tags[slot].key_bytes() != tup.key_bytes():
            self.stats["collisions"] += 1
            if cfg.strict_collisions:
                raise Collision(f"slot {slot} held by {self.tags[slot]}, dropping {tup}")
            return ExtractorEvent(COLLISION, slot, tup, hdr.arrival_ns), cost

        if new_flow:
            self.tags[slot] = tup.canonical()
            self.orientation[slot] = hdr.direction
            interval_ns = 0
            self.stats["new_flows"] += 1
            occ = self.stats["occupancy"] = self.stats["occupancy"] + 1
            self.stats["occupancy_peak"] = max(self.stats["occupancy_peak"], occ)
        else:
            interval_ns = max(hdr.arrival_ns - int(self.last_ts[slot]), 0)
            self.stats["hits"] += 1
        direction = int(hdr.direction != self.orientation[slot])
        self.pkt_count[slot] = count + 1
        self.last_ts[slot] = hdr.arrival_ns

        if self.frozen[slot]:
            self.stats["frozen_hits"] += 1
            return ExtractorEvent(HIT, slot, tup, hdr.arrival_ns, frozen=True), cost

        meta = self.make_meta(hdr, direction, interval_ns // cfg.time_unit_ns)
        widx = self.base_word(slot)
        hist = self.fmem.data[widx].copy()
        self.fmem.word_reads += 1
        word = alu_cluster_step(self.program, meta, hist, new_flow=new_flow)
        self.fmem.data[widx] = word
        self.fmem.word_writes += 1
        if count < cfg.threshold and cfg.granularity == "flow":
            self._capture(slot, count, hdr, interval_ns)

        if cfg.granularity == "packet":
            return self._packet_ready(slot, hdr, meta, cost, new_flow)

        if count + 1 == cfg.threshold:
            if len(self.ready) >= cfg.capacity:
                raise FifoFull("ready FIFO at capacity")
            self.frozen[slot] = True
            self.freeze_digest[slot] = self._slot_image(slot)
            entry = ReadyEntry(slot, widx, tup, hdr.arrival_ns)
            self.ready.append(entry)
            self.inflight.append(slot)
            self.stats["ready"] += 1
            return ExtractorEvent(READY, slot, tup, hdr.arrival_ns), cost
        kind = NEW_FLOW if new_flow else HIT
        return ExtractorEvent(kind, slot, tup, hdr.arrival_ns), cost

    def _packet_ready(self, slot, hdr, meta, cost, new_flow):
        if self._ring_used >= min(self.cfg.ring_words, self.cfg.capacity):
            raise FifoFull("packet ring full")
        idx = self.ring_base + self._ring_next
        self._ring_next = (self._ring_next + 1) % self.cfg.ring_words
        self._ring_used += 1
        vec = self.packet_encoder(hdr, meta) if self.packet_encoder else meta[:8].view(np.int8)
        word = np.zeros(config.WORD_BYTES, dtype=np.uint8)
        v = np.asarray(vec, dtype=np.int8).view(np.uint8)
        word[:v.size] = v
        self.fmem.data[idx] = word
        self.fmem.word_writes += 1
        self.ready.append(ReadyEntry(slot, idx, hdr.tuple, hdr.arrival_ns, packet=True))
        self.inflight.append(idx)
        self.stats["ready"] += 1
        return ExtractorEvent(NEW_FLOW if new_flow else PACKET, slot, hdr.tuple, hdr.arrival_ns), cost

    def _slot_image(self, slot: int) -> bytes:
        b = self.base_word(slot)
        return self.fmem.data[b:b + self.cfg.words_per_flow].tobytes()

    # -- FIFOs --------------------------------------------------------------

    def pop_ready(self) -> Optional[ReadyEntry]:
        return self.ready.popleft() if self.ready else None

    def recycle(self, fin_slot: int) -> ExtractorEvent:
        """Free the in-flight head; ``fin_slot`` must match it."""
        if not self.inflight or self.inflight[0] != fin_slot:
            head = self.inflight[0] if self.inflight else None
            raise OutOfOrderFin(f"FIN for {fin_slot}, in-flight head is {head}")
        self.inflight.popleft()
        if self.cfg.granularity == "packet":
            self._ring_used -= 1
            self.stats["recycled"] += 1
            return ExtractorEvent(RECYCLED, fin_slot, None)
        if self.freeze_digest.pop(fin_slot) != self._slot_image(fin_slot):
            raise AssertionError(f"frozen slot {fin_slot} changed before FIN")
        tup = self.tags[fin_slot]
        self.pkt_count[fin_slot] = 0
        self.frozen[fin_slot] = False
        self.tags[fin_slot] = None
        if self.last_slot == fin_slot:
            self.last_slot = None
        self.stats["recycled"] += 1
        self.stats["occupancy"] -= 1
        return ExtractorEvent(RECYCLED, fin_slot, tup)

    def audit(self) -> None:
        """Check slot-free <=> count 0 and occupancy bookkeeping."""
        occupied = self.pkt_count != 0
        for s in np.flatnonzero(occupied):
            if self.tags[s] is None:
                raise AssertionError(f"slot {s} counted but untagged")
        for s in np.flatnonzero(~occupied):
            if self.tags[s] is not None or self.frozen[s]:
                raise AssertionError(f"free slot {s} still tagged/frozen")
        if self.cfg.granularity == "flow":
            expect = self.stats["new_flows"] - self.stats["recycled"]
            if expect != int(occupied.sum()) or expect != self.stats["occupancy"]:
                raise AssertionError("occupancy bookkeeping drifted")

    def modeled_mpps(self, hz: float = config.EXTRACTOR_HZ) -> float:
        if self.stats["packets"] == 0:
            return 0.0
        return self.stats["packets"] * hz / self.cycles / 1e6

    def capture_array(self, slot: int) -> np.ndarray:
        """Captured vector/payload of a slot as int8 (``(threshold,)`` or ``(threshold, bytes)``)."""
        cfg = self.cfg
        b = self.base_word(slot) + 1
        if cfg.capture == "payload":
            return self.fmem.data[b:b + cfg.threshold, :cfg.payload_bytes].view(np.int8).copy()
        flat = self.fmem.data.reshape(-1)
        start = b * config.WORD_BYTES
        return flat[start:start + cfg.threshold].view(np.int8).copy()
