"""Full-system driver: extractor at its own clock, engines at theirs.

Packets are ingested in arrival order. Whenever a batch of ready samples is
complete, its front jobs are placed on the compute timeline and executed,
followed by the back jobs of the previous batch. FIN events carry ns
timestamps and are applied to the extractor before any later packet, so
slot recycling is seen in simulated-time order.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import config
from .arype import AryPE, ArrayConfig
from .compiler.schedule import CompileConfig, Job, Program, Schedule, Timeline, schedule
from .controller import Controller, divide_round_half_up
from .extractor import COLLISION, M_DIR, Extractor, ExtractorConfig, feature_program, read_accumulators
from .fabric import FEATURE, Fabric
from .traffic import ParsedHeader
from .vpe import VPE, VliwWord


def packet_features(hdr: ParsedHeader, meta: np.ndarray) -> List[int]:
    """Six int8 features of one packet for the per-packet classifier."""
    intv = int.from_bytes(bytes(meta[7:11]), "little")
    return [min(hdr.pkt_size >> 4, 127), int(meta[M_DIR]), hdr.flags & 0x7F,
            hdr.tuple.protocol & 0x7F, min(hdr.payload_len >> 4, 127), min(intv, 127)]


# derived features computed at readout: name -> (numerator, denominator accumulator)
MEANS = {13: ("mean_size", "sum_size", "count"), 21: ("mean_intv", "sum_intv", "count")}


def readout_features(prog, word) -> Dict[str, int]:
    """Accumulators of a frozen feature word plus the configured means."""
    acc = read_accumulators(prog, word)
    out = dict(acc)
    for fid in prog.features:
        if fid in MEANS:
            name, num, den = MEANS[fid]
            out[name] = divide_round_half_up(acc[num], acc[den]) if acc[den] else 0
    return out


# ---------------------------------------------------------------------------
# functional machine
# ---------------------------------------------------------------------------


class Machine:
    """Executes compiled jobs on the engine models against one fabric."""

    def __init__(self, program: Program, model, fabric: Fabric, controller: Controller, k: int,
                 cycle_level: bool = True):
        self.program = program
        self.model = model
        self.fabric = fabric
        self.controller = controller
        self.vpe = VPE(fabric)
        self.arype = AryPE(fabric, ArrayConfig(k), cycle_level=cycle_level)
        controller.initialize(program, fabric, self.vpe, self.arype)
        self._last_writer: Dict[Tuple[int, int], dict] = {}

    def last_writers(self, parity: int, n: int) -> dict:
        """Job index -> boundaries it completes, counting only jobs of the first n samples."""
        key = (parity, n)
        if key not in self._last_writer:
            lw = {}
            for i, j in enumerate(self.program.jobs[parity]):
                if j.sample < n:
                    for b in j.outputs:
                        lw[b] = i
            self._last_writer[key] = {i: [bd for bd in self.program.boundaries if lw.get(bd.buffer) == i]
                                      for i in set(lw.values())}
        return self._last_writer[key]

    def execute(self, job: Job, addrs: Sequence[Tuple[str, int]]) -> None:
        if job.engine == "seq":
            k = self.program.kernels[job.kernel]
            if job.sample >= 0:
                a = addrs[job.sample]
                self.vpe.fetch_address = lambda a=a: a
            self.vpe.run(k.words, k.pbase, dict(job.adrf))
        elif job.engine == "vu":
            self.vpe.execute_vliw(VliwWord(vu=job.tile), 0)
        elif job.engine == "arype":
            self.arype.run(job.instrs)
        elif job.engine == "ctrl":
            self.controller.run_softmax(self.fabric, job.ctrl, self.model.layers[job.ctrl[1]])
        else:
            raise ValueError(f"unknown engine {job.engine!r}")

    def snapshot(self, parity: int, idx: int, n: int, into: Dict[str, list]) -> None:
        for bd in self.last_writers(parity, n).get(idx, ()):
            into.setdefault(bd.layer, []).extend(self.read(bd, parity, s) for s in range(n))

    def read(self, bd, parity: int, sample: int) -> np.ndarray:
        bank, base = self.program.buffer_at(bd.buffer, parity)
        rows, cols = bd.shape
        isz = 4 if bd.dtype == "int32" else 1
        start = base + sample * bd.stride
        raw = self.fabric[bank].load_bytes(start, (rows - 1) * bd.row_bytes + cols * isz)
        flat = np.zeros(rows * bd.row_bytes, dtype=np.uint8)
        flat[:raw.size] = raw
        out = flat.reshape(rows, bd.row_bytes)[:, :cols * isz]
        return np.ascontiguousarray(out).view(np.int32 if isz == 4 else np.int8).reshape(rows, cols).copy()


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------


@dataclass
class SystemConfig:
    extractor: ExtractorConfig = field(default_factory=ExtractorConfig)
    feature_ids: Tuple[int, ...] = (13, 21, 36)
    compile: CompileConfig = field(default_factory=CompileConfig)
    extractor_hz: float = config.EXTRACTOR_HZ
    compute_hz: float = config.COMPUTE_HZ
    ctrl_overhead: int = 0
    cycle_level: bool = True
    trace: bool = False  # snapshot every layer boundary (for oracle comparison)


@dataclass
class _Sample:
    entry: object
    ready_ns: float
    last_ns: int


@dataclass
class _Batch:
    index: int
    parity: int
    samples: List[_Sample]
    t_form: int
    front_end: int = 0
    final_end: Dict[int, int] = field(default_factory=dict)


@dataclass
class SimResult:
    records: list
    latency_ns: List[float]  # FIN minus ready, per sample
    e2e_ns: List[float]  # FIN minus triggering packet arrival
    samples: int
    batches: int
    makespan_cycles: int
    timeline: Timeline
    extractor_stats: dict
    extractor_cycles: int
    extractor_mpps: float
    vpe_stats: dict
    arype_counts: dict
    inputs: List[np.ndarray]
    boundaries: Dict[str, list]
    frozen_words: List[Tuple[bytes, bytes]]  # (tuple key, feature word) per ready flow
    dropped: set  # tuple keys that lost at least one packet to a collision


class System:
    def __init__(self, model, cfg: SystemConfig, sched: Optional[Schedule] = None):
        self.model = model
        self.cfg = cfg
        self.sched = sched or schedule(model, cfg.compile)
        self.program = self.sched.program()
        self.fabric = Fabric()
        self.controller = Controller(cfg.ctrl_overhead, recycle=self._recycle)
        self.machine = Machine(self.program, model, self.fabric, self.controller, cfg.compile.k,
                               cfg.cycle_level)
        self.fprog = feature_program(cfg.feature_ids)
        packet = cfg.extractor.granularity == "packet"
        self.extractor = Extractor(cfg.extractor, self.fprog, self.fabric,
                                   packet_features if packet else None)
        self.timeline = Timeline(serialize=not cfg.compile.collab, ctrl_cycles=cfg.ctrl_overhead)
        self.fins: deque = deque()
        self.records = []
        self.latency: List[float] = []
        self.e2e: List[float] = []
        self.inputs: List[np.ndarray] = []
        self.frozen_words: List[Tuple[bytes, bytes]] = []
        self.dropped: set = set()
        self.boundaries: Dict[str, list] = {}
        self.batches = 0
        self.pending_back: Optional[_Batch] = None
        self.makespan = 0

    # -- clock helpers ----------------------------------------------------------

    def cyc(self, ns: float) -> int:
        return int(math.ceil(ns * self.cfg.compute_hz / 1e9 - 1e-9))

    def ns(self, cycles: int) -> float:
        return cycles * 1e9 / self.cfg.compute_hz

    # -- event handling ---------------------------------------------------------

    def _recycle(self, key: int) -> None:
        self.extractor.recycle(key)

    def _drain_fins(self, t_ns: float) -> None:
        while self.fins and self.fins[0][0] <= t_ns:
            t, s, addr, scores, feats = self.fins.popleft()
            key = s.entry.address if s.entry.packet else s.entry.slot
            rec = self.controller.on_fin(s.entry.tuple, key, addr, scores, t)
            rec.features = feats
            self.records.append(rec)
            self.latency.append(t - s.ready_ns)
            self.e2e.append(t - s.last_ns)

    def _advance(self, t_ns: float) -> None:
        b = self.pending_back
        if b is not None and t_ns >= self.ns(b.front_end):
            self._emit_back()
        self._drain_fins(t_ns)

    def _run(self, batch: _Batch, jobs: Sequence[Job], offset: int, release_sample: bool) -> None:
        n = len(batch.samples)
        addrs = [(FEATURE, s.entry.address * config.WORD_BYTES) for s in batch.samples]
        for i, job in enumerate(jobs):
            if job.sample >= n:
                continue
            if release_sample and job.sample >= 0 and job.engine == "seq":
                rel = self.cyc(batch.samples[job.sample].ready_ns)
            else:
                rel = batch.t_form
            _, end = self.timeline.place(job, rel)
            self.makespan = max(self.makespan, end)
            if job.phase == 0:
                batch.front_end = max(batch.front_end, end)
            if job.final:
                batch.final_end[job.sample] = max(batch.final_end.get(job.sample, 0), end)
            self.machine.execute(job, addrs)
            if self.cfg.trace:
                self.machine.snapshot(batch.parity, offset + i, n, self.boundaries)

    def _complete(self, batch: _Batch) -> None:
        rd = self.program.readout
        allend = batch.final_end.get(-1, 0)
        for s_idx, s in enumerate(batch.samples):
            end = max(allend, batch.final_end.get(s_idx, 0))
            t = self.ns(end) + self.ns(self.cfg.ctrl_overhead)
            vec = self.machine.read(rd, batch.parity, s_idx).reshape(-1)
            bank, base = self.program.buffer_at(rd.buffer, batch.parity)
            addr = (bank, base + s_idx * rd.stride)
            self.controller.mark_written(addr)
            feats = None
            if not s.entry.packet:
                word = self.extractor.feature_word(s.entry.slot)
                self.frozen_words.append((s.entry.tuple.key_bytes(), word.tobytes()))
                feats = readout_features(self.fprog, word)
            self.fins.append((t, s, addr, vec, feats))

    def _emit_back(self) -> None:
        b = self.pending_back
        self.pending_back = None
        jobs = self.program.jobs[b.parity]
        self._run(b, jobs[self.program.split:], self.program.split, False)
        self._complete(b)

    def _form(self, samples: List[_Sample]) -> None:
        prog = self.program
        parity = self.batches % 2
        t_form = self.cyc(max(s.ready_ns for s in samples))
        batch = _Batch(self.batches, parity, samples, t_form)
        self.controller.start(self.ns(t_form), self.batches)
        for s in samples:
            self.inputs.append(self._input_of(s))
        jobs = prog.jobs[parity]
        self._run(batch, jobs[:prog.split], 0, True)
        if self.pending_back is not None:
            self._emit_back()
        if prog.split < len(jobs):
            self.pending_back = batch
        else:
            self._complete(batch)
        self.batches += 1

    def _input_of(self, s: _Sample) -> np.ndarray:
        """The model input bytes of a sample as held in feature memory."""
        rows, cols = self.model.input_shape
        off = 0 if s.entry.packet else config.WORD_BYTES
        if self.cfg.extractor.capture == "payload":
            base = (s.entry.address + 1) * config.WORD_BYTES
            raw = self.fabric[FEATURE].load_bytes(base, rows * config.WORD_BYTES)
            return raw.view(np.int8).reshape(rows, config.WORD_BYTES)[:, :cols].copy()
        raw = self.fabric[FEATURE].load_bytes(s.entry.address * config.WORD_BYTES + off, rows * cols)
        return raw.view(np.int8).reshape(rows, cols).copy()

    # -- main loop --------------------------------------------------------------

    def run(self, headers: Sequence[ParsedHeader]) -> SimResult:
        period = 1e9 / self.cfg.extractor_hz
        stages = config.EXTRACTOR_STAGES
        B = self.program.batch
        ext_free = 0.0
        pending: List[_Sample] = []
        for hdr in headers:
            t0 = max(float(hdr.arrival_ns), ext_free)
            self._advance(t0)
            ev, cost = self.extractor.ingest(hdr)
            if ev.kind == COLLISION:
                self.dropped.add(hdr.tuple.key_bytes())
            ext_free = t0 + cost * period
            ready = t0 + stages * period
            while True:
                e = self.extractor.pop_ready()
                if e is None:
                    break
                pending.append(_Sample(e, ready, hdr.arrival_ns))
                if len(pending) == B:
                    self._form(pending)
                    pending = []
        if pending:
            self._form(pending)
        if self.pending_back is not None:
            self._emit_back()
        self._drain_fins(math.inf)
        return SimResult(
            records=self.records, latency_ns=self.latency, e2e_ns=self.e2e,
            samples=len(self.records), batches=self.batches, makespan_cycles=self.makespan,
            timeline=self.timeline, extractor_stats=dict(self.extractor.stats),
            extractor_cycles=self.extractor.cycles, extractor_mpps=self.extractor.modeled_mpps(
                self.cfg.extractor_hz),
            vpe_stats=dict(self.machine.vpe.stats.counts), arype_counts=dict(self.machine.arype.counts),
            inputs=self.inputs, boundaries=self.boundaries, frozen_words=self.frozen_words,
            dropped=self.dropped)


# ---------------------------------------------------------------------------
# saturated throughput
# ---------------------------------------------------------------------------


@dataclass
class Saturated:
    samples: int
    batches: int
    makespan_cycles: int
    throughput: float  # samples per second
    arype_utilization: float
    busy: Dict[str, int]


def saturated(sched: Schedule, samples: int, compute_hz: float = config.COMPUTE_HZ,
              ctrl_overhead: int = 0) -> Saturated:
    """Engine-bound throughput with every sample ready at time zero."""
    prog = sched.program()
    B = prog.batch
    tl = Timeline(serialize=not sched.cfg.collab, ctrl_cycles=ctrl_overhead)
    nb = -(-samples // B)
    end = 0
    prev = None
    for n in range(nb):
        valid = min(B, samples - n * B)
        jobs = prog.jobs[n % 2]
        for j in jobs[:prog.split]:
            if j.sample < valid:
                end = max(end, tl.place(j)[1])
        if prev is not None:
            for j in prev[0][prog.split:]:
                if j.sample < prev[1]:
                    end = max(end, tl.place(j)[1])
        prev = (jobs, valid)
    if prev is not None:
        for j in prev[0][prog.split:]:
            if j.sample < prev[1]:
                end = max(end, tl.place(j)[1])
    thr = samples * compute_hz / end if end else 0.0
    return Saturated(samples, nb, end, thr, tl.arype_utilization(sched.cfg.k), dict(tl.busy))
