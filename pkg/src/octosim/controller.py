"""Control domain stand-in: initialisation, FIN handling, softmax and readout."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .compiler.ir import EXP_MIN, EXP_STEP_BITS, SOFTMAX_FRAC_BITS
from .errors import IoError, StaleResult
from .traffic import FiveTuple


@dataclass
class CtrlRegisterFile:
    start: bool = False
    fin: bool = False
    result: Optional[Tuple[str, int]] = None
    config: Dict[str, int] = field(default_factory=dict)


@dataclass
class DecisionRecord:
    tuple: Optional[FiveTuple]
    verdict: int
    scores: List[int]
    timestamp_ns: float
    features: Optional[Dict[str, int]] = None  # readout of the frozen feature word

    def to_dict(self) -> dict:
        t = self.tuple
        d = {
            "tuple": None if t is None else [t.src_ip, t.dst_ip, t.src_port, t.dst_port, t.protocol],
            "verdict": self.verdict,
            "scores": [int(s) for s in self.scores],
            "timestamp_ns": round(float(self.timestamp_ns), 3),
        }
        if self.features is not None:
            d["features"] = {k: int(v) for k, v in self.features.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def argmax_low(scores: Sequence[int]) -> int:
    """Index of the largest score; the lowest index wins ties."""
    if len(scores) == 0:
        raise ValueError("empty score vector")
    return int(np.argmax(np.asarray(scores, dtype=np.int64)))


def divide_round_half_up(num: int, den: int) -> int:
    """``floor(num/den + 1/2)`` in integers (halves go towards +inf)."""
    if den <= 0:
        raise ValueError("divisor must be positive")
    return (2 * int(num) + int(den)) // (2 * int(den))


def _exp_table() -> np.ndarray:
    t = np.arange(EXP_MIN, 1, dtype=np.float64)
    return np.rint(np.exp(t / (1 << EXP_STEP_BITS)) * 65536.0).astype(np.int64)


EXP_LUT = _exp_table()  # index t - EXP_MIN for grid points t in [EXP_MIN, 0]


def softmax_fixedpoint(scores, mult: int, shift: int) -> np.ndarray:
    """Q15 probabilities of an int32 score vector; the result sums to exactly 2**15.

    ``mult * 2**-shift`` converts one score unit to steps of the 1/32
    exponent grid; distances are rounded half-to-even, looked up in the exp
    table, normalised by integer division, and the shortfall is handed out
    by largest remainder (lowest index first among equal remainders).
    """
    s = [int(v) for v in np.asarray(scores).reshape(-1)]
    if not s:
        raise ValueError("softmax of an empty vector")
    top = max(s)
    grid = []
    for v in s:
        p = (v - top) * mult
        q, r = divmod(p, 1 << shift)  # floor quotient, remainder in [0, 2**shift)
        half = 1 << (shift - 1) if shift else 0
        if shift and (r > half or (r == half and q & 1)):
            q += 1
        grid.append(q)
    g = np.asarray(grid, dtype=np.int64)
    e = np.where(g < EXP_MIN, 0, EXP_LUT[np.clip(g - EXP_MIN, 0, EXP_LUT.size - 1)])
    one = 1 << SOFTMAX_FRAC_BITS
    total = int(e.sum())
    num = e * one
    base, rem = num // total, num % total
    short = one - int(base.sum())
    order = np.lexsort((np.arange(e.size), -rem))
    base[order[:short]] += 1
    return base


def softmax_reference(scores, scale: float) -> np.ndarray:
    """Double-precision softmax of ``scores * scale``, for tolerance checks."""
    x = np.asarray(scores, dtype=np.float64) * scale
    x = np.exp(x - x.max())
    return x / x.sum()


class Controller:
    """Loads images, runs controller-side kernels and turns FINs into decisions."""

    def __init__(self, overhead_cycles: int = 0, recycle: Optional[Callable[[int], None]] = None):
        self.overhead_cycles = overhead_cycles
        self.recycle = recycle
        self.regs = CtrlRegisterFile()
        self.records: List[DecisionRecord] = []
        self.events: List[dict] = []
        self._written: Dict[Tuple[str, int], int] = {}
        self.model = None

    # -- lifecycle -------------------------------------------------------------

    def log(self, kind: str, t_ns: float, **detail) -> None:
        ev = {"event": kind, "t_ns": round(float(t_ns), 3)}
        ev.update(detail)
        self.events.append(ev)

    def initialize(self, program, fabric, vpe, arype) -> None:
        """Clear all state, then load both engines' caches from ``program``."""
        fabric.clear()
        vpe.reset_state()
        vpe.load(program.vpe_words, program.vpe_pcache, program.requants)
        arype.load([i for j in program.jobs[0] for i in j.instrs], program.arype_pcache, program.requants)
        self.records.clear()
        self._written.clear()
        self.regs = CtrlRegisterFile(start=True, config={"batch": program.batch})
        self.model = program.model
        self.log("init", 0.0, model=program.model, batch=program.batch)

    def start(self, t_ns: float, batch: int) -> None:
        self.regs.start = True
        self.log("start", t_ns, batch=batch)

    # -- results ---------------------------------------------------------------

    def mark_written(self, addr: Tuple[str, int]) -> None:
        self._written[addr] = self._written.get(addr, 0) + 1

    def on_fin(self, flow: Optional[FiveTuple], slot: int, result: Tuple[str, int], scores,
               t_ns: float) -> DecisionRecord:
        """Read the score vector at ``result``, decide, and recycle ``slot``."""
        if not self._written.get(result):
            raise StaleResult(f"FIN for slot {slot} but result region {result} was not written")
        self._written[result] -= 1
        self.regs.fin = True
        self.regs.result = result
        vec = [int(v) for v in np.asarray(scores).reshape(-1)]
        rec = DecisionRecord(flow, argmax_low(vec), vec, t_ns)
        self.records.append(rec)
        self.log("fin", t_ns, slot=slot, verdict=rec.verdict)
        if self.recycle is not None:
            self.recycle(slot)
        self.log("recycle", t_ns, slot=slot)
        self.regs.fin = False
        return rec

    # -- controller-side kernels ----------------------------------------------

    def run_softmax(self, fabric, spec, layer) -> None:
        """Softmax rows of one sample's score block into int8 probabilities."""
        _, _, (sbank, sbyte), (pbank, pbyte), seq, width, _ = spec
        S = fabric[sbank].load_bytes(sbyte, seq * width * 4).view(np.int32).reshape(seq, width)
        P = np.zeros((seq, width), dtype=np.int8)
        for r in range(seq):
            q15 = softmax_fixedpoint(S[r, :seq], layer.sm_mult, layer.sm_shift)
            P[r, :seq] = layer.p_rq.apply(q15)
        fabric[pbank].store_bytes(pbyte, P.view(np.uint8).reshape(-1))

    # -- output ----------------------------------------------------------------

    def write_records(self, path) -> Path:
        return _write_lines(path, (r.to_json() for r in self.records))

    def write_events(self, path) -> Path:
        return _write_lines(path, (json.dumps(e, sort_keys=True) for e in self.events))


def _write_lines(path, lines) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w") as fh:
            for line in lines:
                fh.write(line + "\n")
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return path
