"""VPE kernel generators.

Every kernel is a straight-line program run once per sample (packet or
flow). The controller binds address registers before start:

- ``a0``: filled by ``fa`` with the sample's feature-memory entry;
- ``a1``-``a3``: operand and result regions of this sample.

``d31`` is never written and serves as the zero operand for copies.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .. import config
from ..errors import CapacityError, UnsupportedLayer
from ..vpe import LANES, SUB, MemRef, MifOp, SimdOp, VliwWord, VuOp
from .bundler import bundle

ZERO_REG = 31
FEATURE_ROW = config.WORD_BYTES  # capture data starts one word after the entry


@dataclass
class Kernel:
    name: str
    words: List[VliwWord]
    stream: np.ndarray
    counts: Dict[str, int] = field(default_factory=dict)
    pbase: int = 0  # parameter-stream offset in the VPE pCache, set at layout time

    @property
    def cycles(self) -> int:
        from ..vpe import program_latency

        return program_latency(self.words)


def _finish(name: str, ops, params) -> Kernel:
    b = bundle(ops, params)
    counts: Dict[str, int] = {}
    for w in b.words:
        for f in w.fields():
            counts[f.kind] = counts.get(f.kind, 0) + 1
    return Kernel(name, b.words, b.stream, counts)


class _Pool:
    def __init__(self, regs):
        self.free = deque(regs)

    def get(self) -> int:
        if not self.free:
            raise CapacityError("kernel needs more data registers than dRf holds")
        return self.free.popleft()

    def put(self, *regs) -> None:
        self.free.extend(regs)


def prd_block(w: np.ndarray, c: int, g: int) -> np.ndarray:
    """Lane-major 8x8 block: ``P[j, i] = w[8c + i, 8g + j]`` zero-padded."""
    blk = np.zeros((LANES, LANES), dtype=np.int8)
    sub = w[c * LANES:(c + 1) * LANES, g * LANES:(g + 1) * LANES]
    blk[:sub.shape[1], :sub.shape[0]] = sub.T
    return blk.reshape(-1)


def prds_block(w: np.ndarray, g: int) -> np.ndarray:
    """Both sub-lanes carry the same (<= 4)-deep slice: ``P[j, h, i] = w[i, 8g + j]``."""
    blk = np.zeros((LANES, 2, SUB), dtype=np.int8)
    sub = w[:SUB, g * LANES:(g + 1) * LANES]
    for h in range(2):
        blk[:sub.shape[1], h, :sub.shape[0]] = sub.T
    return blk.reshape(-1)


# ---------------------------------------------------------------------------
# per-packet MLP
# ---------------------------------------------------------------------------


def dense_chain_kernel(layers, qindex: Callable[[object], Optional[int]], in_features: int,
                       name: str = "mlp") -> Kernel:
    """Fully connected layers chained in registers.

    The input row is read through ``a0`` (``fa``); the last layer's outputs
    go to ``@a1`` as int32 (raw scores) or int8 when it requantises, eight
    lanes per 32 or 8 bytes.
    """
    regs = _Pool(range(ZERO_REG))
    ops, prm = [MifOp("fa", 0)], [None]
    xs = []
    for c in range(-(-in_features // LANES)):
        r = regs.get()
        ops.append(MifOp("ld", MemRef(0, c * LANES), r))
        prm.append(None)
        xs.append(r)
    for li, layer in enumerate(layers):
        K, N = layer.w.shape
        kc, ng = -(-K // LANES), -(-N // LANES)
        last = li == len(layers) - 1
        q = qindex(layer.rq) if layer.rq is not None else None
        step = LANES * (1 if q is not None else 4)
        outs = []
        for g in range(ng):
            dst_mem = MemRef(1, g * step) if last else None
            if kc == 1:
                dst = dst_mem or regs.get()
                ops.append(SimdOp("prd", xs[0], dst, q))
                prm.append(prd_block(layer.w, 0, g))
            else:
                parts = []
                for c in range(kc):
                    t = regs.get()
                    ops.append(SimdOp("prd", xs[c], t))
                    prm.append(prd_block(layer.w, c, g))
                    parts.append(t)
                acc = parts[0]
                for c in range(1, kc):
                    final = c == kc - 1
                    dst = (dst_mem or regs.get()) if final else regs.get()
                    ops.append(VuOp("vadd", acc, parts[c], dst, q if final else None))
                    prm.append(None)
                    regs.put(acc, parts[c]) if c == 1 else regs.put(acc, parts[c])
                    acc = dst
            if not isinstance(dst, MemRef):
                outs.append(dst)
        regs.put(*xs)
        xs = outs
    return _finish(name, ops, prm)


# ---------------------------------------------------------------------------
# single-channel convolution (optionally fused with 2:1 max pooling)
# ---------------------------------------------------------------------------


def conv_kernel(layer, qindex, length: int, pool: bool, src_offset: int = FEATURE_ROW,
                from_fa: bool = True, name: str = "conv") -> Kernel:
    """Conv1D with one input channel and width <= 4 on the sub-lanes.

    Each ``ldw`` fetches the windows of two neighbouring outputs; a ``prds``
    produces eight channels of both. With ``pool`` the pair is reduced by
    ``vmax`` before the store, so only the pooled tensor reaches memory.
    Output rows go to ``@a1`` row-major int8.
    """
    s, oc = layer.kernel_size, layer.w.shape[1]
    if layer.in_channels != 1 or s > SUB or layer.stride != 1:
        raise UnsupportedLayer(f"{layer.name}: SIMDU conv needs ic=1, width<=4, stride 1")
    if layer.rq is None:
        raise UnsupportedLayer(f"{layer.name}: SIMDU conv output must be requantised")
    q = qindex(layer.rq)
    nwin = length + 2 * layer.padding - s + 1
    pairs = [(r, r + 1) for r in range(0, 24, 2)]
    pair_i = 0
    xregs = deque(range(24, ZERO_REG))
    ops, prm = [], []
    if from_fa:
        ops.append(MifOp("fa", 0))
        prm.append(None)
    for p in range(-(-nwin // 2)):
        x = xregs[0]
        xregs.rotate(-1)
        ops.append(MifOp("ldw", MemRef(0, src_offset), x, w=s, n=length, e=2 * p - layer.padding))
        prm.append(None)
        odd_tail = 2 * p + 1 >= nwin
        for g in range(-(-oc // LANES)):
            if pool:
                d = pairs[pair_i % len(pairs)][0]
                pair_i += 1
                ops.append(SimdOp("prds", x, d, q))
                prm.append(prds_block(layer.w, g))
                b = d if odd_tail else d + 1
                ops.append(VuOp("vmax", d, b, MemRef(1, p * oc + g * LANES), narrow=True))
                prm.append(None)
            else:
                ops.append(SimdOp("prds", x, MemRef(1, 2 * p * oc + g * LANES, oc), q))
                prm.append(prds_block(layer.w, g))
    return _finish(name, ops, prm)


# ---------------------------------------------------------------------------
# staging copy: feature memory -> compute memory
# ---------------------------------------------------------------------------


def stage_kernel(nbytes: int, src_offset: int = FEATURE_ROW, name: str = "stage") -> Kernel:
    ops, prm = [MifOp("fa", 0)], [None]
    regs = deque(range(ZERO_REG))
    for c in range(-(-nbytes // LANES)):
        x = regs[0]
        regs.rotate(-1)
        ops.append(MifOp("ld", MemRef(0, src_offset + c * LANES), x))
        ops.append(VuOp("vadd", x, ZERO_REG, MemRef(1, c * LANES), narrow=True))
        prm += [None, None]
    return _finish(name, ops, prm)


# ---------------------------------------------------------------------------
# attention products with dynamic parameter blocks
# ---------------------------------------------------------------------------


def score_width(seq: int) -> int:
    return -(-seq // LANES) * LANES


def qk_kernel(seq: int, dh: int, name: str = "qk") -> Kernel:
    """``S = Q K^T`` for one sample: Q at ``a1``, K at ``a2`` (int8, row stride dh),
    S to ``a3`` as int32 rows of ``score_width(seq)`` entries."""
    if seq > 15 or dh % LANES:
        raise CapacityError("QK kernel supports seq <= 15 and d_head a multiple of 8")
    nch, sw = dh // LANES, score_width(seq)
    xpool, tpool = deque(range(15, 23)), deque(range(23, 31))
    ops, prm = [], []
    for g in range(sw // LANES):
        for ch in range(nch):
            ops.append(MifOp("pl", MemRef(2, 8 * g * dh + LANES * ch), None, stride=dh,
                             rows=min(LANES, seq - 8 * g)))
            prm.append(None)
            for r in range(seq):
                x = xpool[0]
                xpool.rotate(-1)
                ops.append(MifOp("ld", MemRef(1, r * dh + LANES * ch), x))
                prm.append(None)
                out = MemRef(3, (r * sw + LANES * g) * 4)
                if nch == 1:
                    ops.append(SimdOp("prd", x, out, dyn=True))
                elif ch == 0:
                    ops.append(SimdOp("prd", x, r, dyn=True))
                else:
                    t = tpool[0]
                    tpool.rotate(-1)
                    ops.append(SimdOp("prd", x, t, dyn=True))
                    prm.append(None)
                    ops.append(VuOp("vadd", r, t, out if ch == nch - 1 else r))
                prm.append(None)
    return _finish(name, ops, prm)


def pv_kernel(seq: int, dh: int, q: int, name: str = "pv") -> Kernel:
    """``O = P V`` for one sample: P at ``a1`` (int8 rows of ``score_width(seq)``),
    V at ``a2`` (row stride dh), O to ``a3`` requantised by ``q``."""
    if seq > 15 or dh % LANES:
        raise CapacityError("PV kernel supports seq <= 15 and d_head a multiple of 8")
    nc, pw = -(-seq // LANES), score_width(seq)
    xpool, tpool = deque(range(15, 23)), deque(range(23, 31))
    ops, prm = [], []
    for g in range(dh // LANES):
        for c in range(nc):
            ops.append(MifOp("pl", MemRef(2, 8 * c * dh + LANES * g), None, stride=dh,
                             rows=min(LANES, seq - 8 * c), cols=LANES, transpose=True))
            prm.append(None)
            for r in range(seq):
                x = xpool[0]
                xpool.rotate(-1)
                ops.append(MifOp("ld", MemRef(1, r * pw + LANES * c), x))
                prm.append(None)
                out = MemRef(3, r * dh + LANES * g)
                if nc == 1:
                    ops.append(SimdOp("prd", x, out, q, dyn=True))
                elif c == 0:
                    ops.append(SimdOp("prd", x, r, dyn=True))
                else:
                    t = tpool[0]
                    tpool.rotate(-1)
                    ops.append(SimdOp("prd", x, t, dyn=True))
                    prm.append(None)
                    last = c == nc - 1
                    ops.append(VuOp("vadd", r, t, out if last else r, q if last else None))
                prm.append(None)
    return _finish(name, ops, prm)
