"""Placement, memory layout, job generation and the batch timeline.

A compiled model is a per-batch job list. Each job runs on one engine:

- ``seq``: a VPE kernel for one sample;
- ``vu``: one streaming tile op (aggregation or pooling);
- ``arype``: one sub-operation (SETA x3, LD, MM);
- ``ctrl``: controller-side softmax for one sample.

Jobs are split into a front phase (up to the last ``seq``/``ctrl`` job) and
a back phase. The driver emits the front of batch n+1 before the back of
batch n, so the VPE works on the next batch while the array finishes the
current one. Tensors crossing the split are double-buffered by batch parity.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .. import config
from ..arype import PCACHE, AryInstr, Desc
from ..errors import CapacityError, LayoutError
from ..fabric import COMPUTE0, COMPUTE1
from ..vpe import LANES, MemRef, VuTile
from . import codegen
from .ir import QAttention, QFlatten, QLinear, QModel, QPool
from .lower import MatmulTask, tile

BANK_BYTES = config.COMPUTE_MEM_DEPTH * config.WORD_BYTES
ALIGN = config.WORD_BYTES


@dataclass
class CompileConfig:
    k: int = config.ARRAY_K
    collab: bool = True
    offload_rule: str = "efficiency"  # efficiency | occupancy
    efficiency_threshold: float = 0.30
    occupancy_threshold: float = 0.15
    max_batch: int = 128
    batch: Optional[int] = None  # fixed batch size; None picks the largest that fits
    feature_offset: int = config.WORD_BYTES  # capture bytes relative to the ready address
    bank_bytes: int = BANK_BYTES
    conv_groups: int = 2  # sample groups per array convolution
    partials: int = 3  # incoming-partial buffers per layer, alternating banks


@dataclass
class Job:
    engine: str
    name: str
    cycles: int
    reads: Tuple[Tuple[str, int, int], ...] = ()
    writes: Tuple[Tuple[str, int, int], ...] = ()
    kernel: str = ""
    adrf: Tuple[Tuple[int, Tuple[str, int]], ...] = ()
    sample: int = -1  # per-sample jobs; -1 covers the whole batch
    instrs: Tuple[AryInstr, ...] = ()
    tile: Optional[VuTile] = None
    ctrl: tuple = ()
    macs: int = 0
    final: bool = False  # writes (part of) the score tensor
    phase: int = 0  # 0 front, 1 back
    outputs: Tuple[str, ...] = ()  # buffers written


@dataclass
class Boundary:
    """Where one layer's output lives: sample b starts at ``byte + b*stride``."""

    layer: str
    buffer: str
    stride: int
    shape: Tuple[int, int]
    dtype: str  # int8 | int32
    row_bytes: int  # bytes between rows (>= cols * itemsize)


@dataclass
class _Decl:
    name: str
    nbytes: int
    pref: str


def _rup(n: int, a: int = ALIGN) -> int:
    return -(-n // a) * a


# ---------------------------------------------------------------------------
# placement
# ---------------------------------------------------------------------------


def plan_efficiency(m: int, k_dim: int, n: int, k: int) -> float:
    """MAC efficiency of a task's whole tiling plan on a k x k array (LD included)."""
    plan = tile(MatmulTask(m, k_dim, n, "_"), k)
    cost = sum(op.l + 3 * k - 1 for op in plan.sub_ops)
    return m * k_dim * n / (k * k * cost)


def offload(m: int, k_dim: int, n: int, cfg: CompileConfig) -> bool:
    """True when the task belongs on SIMDU rather than the array."""
    if not cfg.collab:
        return False
    if cfg.offload_rule == "occupancy":
        a = min(k_dim, cfg.k)
        return k_dim <= LANES and a * min(n, cfg.k) / cfg.k ** 2 < cfg.occupancy_threshold
    if cfg.offload_rule == "efficiency":
        return plan_efficiency(m, k_dim, n, cfg.k) < cfg.efficiency_threshold
    raise ValueError(f"unknown offload rule {cfg.offload_rule!r}")


# ---------------------------------------------------------------------------
# job builder
# ---------------------------------------------------------------------------


class _Builder:
    def __init__(self, layout: Optional[Dict[str, Tuple[str, int]]], double: frozenset, parity: int):
        self.layout = layout
        self.double = double
        self.parity = parity
        self.decl: Dict[str, _Decl] = {}
        self.jobs: List[Job] = []
        self.uses: Dict[str, List[int]] = {}
        self.requants: list = []
        self.kernels: Dict[str, codegen.Kernel] = {}
        self.placement: Dict[str, str] = {}
        self.boundaries: List[Boundary] = []
        self.weights: Dict[str, int] = {}
        self.wblob: List[np.ndarray] = []
        self.wsize = 0
        self.readout: Optional[Boundary] = None

    def q(self, rq) -> int:
        for i, r in enumerate(self.requants):
            if r is rq:
                return i
        self.requants.append(rq)
        return len(self.requants) - 1

    def buf(self, name: str, nbytes: int, pref: str = COMPUTE0) -> str:
        if name not in self.decl:
            self.decl[name] = _Decl(name, _rup(nbytes), pref)
        return name

    def at(self, name: str, off: int = 0) -> Tuple[str, int]:
        if self.layout is None:
            return self.decl[name].pref, off
        key = f"{name}@{self.parity}" if name in self.double else name
        bank, base = self.layout[key]
        return bank, base + off

    def weight(self, name: str, w: np.ndarray) -> int:
        if name not in self.weights:
            self.weights[name] = self.wsize
            flat = np.ascontiguousarray(w, dtype=np.int8).reshape(-1)
            self.wblob.append(flat)
            self.wsize += flat.size
        return self.weights[name]

    def kernel(self, key: str, make) -> codegen.Kernel:
        if key not in self.kernels:
            self.kernels[key] = make()
        return self.kernels[key]

    def add(self, engine: str, name: str, cycles: int, reads=(), writes=(), **kw) -> Job:
        idx = len(self.jobs)
        rr, ww = [], []
        for lst, out in ((reads, rr), (writes, ww)):
            for bname, off, n in lst:
                u = self.uses.setdefault(bname, [idx, idx])
                u[1] = idx
                bank, byte = self.at(bname, off)
                out.append((bank, byte, byte + n))
        job = Job(engine, name, int(cycles), tuple(rr), tuple(ww),
                  outputs=tuple(dict.fromkeys(w[0] for w in writes)), **kw)
        self.jobs.append(job)
        return job


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


@dataclass
class _Tensor:
    buffer: str
    rows: int  # per sample
    cols: int
    stride: int  # bytes per sample
    esize: int = 1


def _matmul(b: _Builder, cfg: CompileConfig, name: str, M: int, Kd: int, N: int,
            src, weights, out: Tuple[str, int, int, int], q: Optional[int], i32: bool,
            sample: int = -1, final: bool = False, pname: str = "") -> int:
    """Emit sub-op and aggregation jobs for ``(M, Kd) x (Kd, N)``.

    ``src(op) -> (Desc, reads)``; ``weights(op) -> (Desc, reads)``;
    ``out = (buffer, offset, row_bytes, span_bytes)``. Returns the aggregation count.
    """
    k = cfg.k
    plan = tile(MatmulTask(M, Kd, N, name), k)
    esize = 4 if i32 else 1
    obuf, ooff, ors, ospan = out
    part = min(k, N)
    pname = pname or name
    if plan.chunks > 1:
        for i in range(2):
            b.buf(f"{pname}.acc{i}", M * part * 4, (COMPUTE0, COMPUTE1)[i % 2])
        for i in range(cfg.partials):
            b.buf(f"{pname}.p{i}", M * part * 4, (COMPUTE0, COMPUTE1)[i % 2])
    pi = -1  # running index into the partial ring
    for op in plan.sub_ops:
        if op.chunk:
            pi += 1
        wdesc, wreads = weights(op)
        sdesc, sreads = src(op)
        wide = op.b * 4
        if plan.chunks == 1:
            dbuf, doff = obuf, ooff + op.n0 * esize
            ddesc = Desc(*b.at(dbuf, doff), cols=op.b, rs=ors, i32=i32)
            dw = [(obuf, ooff, ospan)]
            mq = q
        else:
            dbuf = f"{pname}.acc{op.ntile % 2}" if op.chunk == 0 else f"{pname}.p{pi % cfg.partials}"
            ddesc = Desc(*b.at(dbuf), cols=op.b, rs=wide, i32=True)
            dw = [(dbuf, 0, M * wide)]
            mq = None
        instrs = (AryInstr("SETA", 0, wdesc), AryInstr("SETA", 1, sdesc), AryInstr("SETA", 2, ddesc),
                  AryInstr("LD", 0), AryInstr("MM", l=M, src=1, dst=2, q=mq))
        b.add("arype", f"{name}.mm[{op.ntile},{op.chunk}]", k + M + 2 * k - 1,
              reads=list(sreads) + list(wreads), writes=dw, instrs=instrs, sample=sample,
              macs=M * op.a * op.b, final=final and plan.chunks == 1)
        if op.chunk:
            acc = f"{pname}.acc{op.ntile % 2}"
            last = op.chunk == plan.chunks - 1
            pb = f"{pname}.p{pi % cfg.partials}"
            if last:
                bank, byte = b.at(obuf, ooff + op.n0 * esize)
                dst = MemRef(0, byte, 0, bank)
                writes = [(obuf, ooff, ospan)]
            else:
                bank, byte = b.at(acc)
                dst = MemRef(0, byte, 0, bank)
                writes = [(acc, 0, M * wide)]
            ab, ay = b.at(acc)
            pbk, pby = b.at(pb)
            t = VuTile("vadd.t", MemRef(0, ay, 0, ab), MemRef(0, pby, 0, pbk), dst, M, op.b,
                       q=q if last else None, dstride=ors if last else 0)
            b.add("vu", f"{name}.agg[{op.ntile},{op.chunk}]", t.cycles,
                  reads=[(acc, 0, M * wide), (pb, 0, M * wide)], writes=writes, tile=t,
                  sample=sample, final=final and last)
    return len(plan.aggregations)


def _dense_src(b: _Builder, t: _Tensor, M: int, Kd: int):
    def src(op):
        return (Desc(*b.at(t.buffer, op.k0), cols=op.a, rs=Kd),
                [(t.buffer, 0, M * Kd)])
    return src


def _pcache_weights(b: _Builder, key: str, w: np.ndarray):
    base = b.weight(key, w)
    N = w.shape[1]

    def wsrc(op):
        return Desc(PCACHE, base + op.k0 * N + op.n0, rows=op.a, cols=op.b, rs=N), []
    return wsrc


def _front(b: _Builder, qm: QModel, cfg: CompileConfig, B: int):
    """Per-sample VPE kernels that take the sample out of feature memory."""
    layers = qm.layers
    rows, cols = qm.input_shape
    fo = cfg.feature_offset
    first = layers[0] if layers else None

    # dense prefix kept in registers
    if isinstance(first, QLinear) and first.kind == "dense" and rows == 1:
        n = 0
        while n < len(layers) and isinstance(layers[n], QLinear) and layers[n].kind == "dense" \
                and offload(B, *layers[n].w.shape, cfg):
            n += 1
        while n and n < len(layers) and layers[n - 1].w.shape[1] % LANES:
            n -= 1
        if n:
            chain = layers[:n]
            last = chain[-1]
            N = last.w.shape[1]
            esize = 1 if last.rq is not None else 4
            per = -(-N // LANES) * LANES * esize
            kern = b.kernel("front", lambda: codegen.dense_chain_kernel(chain, b.q, cols, "mlp"))
            out = b.buf("front", B * per)
            for l in chain:
                b.placement[l.name] = "simdu"
            final = n == len(layers)
            for s in range(B):
                b.add("seq", f"mlp[{s}]", kern.cycles, writes=[(out, s * per, per)], kernel="front",
                      adrf=((1, b.at(out, s * per)),), sample=s, final=final)
            bd = Boundary(last.name, out, per, (1, N), "int8" if esize == 1 else "int32", per)
            b.boundaries.append(bd)
            return n, _Tensor(out, 1, N, per, esize)

    # single-channel convolution, fused with a following 2:1 pool
    if isinstance(first, QLinear) and first.kind == "conv" and first.in_channels == 1 \
            and first.kernel_size <= 4 and first.stride == 1 and first.rq is not None:
        w = rows + 2 * first.padding - first.kernel_size + 1
        if offload(w * B, first.w.shape[0], first.w.shape[1], cfg):
            oc = first.w.shape[1]
            fuse = len(layers) > 1 and isinstance(layers[1], QPool) and layers[1].stride == 2
            orows = -(-w // 2) if fuse else w
            per = orows * oc
            kern = b.kernel("front", lambda: codegen.conv_kernel(first, b.q, rows, fuse, fo, True, "conv"))
            out = b.buf("front", B * per + 2 * oc)
            b.placement[first.name] = "simdu"
            used = 2 if fuse else 1
            for s in range(B):
                b.add("seq", f"conv[{s}]", kern.cycles, writes=[(out, s * per, per + (0 if fuse else oc))],
                      kernel="front", adrf=((1, b.at(out, s * per)),), sample=s)
            b.boundaries.append(Boundary(layers[used - 1].name, out, per, (orows, oc), "int8", oc))
            return used, _Tensor(out, orows, oc, per)

    # plain copy into compute memory
    per = rows * cols
    kern = b.kernel("front", lambda: codegen.stage_kernel(per, fo, "stage"))
    out = b.buf("front", B * per + LANES)
    for s in range(B):
        b.add("seq", f"stage[{s}]", kern.cycles, writes=[(out, s * per, _rup(per, LANES))],
              kernel="front", adrf=((1, b.at(out, s * per)),), sample=s)
    return 0, _Tensor(out, rows, cols, per)


def _attention(b: _Builder, cfg: CompileConfig, layer: QAttention, t: _Tensor, B: int, idx: int):
    seq, dm, dh = layer.seq_len, layer.d_model, layer.d_head
    M = seq * B
    per = seq * dh
    heads = {}
    for p in "qkv":
        name = f"{layer.name}.w{p}"
        buf = b.buf(f"t{idx}.{p}", B * per)
        w = getattr(layer, f"w{p}")
        rq = getattr(layer, f"rq_{p}")
        b.placement[name] = "arype"
        _matmul(b, cfg, name, M, dm, dh, _dense_src(b, t, M, dm), _pcache_weights(b, name, w),
                (buf, 0, dh, B * per), b.q(rq), False)
        heads[p] = buf
    sw = codegen.score_width(seq)
    s_per, p_per = seq * sw * 4, seq * sw
    S = b.buf(f"t{idx}.s", 2 * s_per)
    P = b.buf(f"t{idx}.p", 2 * p_per)
    O = b.buf(f"t{idx}.o", B * per)
    qk_simd = offload(seq, dh, seq, cfg) and seq <= 15 and dh % LANES == 0
    pv_simd = offload(seq, seq, dh, cfg) and seq <= 15 and dh % LANES == 0
    b.placement[f"{layer.name}.qk"] = "simdu" if qk_simd else "arype"
    b.placement[f"{layer.name}.pv"] = "simdu" if pv_simd else "arype"
    rq_o = b.q(layer.rq_o)
    if qk_simd:
        kq = b.kernel("qk", lambda: codegen.qk_kernel(seq, dh))
    if pv_simd:
        kp = b.kernel("pv", lambda: codegen.pv_kernel(seq, dh, rq_o))
    pq = b.q(layer.p_rq)
    for s in range(B):
        qo, so, po = s * per, (s % 2) * s_per, (s % 2) * p_per
        if qk_simd:
            b.add("seq", f"{layer.name}.qk[{s}]", kq.cycles,
                  reads=[(heads["q"], qo, per), (heads["k"], qo, per)], writes=[(S, so, s_per)],
                  kernel="qk", sample=s,
                  adrf=((1, b.at(heads["q"], qo)), (2, b.at(heads["k"], qo)), (3, b.at(S, so))))
        else:
            def src(op, qo=qo):
                return Desc(*b.at(heads["q"], qo + op.k0), cols=op.a, rs=dh), [(heads["q"], qo, per)]

            def wk(op, qo=qo):
                return (Desc(*b.at(heads["k"], qo + op.n0 * dh + op.k0), rows=op.b, cols=op.a, rs=dh, t=True),
                        [(heads["k"], qo, per)])
            _matmul(b, cfg, f"{layer.name}.qk", seq, dh, seq, src, wk, (S, so, sw * 4, s_per), None, True,
                    sample=s)
        b.add("ctrl", f"{layer.name}.softmax[{s}]", 0, reads=[(S, so, s_per)], writes=[(P, po, p_per)],
              sample=s, ctrl=("softmax", idx, b.at(S, so), b.at(P, po), seq, sw, pq))
        if pv_simd:
            b.add("seq", f"{layer.name}.pv[{s}]", kp.cycles,
                  reads=[(P, po, p_per), (heads["v"], qo, per)], writes=[(O, qo, per)], kernel="pv", sample=s,
                  adrf=((1, b.at(P, po)), (2, b.at(heads["v"], qo)), (3, b.at(O, qo))))
        else:
            def src(op, po=po):
                return Desc(*b.at(P, po + op.k0), cols=op.a, rs=sw), [(P, po, p_per)]

            def wv(op, qo=qo):
                return (Desc(*b.at(heads["v"], qo + op.k0 * dh + op.n0), rows=op.a, cols=op.b, rs=dh),
                        [(heads["v"], qo, per)])
            _matmul(b, cfg, f"{layer.name}.pv", seq, seq, dh, src, wv, (O, qo, dh, per), rq_o, False, sample=s)
    b.boundaries.append(Boundary(layer.name, O, per, (seq, dh), "int8", dh))
    return _Tensor(O, seq, dh, per)


def _groups(B: int, G: int) -> List[Tuple[int, int]]:
    """Split B samples into at most G contiguous (first, count) groups."""
    G = max(1, min(G, B))
    out, s0 = [], 0
    for g in range(G):
        n = B // G + (1 if g < B % G else 0)
        out.append((s0, n))
        s0 += n
    return out


def _pool(b: _Builder, layer: QPool, t: _Tensor, out: str, s0: int, n: int, tag: str = "") -> _Tensor:
    L, C = t.rows, t.cols
    rows = -(-L // layer.stride) if layer.ceil_mode else L // layer.stride
    per = rows * C
    ib, iy = b.at(t.buffer, s0 * t.stride)
    ob, oy = b.at(out, s0 * per)
    tl = VuTile("vmax.t", MemRef(0, iy, 0, ib), None, MemRef(0, oy, 0, ob), n * L, C, group=L,
                ceil=layer.ceil_mode)
    b.placement[layer.name] = "vu"
    b.add("vu", f"{layer.name}{tag}", tl.cycles, reads=[(t.buffer, s0 * t.stride, n * t.stride)],
          writes=[(out, s0 * per, n * per)], tile=tl)
    return _Tensor(out, rows, C, per)


def _generate(b: _Builder, qm: QModel, cfg: CompileConfig, B: int) -> None:
    used, t = _front(b, qm, cfg, B)
    layers = qm.layers
    idx = used
    while idx < len(layers):
        layer = layers[idx]
        final = idx == len(layers) - 1
        if isinstance(layer, QLinear):
            i32 = layer.rq is None
            esize = 4 if i32 else 1
            K, N = layer.w.shape
            q = None if i32 else b.q(layer.rq)
            wsrc = _pcache_weights(b, layer.name, layer.w)
            b.placement[layer.name] = "arype"
            if layer.kind == "conv":
                # sample groups: the pool of group g overlaps the array's work on group g+1
                L, C = t.rows, t.cols
                s, pad, st = layer.kernel_size, layer.padding, layer.stride
                rows = (L + 2 * pad - s) // st + 1
                per = rows * N * esize
                out = b.buf(f"t{idx}", B * per)
                pool = layers[idx + 1] if idx + 1 < len(layers) and isinstance(layers[idx + 1], QPool) \
                    and not i32 else None
                pout = None
                if pool is not None:
                    prow = -(-rows // pool.stride) if pool.ceil_mode else rows // pool.stride
                    pout = b.buf(f"t{idx + 1}", B * prow * N)
                ctile = _Tensor(out, rows, N, per, esize)
                groups = _groups(B, cfg.conv_groups)
                for g, (s0, n) in enumerate(groups):
                    tag = f"[g{g}]" if len(groups) > 1 else ""

                    def src(op, s0=s0, n=n, L=L, C=C, s=s, pad=pad, st=st, buf=t.buffer, stride=t.stride):
                        return (Desc(*b.at(buf, s0 * stride), cols=op.a, win=(L, C, s, pad, st, op.k0)),
                                [(buf, s0 * stride, n * stride)])
                    _matmul(b, cfg, f"{layer.name}{tag}", rows * n, K, N, src, wsrc,
                            (out, s0 * per, N * esize, n * per), q, i32, final=final, pname=layer.name)
                    if pool is not None:
                        pt = _pool(b, pool, ctile, pout, s0, n, tag)
                b.boundaries.append(Boundary(layer.name, out, per, (rows, N), "int32" if i32 else "int8",
                                             N * esize))
                t = ctile
                if pool is not None:
                    idx += 1
                    t = pt
                    b.boundaries.append(Boundary(pool.name, pout, pt.stride, (pt.rows, N), "int8", N))
            else:
                rows = t.rows
                per = rows * N * esize
                out = b.buf(f"t{idx}", B * per)
                _matmul(b, cfg, layer.name, rows * B, K, N, _dense_src(b, t, rows * B, K), wsrc,
                        (out, 0, N * esize, B * per), q, i32, final=final)
                t = _Tensor(out, rows, N, per, esize)
                b.boundaries.append(Boundary(layer.name, out, per, (rows, N), "int32" if i32 else "int8",
                                             N * esize))
        elif isinstance(layer, QPool):
            out = b.buf(f"t{idx}", B * (-(-t.rows // layer.stride)) * t.cols)
            t = _pool(b, layer, t, out, 0, B)
            b.boundaries.append(Boundary(layer.name, out, t.stride, (t.rows, t.cols), "int8", t.cols))
        elif isinstance(layer, QFlatten):
            t = _Tensor(t.buffer, 1, t.rows * t.cols, t.stride, t.esize)
            b.boundaries.append(Boundary(layer.name, t.buffer, t.stride, (1, t.cols),
                                         "int8" if t.esize == 1 else "int32", t.cols * t.esize))
        elif isinstance(layer, QAttention):
            t = _attention(b, cfg, layer, t, B, idx)
        else:
            raise LayoutError(f"no lowering for {type(layer).__name__}")
        idx += 1
    b.readout = b.boundaries[-1] if b.boundaries else None


# ---------------------------------------------------------------------------
# layout
# ---------------------------------------------------------------------------


def _split(jobs: List[Job]) -> int:
    last = -1
    for i, j in enumerate(jobs):
        if j.engine in ("seq", "ctrl"):
            last = i
    return last + 1


def allocate(decl: Dict[str, _Decl], uses: Dict[str, List[int]], split: int,
             bank_bytes: int = BANK_BYTES) -> Tuple[Dict[str, Tuple[str, int]], frozenset]:
    """Liveness-aware first-fit over both compute banks.

    Buffers touched on both sides of the front/back split get two copies.
    A front-only and a back-only buffer never share bytes: they are live at
    the same time across consecutive batches.
    """
    n_jobs = max((u[1] for u in uses.values()), default=0) + 1
    items = []
    double = set()
    for name, d in decl.items():
        lo, hi = uses.get(name, [0, 0])
        side = "both" if lo < split <= hi else ("front" if hi < split else "back")
        if side == "both":
            double.add(name)
            for p in (0, 1):
                items.append((0, n_jobs, side, f"{name}@{p}", d))
        else:
            items.append((lo, hi, side, name, d))
    items.sort(key=lambda it: (it[0], -it[4].nbytes, it[3]))
    placed: Dict[str, List[tuple]] = {COMPUTE0: [], COMPUTE1: []}
    layout: Dict[str, Tuple[str, int]] = {}

    def clash(a, c):
        if {a[2], c[2]} == {"front", "back"}:
            return True
        return a[0] <= c[1] and c[0] <= a[1]

    for it in items:
        d = it[4]
        other = COMPUTE1 if d.pref == COMPUTE0 else COMPUTE0
        for bank in (d.pref, other):
            busy = sorted((lo, hi) for lo, hi, o in placed[bank] if clash(it, o))
            addr = 0
            for lo, hi in busy:
                if addr + d.nbytes <= lo:
                    break
                addr = max(addr, hi)
            if addr + d.nbytes <= bank_bytes:
                placed[bank].append((addr, addr + d.nbytes, it))
                layout[it[3]] = (bank, addr)
                break
        else:
            raise LayoutError(f"buffer {it[3]} ({d.nbytes} B) does not fit compute memory")
    return layout, frozenset(double)


# ---------------------------------------------------------------------------
# compiled program
# ---------------------------------------------------------------------------


@dataclass
class Program:
    """Everything one batch of ``batch`` samples needs, in both parity variants."""

    model: str
    batch: int
    jobs: Tuple[List[Job], List[Job]]
    split: int
    layout: Dict[str, Tuple[str, int]]
    double: frozenset
    requants: list
    kernels: Dict[str, codegen.Kernel]
    vpe_words: list
    vpe_pcache: np.ndarray
    arype_pcache: np.ndarray
    placement: Dict[str, str]
    boundaries: List[Boundary]
    readout: Optional[Boundary]
    buffers: Dict[str, int] = field(default_factory=dict)

    def buffer_at(self, name: str, parity: int) -> Tuple[str, int]:
        return self.layout[f"{name}@{parity}" if name in self.double else name]

    @property
    def aggregations(self) -> int:
        return sum(1 for j in self.jobs[0] if j.engine == "vu" and ".agg[" in j.name)

    def arype_text(self, parity: int = 0) -> str:
        return "\n".join(i.text() for j in self.jobs[parity] for i in j.instrs) + "\n"

    def vpe_text(self) -> str:
        from ..vpe import disassemble

        out = []
        for name, k in self.kernels.items():
            out.append(f"; kernel {name} pbase={k.pbase}")
            out.append(disassemble(k.words))
        return "\n".join(out)

    def image_digest(self) -> str:
        h = hashlib.sha256()
        h.update(self.vpe_text().encode())
        for p in (0, 1):
            h.update(self.arype_text(p).encode())
        h.update(self.vpe_pcache.tobytes())
        h.update(self.arype_pcache.tobytes())
        h.update(repr(sorted(self.layout.items())).encode())
        return h.hexdigest()

    def layout_manifest(self) -> List[dict]:
        return [{"buffer": k, "bank": v[0], "byte": v[1], "bytes": self.buffers.get(k.split("@")[0], 0)}
                for k, v in sorted(self.layout.items())]


def build_program(qm: QModel, cfg: CompileConfig, B: int) -> Program:
    probe = _Builder(None, frozenset(), 0)
    _generate(probe, qm, cfg, B)
    split = _split(probe.jobs)
    layout, double = allocate(probe.decl, probe.uses, split, cfg.bank_bytes)
    variants = []
    for parity in (0, 1):
        b = _Builder(layout, double, parity)
        _generate(b, qm, cfg, B)
        for i, j in enumerate(b.jobs):
            j.phase = 0 if i < split else 1
        variants.append(b)
    b = variants[0]
    words, streams, pbase = [], [], 0
    for k in b.kernels.values():
        k.pbase = pbase
        pbase += k.stream.size
        words += k.words
        streams.append(k.stream)
    if len(words) > config.ICACHE_WORDS:
        raise CapacityError(f"VPE kernels need {len(words)} words, iCache holds {config.ICACHE_WORDS}")
    for v in variants:
        n = sum(len(j.instrs) for j in v.jobs)
        if n > config.ICACHE_WORDS:
            raise CapacityError(f"AryPE batch program of {n} instructions exceeds the iCache")
    vpc = np.concatenate(streams) if streams else np.zeros(0, np.int8)
    apc = np.concatenate(b.wblob) if b.wblob else np.zeros(0, np.int8)
    return Program(qm.name, B, (variants[0].jobs, variants[1].jobs), split, layout, double, b.requants,
                   b.kernels, words, vpc, apc, b.placement, b.boundaries, b.readout,
                   {n: d.nbytes for n, d in b.decl.items()})


@dataclass
class Schedule:
    model: QModel
    cfg: CompileConfig
    batch: int
    programs: Dict[int, Program] = field(default_factory=dict)

    def program(self, B: Optional[int] = None) -> Program:
        B = self.batch if B is None else B
        if B not in self.programs:
            self.programs[B] = build_program(self.model, self.cfg, B)
        return self.programs[B]

    @property
    def placement(self) -> Dict[str, str]:
        return self.program().placement


def _fits(qm: QModel, cfg: CompileConfig, B: int) -> bool:
    try:
        build_program(qm, cfg, B)
    except (LayoutError, CapacityError):
        return False
    return True


def schedule(qm: QModel, cfg: Optional[CompileConfig] = None) -> Schedule:
    """Compile ``qm``; the batch is the largest size up to ``max_batch`` that fits."""
    cfg = cfg or CompileConfig()
    if cfg.batch is not None:
        prog = build_program(qm, cfg, cfg.batch)
        return Schedule(qm, cfg, cfg.batch, {cfg.batch: prog})
    one = build_program(qm, cfg, 1)
    if not any(j.engine == "arype" for j in one.jobs[0]):
        return Schedule(qm, cfg, 1, {1: one})  # nothing to amortise: no batching delay
    lo, hi = 1, cfg.max_batch
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if _fits(qm, cfg, mid):
            lo = mid
        else:
            hi = mid - 1
    return Schedule(qm, cfg, lo, {lo: build_program(qm, cfg, lo)})


# ---------------------------------------------------------------------------
# timeline
# ---------------------------------------------------------------------------


class Timeline:
    """In-order per-resource ASAP placement with region-exact memory dependences.

    With ``serialize`` every engine shares one resource: the array waits for
    aggregation and the VPE waits for the array.
    """

    def __init__(self, serialize: bool = False, ctrl_cycles: int = 0):
        self.serialize = serialize
        self.ctrl_cycles = ctrl_cycles
        self.free: Dict[str, int] = {}
        self.wr: Dict[str, Dict[Tuple[int, int], int]] = {}
        self.rd: Dict[str, Dict[Tuple[int, int], int]] = {}
        self.busy: Dict[str, int] = {}
        self.macs = 0
        self.first: Dict[str, int] = {}
        self.last: Dict[str, int] = {}

    def _res(self, engine: str) -> str:
        return "all" if self.serialize else engine

    def cost(self, job: Job) -> int:
        return self.ctrl_cycles if job.engine == "ctrl" else job.cycles

    def place(self, job: Job, release: int = 0) -> Tuple[int, int]:
        res = self._res(job.engine)
        t = max(release, self.free.get(res, 0))
        for bank, lo, hi in job.reads:
            for (a, z), end in self.wr.get(bank, {}).items():
                if a < hi and lo < z:
                    t = max(t, end)
        for bank, lo, hi in job.writes:
            for table in (self.wr, self.rd):
                for (a, z), end in table.get(bank, {}).items():
                    if a < hi and lo < z:
                        t = max(t, end)
        end = t + self.cost(job)
        self.free[res] = end
        for bank, lo, hi in job.reads:
            d = self.rd.setdefault(bank, {})
            d[(lo, hi)] = max(d.get((lo, hi), 0), end)
        for bank, lo, hi in job.writes:
            self.wr.setdefault(bank, {})[(lo, hi)] = end
        self.busy[job.engine] = self.busy.get(job.engine, 0) + self.cost(job)
        self.first.setdefault(job.engine, t)
        self.last[job.engine] = max(self.last.get(job.engine, 0), end)
        self.macs += job.macs
        return t, end

    def arype_utilization(self, k: int) -> float:
        if "arype" not in self.first:
            return 0.0
        span = self.last["arype"] - self.first["arype"]
        return self.macs / (k * k * span) if span else 0.0
