"""Lowering to matmul tasks, img2col, K-dimension tiling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple, Union

import numpy as np

from ..errors import ShapeError, UnsupportedLayer
from ..kernels import systolic_ws
from .ir import (Attention, Conv1D, Dense, Flatten, MaxPool1D, ModelIR, conv_windows,
                 layer_out_shape)


@dataclass(frozen=True)
class MatmulTask:
    m: int
    k_dim: int
    n: int
    layer: str
    kind: str = "dense"  # dense | conv | proj | qk | pv
    per_sample: bool = False  # operands differ per flow/packet: cannot be batched
    repeat: int = 1  # copies of a per-sample task

    def __post_init__(self):
        if min(self.m, self.k_dim, self.n) < 1 or self.repeat < 1:
            raise ShapeError(f"task dims must be >= 1: {self}")

    @property
    def shape(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        return (self.m, self.k_dim), (self.k_dim, self.n)

    @property
    def macs(self) -> int:
        return self.m * self.k_dim * self.n * self.repeat


@dataclass(frozen=True)
class ElementOp:
    kind: str  # vmax | softmax
    rows: int
    cols: int
    layer: str
    group: int = 0  # vmax: input rows per pooling group
    repeat: int = 1


def img2col_1d(layer: Conv1D, input_length: int, f: int = 1) -> MatmulTask:
    """Conv1D as ``(w*f, ic*s) x (ic*s, oc)`` with ``w`` sliding windows."""
    if layer.stride < 1 or input_length + 2 * layer.padding < layer.kernel_size:
        raise ShapeError(f"{layer.name}: stride {layer.stride}, length {input_length}, "
                         f"kernel {layer.kernel_size}")
    w = conv_windows(input_length, layer.kernel_size, layer.stride, layer.padding)
    return MatmulTask(w * f, layer.in_channels * layer.kernel_size, layer.out_channels,
                      layer.name, "conv")


def img2col_matrix(x, s: int, stride: int = 1, padding: int = 0) -> np.ndarray:
    """x: (L, C) -> (w, s*C) with column ``tap * C + channel``."""
    x = np.asarray(x)
    L, C = x.shape
    w = conv_windows(L, s, stride, padding)
    xp = np.zeros((L + 2 * padding, C), dtype=x.dtype)
    xp[padding:padding + L] = x
    return np.concatenate([xp[t: t + (w - 1) * stride + 1: stride] for t in range(s)], axis=1)


def lower_model(ir: ModelIR, f: int = 1) -> List[Union[MatmulTask, ElementOp]]:
    """Task list for ``f`` flows (or packets). Batched layers scale ``m`` by f;
    attention products are per-sample and carry ``repeat=f``."""
    ir = ir.normalized()
    shape = ir.input_shape
    out: List[Union[MatmulTask, ElementOp]] = []
    for l in ir.layers:
        rows, cols = shape
        if isinstance(l, Dense):
            out.append(MatmulTask(rows * f, l.in_features, l.out_features, l.name, "dense"))
        elif isinstance(l, Conv1D):
            out.append(img2col_1d(l, rows, f))
        elif isinstance(l, MaxPool1D):
            out.append(ElementOp("vmax", rows * f, cols, l.name, group=rows))
        elif isinstance(l, Flatten):
            pass
        elif isinstance(l, Attention):
            for p in ("q", "k", "v"):
                out.append(MatmulTask(rows * f, l.d_model, l.d_head, f"{l.name}.w{p}", "proj"))
            out.append(MatmulTask(l.seq_len, l.d_head, l.seq_len, f"{l.name}.qk", "qk", True, f))
            out.append(ElementOp("softmax", l.seq_len, l.seq_len, f"{l.name}.softmax", repeat=f))
            out.append(MatmulTask(l.seq_len, l.seq_len, l.d_head, f"{l.name}.pv", "pv", True, f))
        else:
            raise UnsupportedLayer(type(l).__name__)
        shape = layer_out_shape(l, shape)
    return out


# ---------------------------------------------------------------------------
# tiling
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubOp:
    chunk: int
    ntile: int
    k0: int
    k1: int
    n0: int
    n1: int
    l: int

    @property
    def a(self) -> int:
        return self.k1 - self.k0

    @property
    def b(self) -> int:
        return self.n1 - self.n0


@dataclass(frozen=True)
class Aggregation:
    """VU adds the partial of ``chunk`` into the running sum of ``ntile``."""

    ntile: int
    chunk: int
    rows: int
    cols: int
    buffer: int  # ping-pong side holding the incoming partial (0 / 1)


@dataclass
class TilingPlan:
    task: MatmulTask
    k: int
    sub_ops: List[SubOp] = field(default_factory=list)
    aggregations: List[Aggregation] = field(default_factory=list)

    @property
    def chunks(self) -> int:
        return -(-self.task.k_dim // self.k)

    @property
    def ntiles(self) -> int:
        return -(-self.task.n // self.k)


def tile(task: MatmulTask, k: int) -> TilingPlan:
    """Split K into ``ceil(k_dim/k)`` chunks and N into ``ceil(n/k)`` tiles.

    Sub-ops run tile by tile, chunk by chunk; every chunk after the first
    is followed by one aggregation, its partial landing in alternating
    ping-pong buffers.
    """
    plan = TilingPlan(task, k)
    for j in range(plan.ntiles):
        n0, n1 = j * k, min((j + 1) * k, task.n)
        for c in range(plan.chunks):
            k0, k1 = c * k, min((c + 1) * k, task.k_dim)
            plan.sub_ops.append(SubOp(c, j, k0, k1, n0, n1, task.m))
            if c:
                plan.aggregations.append(Aggregation(j, c, task.m, n1 - n0, c % 2))
    return plan


def execute_plan(plan: TilingPlan, x, w) -> np.ndarray:
    """Run a plan: systolic sub-products, then element-wise int32 aggregation."""
    from ..vpe import vu_exec

    x = np.asarray(x, dtype=np.int8)
    w = np.asarray(w, dtype=np.int8)
    if x.shape != (plan.task.m, plan.task.k_dim) or w.shape != (plan.task.k_dim, plan.task.n):
        raise ShapeError("operands do not match the plan's task")
    out = np.zeros((plan.task.m, plan.task.n), dtype=np.int32)
    acc = {}
    pending = {}
    for op in plan.sub_ops:
        part, _, _ = systolic_ws(x[:, op.k0:op.k1], w[op.k0:op.k1, op.n0:op.n1], plan.k)
        if op.chunk == 0:
            acc[op.ntile] = part
        else:
            pending[(op.ntile, op.chunk)] = part
    for ag in plan.aggregations:
        acc[ag.ntile] = vu_exec("vadd", acc[ag.ntile], pending.pop((ag.ntile, ag.chunk)))
    for j, a in acc.items():
        out[:, j * plan.k: j * plan.k + a.shape[1]] = a
    return out


# ---------------------------------------------------------------------------
# analytic estimator
# ---------------------------------------------------------------------------


@dataclass
class PerfEstimate:
    m: int  # computing units per accelerator
    n: int  # accelerators
    delay_class: float = 0.0  # delay estimate, arbitrary time units
    throughput_class: float = 0.0


def estimate(perf: PerfEstimate, kind: str = "systolic", c_delay: float = 1.0,
             c_tput: float = 1.0) -> PerfEstimate:
    """Asymptotic delay / throughput of one workload unit, constants ``c_*``.

    vector tree: delay ``c*log2(m/2)/n``, throughput ``c*n/log2(m/2)``;
    systolic: delay ``c*sqrt(m)/n``, throughput ``c*n``.
    """
    import math

    if perf.m < 1 or perf.n < 1:
        raise ValueError("m and n must be >= 1")
    if kind == "vector":
        depth = math.log2(perf.m / 2) if perf.m > 2 else 1.0
        delay, tput = c_delay * depth / perf.n, c_tput * perf.n / depth
    elif kind == "systolic":
        delay, tput = c_delay * math.sqrt(perf.m) / perf.n, c_tput * perf.n
    else:
        raise ValueError(f"unknown architecture {kind!r}")
    return PerfEstimate(perf.m, perf.n, delay, tput)
