"""Model description, shape bookkeeping, calibration and int8 quantisation.

Tensors are per-sample matrices ``(rows, cols)``: a flow's interval vector is
``(20, 1)``, a payload block ``(15, 16)``, a packet feature vector ``(1, 6)``.
Dense layers act on every row. Conv1D slides along rows with channels in
columns; Flatten folds a sample into one row.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..errors import ShapeError, UnsupportedLayer
from ..quant import Requant, fixed_multiplier, gelu, quantize

ACTS = ("none", "relu", "gelu")


@dataclass
class Dense:
    in_features: int
    out_features: int
    act: str = "none"
    name: str = ""


@dataclass
class Conv1D:
    kernel_size: int
    in_channels: int
    out_channels: int
    stride: int = 1
    padding: int = 0
    act: str = "none"
    name: str = ""


@dataclass
class MaxPool1D:
    stride: int = 2
    ceil_mode: bool = True
    name: str = ""


@dataclass
class Activation:
    kind: str  # relu | gelu | softmax
    name: str = ""


@dataclass
class Attention:
    seq_len: int
    d_model: int
    d_head: int
    name: str = ""


@dataclass
class Flatten:
    name: str = ""


def conv_windows(length: int, s: int, stride: int = 1, padding: int = 0) -> int:
    """Sliding-window count ``floor((L + 2p - s) / stride) + 1``."""
    span = length + 2 * padding - s
    if stride < 1 or span < 0:
        raise ShapeError(f"conv of width {s} (pad {padding}) does not fit length {length}")
    return span // stride + 1


def pooled_length(length: int, stride: int, ceil_mode: bool = True) -> int:
    return -(-length // stride) if ceil_mode else length // stride


def layer_out_shape(layer, shape: Tuple[int, int]) -> Tuple[int, int]:
    rows, cols = shape
    if isinstance(layer, Dense):
        if cols != layer.in_features:
            raise ShapeError(f"{layer.name}: expects {layer.in_features} features, got {cols}")
        return rows, layer.out_features
    if isinstance(layer, Conv1D):
        if cols != layer.in_channels:
            raise ShapeError(f"{layer.name}: expects {layer.in_channels} channels, got {cols}")
        return conv_windows(rows, layer.kernel_size, layer.stride, layer.padding), layer.out_channels
    if isinstance(layer, MaxPool1D):
        return pooled_length(rows, layer.stride, layer.ceil_mode), cols
    if isinstance(layer, Flatten):
        return 1, rows * cols
    if isinstance(layer, Attention):
        if (rows, cols) != (layer.seq_len, layer.d_model):
            raise ShapeError(f"{layer.name}: expects ({layer.seq_len}, {layer.d_model}), got {shape}")
        return rows, layer.d_head
    if isinstance(layer, Activation):
        return shape
    raise UnsupportedLayer(f"unknown layer {type(layer).__name__}")


@dataclass
class ModelIR:
    name: str
    input_shape: Tuple[int, int]
    layers: List[object]
    weights: Dict[str, np.ndarray] = field(default_factory=dict)
    input_scale: float = 1.0 / 64

    def __post_init__(self):
        self.input_shape = tuple(self.input_shape)
        for i, l in enumerate(self.layers):
            if not l.name:
                l.name = f"{type(l).__name__.lower()}{i}"

    def normalized(self) -> "ModelIR":
        """Fold standalone relu/gelu into the preceding Dense/Conv1D."""
        out: List[object] = []
        for l in self.layers:
            if isinstance(l, Activation):
                if l.kind == "softmax":
                    raise UnsupportedLayer("standalone softmax; softmax lives inside Attention")
                prev = out[-1] if out else None
                if not isinstance(prev, (Dense, Conv1D)) or prev.act != "none":
                    raise UnsupportedLayer(f"{l.name}: activation must follow a linear layer")
                prev.act = l.kind
                continue
            if isinstance(l, (Dense, Conv1D)) and l.act not in ACTS:
                raise UnsupportedLayer(f"{l.name}: activation {l.act!r}")
            out.append(l)
        return ModelIR(self.name, self.input_shape, out, dict(self.weights), self.input_scale)

    def shapes(self) -> List[Tuple[int, int]]:
        """Output shape of every layer (input shape not included)."""
        shape = self.input_shape
        res = []
        for l in self.layers:
            shape = layer_out_shape(l, shape)
            res.append(shape)
        return res

    def validate(self) -> "ModelIR":
        self.shapes()
        for l in self.layers:
            for key, shp in weight_shapes(l).items():
                w = self.weights.get(key)
                if w is None or tuple(w.shape) != shp:
                    raise ShapeError(f"weight {key!r} missing or not shaped {shp}")
        return self


def weight_shapes(layer) -> Dict[str, Tuple[int, ...]]:
    if isinstance(layer, Dense):
        return {layer.name: (layer.in_features, layer.out_features)}
    if isinstance(layer, Conv1D):
        return {layer.name: (layer.kernel_size, layer.in_channels, layer.out_channels)}
    if isinstance(layer, Attention):
        return {f"{layer.name}.{p}": (layer.d_model, layer.d_head) for p in ("wq", "wk", "wv")}
    return {}


def random_weights(layers, seed: int = 0) -> Dict[str, np.ndarray]:
    """He-style normal init, deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    ws = {}
    for l in layers:
        for key, shp in weight_shapes(l).items():
            fan_in = int(np.prod(shp[:-1]))
            ws[key] = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shp)
    return ws


# ---------------------------------------------------------------------------
# float reference (calibration only)
# ---------------------------------------------------------------------------


def _act(x, kind):
    if kind == "relu":
        return np.maximum(x, 0.0)
    if kind == "gelu":
        return gelu(x)
    return x


def im2col_float(x, s, stride, padding):
    """x: (batch, L, C) -> (batch, w, s*C), column order tap-major."""
    b, L, c = x.shape
    w = conv_windows(L, s, stride, padding)
    xp = np.zeros((b, L + 2 * padding, c), dtype=x.dtype)
    xp[:, padding:padding + L] = x
    cols = [xp[:, t: t + (w - 1) * stride + 1: stride, :] for t in range(s)]
    return np.concatenate(cols, axis=2)


def float_forward(ir: ModelIR, x) -> List[np.ndarray]:
    """Float activations after every layer for a batch ``(batch, rows, cols)``.

    Attention entries are tuples ``(out, q, k, v, scores)`` so calibration can
    see the internals.
    """
    outs = []
    for l in ir.layers:
        if isinstance(l, Dense):
            x = _act(x @ ir.weights[l.name], l.act)
            outs.append(x)
        elif isinstance(l, Conv1D):
            w = ir.weights[l.name].reshape(-1, l.out_channels)
            x = _act(im2col_float(x, l.kernel_size, l.stride, l.padding) @ w, l.act)
            outs.append(x)
        elif isinstance(l, MaxPool1D):
            b, L, c = x.shape
            n = pooled_length(L, l.stride, l.ceil_mode)
            y = np.full((b, n, c), -np.inf)
            for i in range(n):
                y[:, i] = x[:, i * l.stride: min((i + 1) * l.stride, L)].max(axis=1)
            x = y
            outs.append(x)
        elif isinstance(l, Flatten):
            x = x.reshape(x.shape[0], 1, -1)
            outs.append(x)
        elif isinstance(l, Attention):
            q = x @ ir.weights[f"{l.name}.wq"]
            k = x @ ir.weights[f"{l.name}.wk"]
            v = x @ ir.weights[f"{l.name}.wv"]
            s = q @ np.swapaxes(k, 1, 2) / math.sqrt(l.d_head)
            e = np.exp(s - s.max(axis=2, keepdims=True))
            p = e / e.sum(axis=2, keepdims=True)
            x = p @ v
            outs.append((x, q, k, v, s))
        else:
            raise UnsupportedLayer(type(l).__name__)
    return outs


# ---------------------------------------------------------------------------
# quantised model
# ---------------------------------------------------------------------------


@dataclass
class QLinear:
    """Dense or Conv1D as an int8 matmul; conv weights are img2col-ordered."""

    name: str
    kind: str  # dense | conv
    w: np.ndarray  # (K, N) int8
    rq: Optional[Requant]  # None: raw int32 output (final layer)
    in_scale: float
    w_scale: float
    out_scale: float
    kernel_size: int = 1
    in_channels: int = 0
    stride: int = 1
    padding: int = 0
    act: str = "none"


@dataclass
class QPool:
    name: str
    stride: int
    ceil_mode: bool = True


@dataclass
class QFlatten:
    name: str


@dataclass
class QAttention:
    name: str
    seq_len: int
    d_model: int
    d_head: int
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    rq_q: Requant
    rq_k: Requant
    rq_v: Requant
    score_scale: float  # real value of one S unit (1/sqrt(d) folded in)
    sm_mult: int  # score units -> 1/32 exponent grid, as mult * 2**-shift
    sm_shift: int
    p_rq: Requant  # Q15 probabilities -> int8 at scale 1/127
    rq_o: Requant  # P.V int32 -> int8
    in_scale: float
    q_scale: float
    k_scale: float
    v_scale: float
    out_scale: float


P_SCALE = 1.0 / 127
SOFTMAX_FRAC_BITS = 15
EXP_STEP_BITS = 5  # softmax exponent grid step 1/32
EXP_MIN = -512  # grid points below this round to zero weight


@dataclass
class QModel:
    name: str
    input_shape: Tuple[int, int]
    input_scale: float
    layers: List[object]
    shapes: List[Tuple[int, int]]

    @property
    def output_shape(self) -> Tuple[int, int]:
        return self.shapes[-1] if self.shapes else self.input_shape


def _scale_of(a) -> float:
    m = float(np.max(np.abs(a))) if np.size(a) else 0.0
    return m / 127 if m > 0 else 1.0


def calibration_inputs(ir: ModelIR, n: int = 64, seed: int = 0, lo: int = -128, hi: int = 127):
    rng = np.random.default_rng(seed)
    return rng.integers(lo, hi + 1, size=(n,) + tuple(ir.input_shape)).astype(np.int8)


def quantize_model(ir: ModelIR, calib=None, seed: int = 0) -> QModel:
    """Calibrate per-tensor scales on ``calib`` (int8 inputs) and quantise."""
    ir = ir.normalized().validate()
    if calib is None:
        calib = calibration_inputs(ir, seed=seed)
    x = np.asarray(calib, dtype=np.float64) * ir.input_scale
    acts = float_forward(ir, x)
    s_in = ir.input_scale
    layers = []
    last_linear = max((i for i, l in enumerate(ir.layers) if isinstance(l, (Dense, Conv1D))), default=-1)
    for i, l in enumerate(ir.layers):
        a = acts[i]
        if isinstance(l, (Dense, Conv1D)):
            raw = ir.weights[l.name]
            wq, ws = quantize(raw.reshape(-1, raw.shape[-1]))
            final = i == last_linear and i == len(ir.layers) - 1
            if final:
                rq, s_out = None, s_in * ws
            else:
                s_out = _scale_of(a)
                pre = None
                if l.act == "gelu":
                    # pre-activation range sets the LUT input grid
                    xin = x if i == 0 else _unwrap(acts[i - 1])
                    if isinstance(l, Conv1D):
                        xin = im2col_float(xin, l.kernel_size, l.stride, l.padding)
                    pre = _scale_of(xin @ raw.reshape(-1, raw.shape[-1]))
                rq = Requant.from_scales(s_in, ws, s_out, l.act, pre)
            kw = dict(kernel_size=l.kernel_size, in_channels=l.in_channels, stride=l.stride,
                      padding=l.padding) if isinstance(l, Conv1D) else {}
            layers.append(QLinear(l.name, "conv" if isinstance(l, Conv1D) else "dense", wq, rq,
                                  s_in, ws, s_out, act=l.act, **kw))
            s_in = s_out
        elif isinstance(l, MaxPool1D):
            layers.append(QPool(l.name, l.stride, l.ceil_mode))
        elif isinstance(l, Flatten):
            layers.append(QFlatten(l.name))
        elif isinstance(l, Attention):
            out, q, k, v, _ = a
            mats, scales, rqs = {}, {}, {}
            for key, act in (("wq", q), ("wk", k), ("wv", v)):
                wq_, ws_ = quantize(ir.weights[f"{l.name}.{key}"])
                mats[key] = wq_
                scales[key] = _scale_of(act)
                rqs[key] = Requant.from_scales(s_in, ws_, scales[key])
            s_out = _scale_of(out)
            # Q15 probability -> int8 on the 1/127 grid
            m, sh = fixed_multiplier(127 / (1 << SOFTMAX_FRAC_BITS))
            score_scale = scales["wq"] * scales["wk"] / math.sqrt(l.d_head)
            sm_m, sm_s = fixed_multiplier(score_scale * (1 << EXP_STEP_BITS))
            layers.append(QAttention(
                l.name, l.seq_len, l.d_model, l.d_head, mats["wq"], mats["wk"], mats["wv"],
                rqs["wq"], rqs["wk"], rqs["wv"],
                score_scale=score_scale, sm_mult=sm_m, sm_shift=sm_s,
                p_rq=Requant(m, sh),
                rq_o=Requant.from_scales(P_SCALE, scales["wv"], s_out),
                in_scale=s_in, q_scale=scales["wq"], k_scale=scales["wk"], v_scale=scales["wv"],
                out_scale=s_out))
            s_in = s_out
        else:
            raise UnsupportedLayer(type(l).__name__)
    return QModel(ir.name, ir.input_shape, ir.input_scale, layers, ir.shapes())


def _unwrap(a):
    return a[0] if isinstance(a, tuple) else a
