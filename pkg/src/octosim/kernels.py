"""Hot numeric kernels.

Every public kernel has two bodies: a scalar loop compiled with numba
(``_nb_*``) and a vectorised numpy twin (``_np_*``). The public name is
bound at import time according to :data:`octosim._jit.USE_NUMBA`; both
bodies stay importable so tests can check them against each other and
``benchmarks/bench_kernels.py`` can time them side by side.
"""
import numpy as np

from ._jit import USE_NUMBA, njit

__all__ = [
    "systolic_ws",
    "requantize",
    "round_shift",
    "hash_keys",
    "maxpool_groups",
    "USE_NUMBA",
]

_MASK64 = np.uint64(0xFFFFFFFFFFFFFFFF)
FNV_OFFSET = np.uint64(0xCBF29CE484222325)
FNV_PRIME = np.uint64(0x100000001B3)
FMIX_C1 = np.uint64(0xFF51AFD7ED558CCD)
FMIX_C2 = np.uint64(0xC4CEB9FE1A85EC53)


# ---------------------------------------------------------------------------
# weight-stationary systolic array, cycle by cycle
# ---------------------------------------------------------------------------


@njit
def _nb_systolic_ws(x, w, k):
    l, a = x.shape
    b = w.shape[1]
    out = np.zeros((l, b), dtype=np.int32)
    cycles = l + 2 * k - 1
    active = np.int64(0)
    # PE(i, j) sees activation row r = t - i - j at cycle t (row skew + column skew)
    for t in range(cycles):
        for i in range(a):
            for j in range(b):
                r = t - i - j
                if r >= 0 and r < l:
                    out[r, j] += np.int32(x[r, i]) * np.int32(w[i, j])
                    active += 1
    return out, cycles, active


def _np_systolic_ws(x, w, k):
    l, a = x.shape
    b = w.shape[1]
    out = np.zeros((l, b), dtype=np.int32)
    cycles = l + 2 * k - 1
    active = 0
    xi = x.astype(np.int32)
    wi = w.astype(np.int32)
    # sweep anti-diagonals d = i + j; every PE on a diagonal sees rows r = t - d,
    # which over the whole run covers r = 0..l-1 exactly once
    for d in range(a + b - 1):
        i = np.arange(max(0, d - b + 1), min(a, d + 1))
        j = d - i
        if i.size == 0:
            continue
        out[:, j] += xi[:, i] * wi[i, j]
        active += l * i.size
    return out, cycles, active


def systolic_ws(x, w, k):
    """Stream ``x`` (l, a) through a k x k array holding ``w`` (a, b).

    Returns ``(out int32 (l, b), cycles, active_mac_cycles)``. Cells outside
    the a x b sub-rectangle hold zero weights and are never counted active.
    """
    x = np.ascontiguousarray(x, dtype=np.int8)
    w = np.ascontiguousarray(w, dtype=np.int8)
    if USE_NUMBA:
        out, cycles, active = _nb_systolic_ws(x, w, k)
    else:
        out, cycles, active = _np_systolic_ws(x, w, k)
    return out, int(cycles), int(active)


# ---------------------------------------------------------------------------
# fixed-point requantisation (multiply, shift with round-half-to-even, clamp)
# ---------------------------------------------------------------------------


@njit
def _nb_requantize(acc, mult, shift, relu, lo, hi):
    flat = acc.ravel()
    out = np.empty(flat.size, dtype=np.int64)
    half = np.int64(1) << (shift - 1) if shift > 0 else np.int64(0)
    for n in range(flat.size):
        v = np.int64(flat[n])
        if relu and v < 0:
            v = 0
        p = v * mult
        if shift > 0:
            q = p >> shift
            r = p - (q << shift)
            if r > half or (r == half and (q & 1) == 1):
                q += 1
        else:
            q = p
        if q < lo:
            q = lo
        elif q > hi:
            q = hi
        out[n] = q
    return out


def _np_round_shift(p, shift):
    if shift <= 0:
        return p
    q = p >> shift
    r = p - (q << shift)
    half = np.int64(1) << np.int64(shift - 1)
    bump = (r > half) | ((r == half) & ((q & 1) == 1))
    return q + bump.astype(np.int64)


def _np_requantize(acc, mult, shift, relu, lo, hi):
    v = acc.astype(np.int64).ravel()
    if relu:
        v = np.maximum(v, 0)
    q = _np_round_shift(v * np.int64(mult), shift)
    return np.clip(q, lo, hi)


def requantize(acc, mult, shift, relu=False, lo=-128, hi=127, dtype=np.int8):
    """``clamp(round_half_even(acc * mult / 2**shift))`` elementwise."""
    acc = np.asarray(acc)
    shape = acc.shape
    if USE_NUMBA:
        q = _nb_requantize(np.ascontiguousarray(acc, dtype=np.int64), np.int64(mult),
                           np.int64(shift), bool(relu), np.int64(lo), np.int64(hi))
    else:
        q = _np_requantize(acc, mult, shift, relu, lo, hi)
    return q.reshape(shape).astype(dtype)


def round_shift(p, shift):
    """Round-half-to-even right shift of an int64 array (no clamp)."""
    return _np_round_shift(np.asarray(p, dtype=np.int64), int(shift))


# ---------------------------------------------------------------------------
# tuple hashing: FNV-1a over key bytes, then the murmur3 64-bit finaliser
# ---------------------------------------------------------------------------


@njit
def _nb_hash_keys(keys):
    n, m = keys.shape
    out = np.empty(n, dtype=np.uint64)
    for r in range(n):
        h = np.uint64(0xCBF29CE484222325)
        for c in range(m):
            h = h ^ np.uint64(keys[r, c])
            h = h * np.uint64(0x100000001B3)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xFF51AFD7ED558CCD)
        h ^= h >> np.uint64(33)
        h *= np.uint64(0xC4CEB9FE1A85EC53)
        h ^= h >> np.uint64(33)
        out[r] = h
    return out


def _np_hash_keys(keys):
    h = np.full(keys.shape[0], FNV_OFFSET, dtype=np.uint64)
    with np.errstate(over="ignore"):
        for c in range(keys.shape[1]):
            h ^= keys[:, c].astype(np.uint64)
            h *= FNV_PRIME
        h ^= h >> np.uint64(33)
        h *= FMIX_C1
        h ^= h >> np.uint64(33)
        h *= FMIX_C2
        h ^= h >> np.uint64(33)
    return h


def hash_keys(keys):
    """64-bit hash of each row of a (n, m) uint8 key matrix."""
    keys = np.ascontiguousarray(keys, dtype=np.uint8)
    if keys.ndim == 1:
        keys = keys[None, :]
    if USE_NUMBA:
        return _nb_hash_keys(keys)
    return _np_hash_keys(keys)


# ---------------------------------------------------------------------------
# stride-2 max pooling along rows, restarted for every group of rows
# ---------------------------------------------------------------------------


@njit
def _nb_maxpool_groups(x, group, ceil_mode):
    rows, cols = x.shape
    ngroups = rows // group
    per = (group + 1) // 2 if ceil_mode else group // 2
    out = np.empty((ngroups * per, cols), dtype=x.dtype)
    for g in range(ngroups):
        for p in range(per):
            r0 = g * group + 2 * p
            for c in range(cols):
                v = x[r0, c]
                if 2 * p + 1 < group and x[r0 + 1, c] > v:
                    v = x[r0 + 1, c]
                out[g * per + p, c] = v
    return out


def _np_maxpool_groups(x, group, ceil_mode):
    rows, cols = x.shape
    g = x.reshape(rows // group, group, cols)
    if group % 2 and ceil_mode:
        pad = np.full((g.shape[0], 1, cols), np.iinfo(x.dtype).min, dtype=x.dtype)
        g = np.concatenate([g, pad], axis=1)
    elif group % 2:
        g = g[:, :-1]
    pairs = g.reshape(g.shape[0], g.shape[1] // 2, 2, cols).max(axis=2)
    return pairs.reshape(-1, cols)


def maxpool_groups(x, group, ceil_mode=True):
    """Max over row pairs (2p, 2p+1) inside consecutive blocks of ``group`` rows."""
    x = np.ascontiguousarray(x)
    if x.shape[0] % group:
        raise ValueError("row count is not a multiple of the group size")
    if USE_NUMBA:
        return _nb_maxpool_groups(x, int(group), bool(ceil_mode))
    return _np_maxpool_groups(x, int(group), bool(ceil_mode))
