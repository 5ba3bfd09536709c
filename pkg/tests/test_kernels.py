import os
import subprocess
import sys

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from octosim import kernels as K
from octosim.oracle import direct_maxpool, oracle_requant


def same(a, b):
    if isinstance(a, tuple):
        return all(same(p, q) for p, q in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(1, 16), st.integers(1, 16), st.integers(0, 2**32 - 1))
def test_systolic_routes_agree(l, a, b, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(-128, 128, (l, a), dtype=np.int8)
    w = rng.integers(-128, 128, (a, b), dtype=np.int8)
    nb, npy = K._nb_systolic_ws(x, w, 16), K._np_systolic_ws(x, w, 16)
    assert same(nb, npy)
    assert np.array_equal(nb[0], x.astype(np.int64) @ w.astype(np.int64))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(-(1 << 24), 1 << 24), min_size=1, max_size=40),
       st.integers(1, (1 << 31) - 1), st.integers(0, 50), st.booleans())
def test_requantize_routes_agree_with_oracle(acc, mult, shift, relu):
    acc = np.array(acc, dtype=np.int64)
    nb = K._nb_requantize(acc, np.int64(mult), np.int64(shift), relu, np.int64(-128), np.int64(127))
    npy = K._np_requantize(acc, mult, shift, relu, -128, 127)
    assert np.array_equal(nb, npy)
    assert np.array_equal(npy, oracle_requant(acc, mult, shift, relu))


def test_round_half_even_ties():
    assert list(K.round_shift(np.array([1, 3, 5, -1, -3]), 1)) == [0, 2, 2, 0, -2]


def test_hash_routes_agree():
    keys = np.random.default_rng(0).integers(0, 256, (500, 13), dtype=np.uint8)
    assert np.array_equal(K._nb_hash_keys(keys), K._np_hash_keys(keys))
    assert K.hash_keys(keys[0]).shape == (1,)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 9), st.integers(1, 5), st.integers(1, 6), st.booleans(), st.integers(0, 2**32 - 1))
def test_maxpool_routes_agree_with_oracle(group, ngroups, cols, ceil, seed):
    if group == 1 and not ceil:
        group = 2
    x = np.random.default_rng(seed).integers(-128, 128, (group * ngroups, cols), dtype=np.int8)
    nb, npy = K._nb_maxpool_groups(x, group, ceil), K._np_maxpool_groups(x, group, ceil)
    assert np.array_equal(nb, npy)
    ref = np.concatenate([direct_maxpool(x[g * group:(g + 1) * group], 2, ceil) for g in range(ngroups)])
    assert np.array_equal(npy, ref)


def test_disable_flag_selects_numpy_route():
    code = ("import numpy as np; from octosim import kernels; "
            "print(kernels.USE_NUMBA, kernels.hash_keys(np.frombuffer(b'abc', np.uint8)).tolist())")
    env = {**os.environ, "OCTOSIM_DISABLE_NUMBA": "1"}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    flag, value = out.stdout.split(" ", 1)
    assert flag == "False"
    assert value.strip() == str(K.hash_keys(np.frombuffer(b"abc", np.uint8)).tolist())
