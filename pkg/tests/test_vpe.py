import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis.extra.numpy import arrays

from octosim.compiler.codegen import dense_chain_kernel
from octosim.compiler.ir import quantize_model
from octosim.compiler.models import mlp_packet
from octosim.errors import AsmError, BadIndex, HazardError, RegisterConflict
from octosim.fabric import COMPUTE0, FEATURE, Fabric
from octosim.oracle import oracle_infer, oracle_requant
from octosim.quant import Requant
from octosim.vpe import (VPE, CtrlOp, MemRef, MifOp, SimdOp, VliwWord, VuOp, activate, assemble, disassemble,
                         program_latency, simd_prd, simd_prds, vu_exec)

i8 = arrays(np.int8, 8)


def test_prd_examples():
    assert np.all(simd_prd(np.zeros(8), np.zeros((8, 8))) == 0)
    p = np.tile(np.arange(1, 9), (8, 1))
    assert np.all(simd_prd(np.ones(8), p) == 36)
    assert activate([-5], Requant(1 << 30, 30, relu=True))[0] == 0


def test_prds_examples():
    x = np.array([0, 0, 0, 0, 1, 2, 3, 4])
    p = np.ones((8, 2, 4))
    a, b = simd_prds(x, p)
    assert np.all(a == 0) and np.all(b == 10)
    a, b = simd_prds(np.r_[1, 2, 3, 4, 1, 2, 3, 4], p)
    assert np.array_equal(a, b)


@settings(max_examples=300, deadline=None)
@given(i8, arrays(np.int8, (8, 8)))
def test_prd_equals_summed_prds_halves(x, p):
    a, b = simd_prds(x, p.reshape(8, 2, 4))
    assert np.array_equal(simd_prd(x, p), a + b)
    ref = [sum(int(x[i]) * int(p[j, i]) for i in range(8)) for j in range(8)]
    assert list(simd_prd(x, p)) == ref


@settings(max_examples=300, deadline=None)
@given(i8, i8)
def test_vu_against_scalar(a, b):
    assert list(vu_exec("vadd", a, b)) == [int(u) + int(v) for u, v in zip(a, b)]
    assert list(vu_exec("vem", a, b)) == [int(u) * int(v) for u, v in zip(a, b)]
    assert list(vu_exec("vmax", a, b)) == [max(int(u), int(v)) for u, v in zip(a, b)]
    assert np.array_equal(vu_exec("vadd", a, np.zeros(8)), a)


def test_vem_example():
    assert list(vu_exec("vem", [2] * 8, [3] * 8)) == [6] * 8
    with pytest.raises(BadIndex):
        vu_exec("vdiv", [1], [1])


def test_store_saturates():
    rq = Requant(1 << 30, 30)
    assert list(activate([1000, -1000, 5], rq)) == [127, -128, 5]
    assert list(oracle_requant(np.array([1000, -1000, 5]), 1 << 30, 30)) == [127, -128, 5]


def test_latency_model():
    one = [VliwWord(simd=SimdOp("prd", 0, 1))]
    assert program_latency(one) == 5
    ten = [VliwWord(simd=SimdOp("prd", 0, 1 + i)) for i in range(10)]
    assert program_latency(ten) == 14
    assert program_latency([VliwWord()]) == 1


def test_ld_result_usable_two_cycles_later():
    fab = Fabric()
    fab[COMPUTE0].store_bytes(0, np.arange(8, dtype=np.int8))
    vpe = VPE(fab)
    vpe.pcache = np.ones(64 * 3, np.int8)
    word = VliwWord(simd=SimdOp("prd", 2, 3), mif=MifOp("ld", MemRef(1, 0), 0))
    vpe.adrf[1] = (COMPUTE0, 0)
    vpe.execute_vliw(word, 0)
    with pytest.raises(HazardError):
        vpe.execute_vliw(VliwWord(simd=SimdOp("prd", 0, 4)), 1)
    vpe.execute_vliw(VliwWord(simd=SimdOp("prd", 0, 5)), 2)
    assert vpe.drf[5][0] == sum(range(8))


def test_write_conflict_faults():
    vpe = VPE(Fabric())
    with pytest.raises(RegisterConflict):
        vpe.execute_vliw(VliwWord(simd=SimdOp("prd", 0, 1), vu=VuOp("vadd", 2, 3, 1)), 0)
    with pytest.raises(BadIndex):
        vpe.execute_vliw(VliwWord(vu=VuOp("vadd", 40, 3, 1)), 0)


def test_empty_word_and_fin():
    vpe = VPE(Fabric())
    before = vpe.drf.copy()
    assert vpe.execute_vliw(VliwWord(), 7) == 8
    assert np.array_equal(vpe.drf, before)
    seen = []
    vpe.on_fin = seen.append
    vpe.execute_vliw(VliwWord(ctrl=CtrlOp("fin")), 9)
    assert seen == [9] and vpe.stats.fins == 1


def test_assembler_roundtrip():
    text = "[prd d3, @a1+0] [vadd d1, d2, d4] [ld @a0+8, d0]\n[fin]\n[nop]\n"
    words = assemble(text)
    assert len(words) == 3 and words[2].empty
    assert assemble(disassemble(words)) == words
    with pytest.raises(AsmError):
        assemble("[bogus d1]")
    with pytest.raises(AsmError):
        assemble("[prd d1, d2] [prds d3, d4]")


def test_packet_mlp_kernel_matches_oracle():
    qm = quantize_model(mlp_packet(0))
    rqs = []

    def qi(rq):
        rqs.append(rq)
        return len(rqs) - 1

    k = dense_chain_kernel(qm.layers, qi, 6)
    assert k.counts["prd"] + k.counts.get("prds", 0) >= 4
    assert assemble(disassemble(k.words)) == k.words
    fab = Fabric()
    vpe = VPE(fab)
    vpe.load(k.words, k.stream, rqs)
    vpe.fetch_address = lambda: (FEATURE, 64)
    rng = np.random.default_rng(1)
    for _ in range(100):
        x = rng.integers(0, 128, (1, 6)).astype(np.int8)
        fab[FEATURE].store_bytes(64, x.view(np.uint8).reshape(-1))
        cycles = vpe.run(adrf={1: (COMPUTE0, 0)})
        out = fab[COMPUTE0].load_bytes(0, 8).view(np.int32)
        assert np.array_equal(out, oracle_infer(qm, x)[-1].reshape(-1))
    assert cycles == k.cycles <= 46
