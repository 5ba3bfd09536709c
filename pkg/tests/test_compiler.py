import numpy as np
import pytest

from octosim.compiler.ir import (Conv1D, Dense, MaxPool1D, ModelIR, conv_windows, pooled_length, quantize_model,
                                 random_weights)
from octosim.compiler.lower import (ElementOp, MatmulTask, PerfEstimate, estimate, execute_plan, img2col_1d,
                                    img2col_matrix, lower_model, tile)
from octosim.compiler.manifest import load_model, save_model, schedule_report, write_artifacts
from octosim.compiler.models import cnn_flow, mlp_packet, transformer_flow
from octosim.compiler.schedule import CompileConfig, offload, plan_efficiency, schedule
from octosim.errors import ShapeError
from octosim.oracle import direct_conv1d


def test_img2col_task_shape():
    conv = Conv1D(3, 1, 32, 1, 1, "relu", "conv1")
    assert img2col_1d(conv, 20) == MatmulTask(20, 3, 32, "conv1", "conv")
    assert img2col_1d(conv, 20, f=1000).m == 20_000
    assert conv_windows(20, 3, 1, 1) == 20 and conv_windows(20, 3, 1, 0) == 18
    assert pooled_length(5, 2, True) == 3 and pooled_length(5, 2, False) == 2
    with pytest.raises(ShapeError):
        img2col_1d(Conv1D(5, 1, 4, 1, 0, name="c"), 3)


def test_img2col_matrix_matches_direct_conv():
    rng = np.random.default_rng(0)
    x = rng.integers(-128, 128, (20, 4)).astype(np.int64)
    w = rng.integers(-128, 128, (12, 8)).astype(np.int64)
    for stride, pad in ((1, 1), (2, 0), (1, 0)):
        assert np.array_equal(img2col_matrix(x, 3, stride, pad) @ w, direct_conv1d(x, w, 3, stride, pad))


def test_lowered_model_shapes():
    tasks = lower_model(cnn_flow(0), f=1000)
    mm = [(t.layer, t.m, t.k_dim, t.n) for t in tasks if isinstance(t, MatmulTask)]
    assert mm == [("conv1", 20000, 3, 32), ("conv2", 10000, 96, 32), ("conv3", 5000, 96, 32),
                  ("fc", 1000, 96, 128), ("out", 1000, 128, 162)]
    pools = [t for t in tasks if isinstance(t, ElementOp)]
    assert [(p.rows, p.group) for p in pools] == [(20000, 20), (10000, 10), (5000, 5)]
    attn = [t for t in lower_model(transformer_flow(0)) if isinstance(t, MatmulTask)]
    assert [t.shape for t in attn] == [((15, 16), (16, 64))] * 3 + [
        ((15, 64), (64, 15)), ((15, 15), (15, 64)), ((15, 64), (64, 128)), ((15, 128), (128, 64))]
    assert [t.shape for t in lower_model(mlp_packet(0))] == [((1, 6), (6, 12)), ((1, 12), (12, 6)),
                                                             ((1, 6), (6, 3)), ((1, 3), (3, 2))]


def test_tile_counts():
    plan = tile(MatmulTask(15, 128, 64, "mlp2"), 16)
    assert (plan.chunks, plan.ntiles) == (8, 4)
    assert len(plan.sub_ops) == 32 and len(plan.aggregations) == 28
    plan = tile(MatmulTask(10, 3, 32, "x"), 32)
    assert len(plan.sub_ops) == 1 and not plan.aggregations
    plan = tile(MatmulTask(5, 40, 20, "x"), 16)
    assert [op.a for op in plan.sub_ops] == [16, 16, 8, 16, 16, 8]
    assert [ag.buffer for ag in plan.aggregations] == [1, 0, 1, 0]


@pytest.mark.parametrize("m,kd,n,k", [(15, 128, 64, 16), (7, 33, 17, 8), (1, 256, 256, 32), (3, 5, 2, 16)])
def test_execute_plan_exact(m, kd, n, k):
    rng = np.random.default_rng(m + kd + n)
    x = rng.integers(-128, 128, (m, kd), dtype=np.int8)
    w = rng.integers(-128, 128, (kd, n), dtype=np.int8)
    out = execute_plan(tile(MatmulTask(m, kd, n, "t"), k), x, w)
    assert np.array_equal(out, x.astype(np.int64) @ w.astype(np.int64))
    with pytest.raises(ShapeError):
        execute_plan(tile(MatmulTask(m, kd, n, "t"), k), x[:, :1], w)


def test_estimator_scaling():
    v = estimate(PerfEstimate(64, 4), "vector")
    s = estimate(PerfEstimate(64, 4), "systolic")
    assert v.delay_class == pytest.approx(5 / 4) and v.throughput_class == pytest.approx(4 / 5)
    assert s.delay_class == pytest.approx(2.0) and s.throughput_class == 4
    assert estimate(PerfEstimate(64, 8)).delay_class == pytest.approx(s.delay_class / 2)
    with pytest.raises(ValueError):
        estimate(PerfEstimate(0, 1))
    with pytest.raises(ValueError):
        estimate(PerfEstimate(4, 1), "optical")


def test_offload_rules():
    cfg = CompileConfig()
    assert offload(20, 3, 32, cfg)  # conv1: three-deep tiles waste the array
    assert not offload(10 * 128, 96, 32, cfg)  # conv2 over a batch of 128
    assert not offload(20, 3, 32, CompileConfig(collab=False))
    occ = CompileConfig(k=32, offload_rule="occupancy")  # (10,3)x(3,32) fills 9.375% of 32x32
    assert offload(20, 3, 32, occ) and not offload(20, 16, 16, occ)
    assert plan_efficiency(640, 16, 16, 16) > 0.9
    with pytest.raises(ValueError):
        offload(1, 1, 1, CompileConfig(offload_rule="coin"))


def test_placements():
    qm2 = quantize_model(cnn_flow(0))
    p = schedule(qm2).program()
    assert p.placement["conv1"] == "simdu" and p.placement["conv2"] == "arype"
    assert "pool1" not in p.placement  # fused into the VPE conv kernel
    off = schedule(qm2, CompileConfig(collab=False)).program()
    assert set(off.placement.values()) <= {"arype", "vu"}
    p3 = schedule(quantize_model(transformer_flow(0))).program()
    assert p3.placement["attn.qk"] == p3.placement["attn.pv"] == "simdu"
    p1 = schedule(quantize_model(mlp_packet(0)), CompileConfig(feature_offset=0))
    assert p1.batch == 1 and set(p1.placement.values()) == {"simdu"}


def test_compilation_is_deterministic():
    qm = quantize_model(transformer_flow(0))
    a = schedule(qm, CompileConfig(batch=4)).program()
    b = schedule(quantize_model(transformer_flow(0)), CompileConfig(batch=4)).program()
    assert a.image_digest() == b.image_digest()
    assert a.arype_text(0) != a.arype_text(1) or not a.double


def test_manifest_roundtrip(tmp_path):
    ir = cnn_flow(3)
    path = save_model(ir, tmp_path / "m.yaml")
    back = load_model(path)
    assert back.input_shape == ir.input_shape and back.input_scale == ir.input_scale
    assert [type(l) for l in back.layers] == [type(l) for l in ir.layers]
    for key, w in ir.weights.items():
        assert np.array_equal(back.weights[key], w)
    qa, qb = quantize_model(ir), quantize_model(back)
    assert schedule(qa, CompileConfig(batch=2)).program().image_digest() == \
        schedule(qb, CompileConfig(batch=2)).program().image_digest()


def test_custom_model_and_artifacts(tmp_path):
    layers = [Conv1D(3, 2, 8, 1, 1, "relu", "c"), MaxPool1D(2, True, "p"), Dense(8, 4, "none", "d")]
    ir = ModelIR("tiny", (6, 2), layers, random_weights(layers, 1)).validate()
    assert ir.shapes() == [(6, 8), (3, 8), (3, 4)]
    sched = schedule(quantize_model(ir), CompileConfig(batch=2))
    files = write_artifacts(sched.program(), sched, tmp_path)
    assert {p.name for p in files.values()} >= {"arype.s", "vpe.s", "layout.json", "schedule.txt"}
    assert "engine" in schedule_report(sched.program(), sched)
