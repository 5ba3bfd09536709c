"""Acceptance criteria, one test each. Every test prints a single PASS/FAIL line."""
import struct

import numpy as np
import pytest

from octosim.arype import PCACHE, AryInstr, AryPE, ArrayConfig, Desc, occupancy
from octosim.cli import compare_oracle
from octosim.compiler.ir import quantize_model
from octosim.compiler.lower import MatmulTask, execute_plan, lower_model, tile
from octosim.compiler.models import transformer_flow
from octosim.compiler.schedule import schedule
from octosim.controller import Controller
from octosim.extractor import COLLISION, READY, Extractor, ExtractorConfig, feature_program
from octosim.fabric import COMPUTE0, COMPUTE1, Fabric
from octosim.kernels import hash_keys
from octosim.oracle import golden_accumulate, golden_word
from octosim.system import System, saturated
from octosim.traffic import FiveTuple, ParsedHeader, SyntheticFlowSpec, generate_trace, parse_packet
from octosim.usecase import load_config


@pytest.fixture
def verdict(capsys):
    def report(num, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'}  {title}: {detail}")
        assert ok, detail
    return report


def run_preset(name, flows=None, collab=None):
    ucfg = load_config(name).with_overrides(collab, flows)
    sc = ucfg.system_config()
    sc.trace = True
    qm = quantize_model(ucfg.model_ir())
    headers = ucfg.headers()
    sim = System(qm, sc)
    res = sim.run(headers)
    ec = sc.extractor
    return qm, sim, res, compare_oracle(qm, res, sim.fprog, headers, ec.threshold, ec.time_unit_ns)


def test_c1_bit_exact_layer_boundaries(verdict):
    details, ok = [], True
    for name, flows in (("usecase1", 120), ("usecase2", 130), ("usecase3", 130)):
        for collab in (False, True):
            qm, _, res, o = run_preset(name, flows, collab)
            layers = [l.name for l in qm.layers]
            full = collab or set(res.boundaries) == set(layers)  # serial runs materialise every layer
            ok &= o["pass"] and res.samples >= 100 and full
            details.append(f"{name}/{'on' if collab else 'off'} {res.samples} samples "
                           f"{len(res.boundaries)}/{len(layers)} boundaries {'ok' if o['pass'] else o['first_divergence']}")
    verdict(1, "bit-exact at every layer boundary", ok, "; ".join(details))


def test_c2_feature_words_and_extractor_rate(verdict):
    pkts = [parse_packet(p) for p in generate_trace(SyntheticFlowSpec(1000, 20, seed=11))]
    prog = feature_program([13, 21, 36])
    ex = Extractor(ExtractorConfig(table_depth=8192, threshold=20), prog, Fabric())
    dropped = set()
    for h in pkts:
        ev, _ = ex.ingest(h)
        if ev.kind == COLLISION:
            dropped.add(h.tuple.key_bytes())
    golden = golden_accumulate(pkts, 20)
    ready = equal = 0
    while (e := ex.pop_ready()) is not None:
        ready += 1
        equal += ex.feature_word(e.slot).tobytes() == golden_word(golden[e.tuple.key_bytes()], prog.layout)
    mpps = ex.modeled_mpps()
    ok = ready == equal and ready + len(dropped) == 1000 and mpps >= 31.0
    verdict(2, "feature words vs golden, extractor rate", ok,
            f"{equal}/{ready} ready words equal ({len(dropped)} flows dropped on collision), "
            f"{mpps:.1f} Mpkt/s modeled (>= 31)")


def test_c3_small_tile_occupancy(verdict):
    k, l = 32, 10
    rng = np.random.default_rng(3)
    x = rng.integers(-128, 128, (l, 3), dtype=np.int8)
    w = rng.integers(-128, 128, (3, 32), dtype=np.int8)
    fab = Fabric()
    fab[COMPUTE0].store_bytes(0, x.view(np.uint8).reshape(-1))
    pe = AryPE(fab, ArrayConfig(k))
    pe.load([], pcache=w.reshape(-1))
    pe.run([AryInstr("SETA", 2, Desc(PCACHE, 0, rows=3, cols=32)),
            AryInstr("SETA", 0, Desc(COMPUTE0, 0, rows=l, cols=3)),
            AryInstr("SETA", 1, Desc(COMPUTE1, 0, i32=True)),
            AryInstr("LD", 2), AryInstr("MM", l=l, src=0, dst=1)])
    measured = pe.util.active_mac_cycles / (l * k * k)
    out = fab[COMPUTE1].load_bytes(0, l * 32 * 4).view(np.int32).reshape(l, 32)
    ok = (abs(100 * measured - 9.375) <= 0.1 and abs(100 * occupancy(3, 32, k) - 9.375) <= 0.1
          and np.array_equal(out, x.astype(np.int64) @ w.astype(np.int64)))
    verdict(3, "(10,3)x(3,32) on 32x32 occupancy", ok,
            f"cycle-level {100 * measured:.3f}%, closed form {100 * occupancy(3, 32, k):.3f}% (9.375 +/- 0.1)")


def test_c4_collaboration_gain(verdict):
    res = {}
    for collab in (True, False):
        ucfg = load_config("usecase2").with_overrides(collab=collab)
        sc = ucfg.system_config()
        sched = schedule(quantize_model(ucfg.model_ir()), sc.compile)
        assert sc.compile.k == 16
        res[collab] = saturated(sched, 1000, sc.compute_hz)
    ratio = res[True].throughput / res[False].throughput
    eff_on, eff_off = res[True].arype_utilization, res[False].arype_utilization
    ok = ratio >= 1.5 and eff_off < 0.60 and eff_on > 0.75
    verdict(4, "usecase2 f=1000 k=16 collaboration", ok,
            f"throughput ratio {ratio:.2f} (>= 1.5), AryPE efficiency {100 * eff_off:.1f}% without (< 60%), "
            f"{100 * eff_on:.1f}% with (> 75%)")


def test_c5_packet_latency(verdict):
    _, sim, res, _ = run_preset("usecase1")
    lat = np.asarray(res.latency_ns)
    ok = sim.cfg.compute_hz == 222e6 and 100 <= lat.mean() <= 300 and lat.size >= 100
    verdict(5, "usecase1 latency at 222 MHz", ok,
            f"mean {lat.mean():.1f} ns, min {lat.min():.1f}, max {lat.max():.1f} over {lat.size} packets "
            f"(window 100..300 ns)")


def test_c6_tiling_with_vu_aggregation(verdict):
    rng = np.random.default_rng(2024)
    bad = []
    for i in range(1000):
        m, kd, n = (int(v) for v in rng.integers(1, 257, 3))
        k = int(rng.choice([8, 16, 32]))
        x = rng.integers(-128, 128, (m, kd), dtype=np.int8)
        w = rng.integers(-128, 128, (kd, n), dtype=np.int8)
        if not np.array_equal(execute_plan(tile(MatmulTask(m, kd, n, "t"), k), x, w),
                              x.astype(np.int64) @ w.astype(np.int64)):
            bad.append((m, kd, n, k))
    verdict(6, "tiled matmul + VU aggregation vs oracle", not bad,
            f"{1000 - len(bad)}/1000 random shapes exact" + (f", first failure {bad[0]}" if bad else ""))


def _colliding_pairs(depth, rng):
    """One (holder, intruder) tuple pair per slot, both hashing to that slot."""
    n = 24 * depth
    src = rng.integers(0, 1 << 31, n, dtype=np.uint64)
    dst = src + rng.integers(1, 1 << 20, n, dtype=np.uint64)  # src < dst keeps tuples canonical
    ports = rng.integers(1024, 65536, (n, 2))
    tuples = [FiveTuple(int(a), int(b), int(p), int(q), 6) for a, b, (p, q) in zip(src, dst, ports)]
    keys = np.frombuffer(b"".join(struct.pack("!IIHHB", t.src_ip, t.dst_ip, t.src_port, t.dst_port, 6)
                                  for t in tuples), np.uint8).reshape(n, 13)
    slots = (hash_keys(keys) & np.uint64(depth - 1)).astype(np.int64)
    buckets = {}
    for t, s in zip(tuples, slots):
        buckets.setdefault(int(s), []).append(t)
    return [(buckets[s][0], buckets[s][1]) for s in range(depth)]


def test_c7_flow_lifecycles_and_collisions(verdict):
    depth, thr = 8192, 4
    prog = feature_program([11, 12, 36])
    ex = Extractor(ExtractorConfig(table_depth=depth, threshold=thr), prog, Fabric())
    ctrl = Controller(recycle=ex.recycle)
    rng = np.random.default_rng(7)
    t, held, audits, own = 0, [], 0, []
    for holder, intruder in _colliding_pairs(depth, rng):
        slot = ex.slot_of(holder)
        for j in range(thr + 1):
            t += 1000
            tup = intruder if j == 2 else holder
            h = ParsedHeader(tup, 64 + 37 * j, 0x10, 0, t, b"\0" * 16, 10)
            ev, _ = ex.ingest(h)
            if tup is holder:
                own.append(h)
            elif ev.kind != COLLISION or ex.tags[slot] != holder:
                held.append(slot)
        assert ev.kind == READY
        e = ex.pop_ready()
        word = ex.feature_word(e.slot).tobytes()
        ctrl.mark_written(("compute0", 0))
        ctrl.on_fin(e.tuple, e.slot, ("compute0", 0), [0, 1], t)
        ex.audit()
        audits += 1
        g = golden_accumulate(own[-thr:], thr)[holder.key_bytes()]
        if word != golden_word(g, prog.layout):
            held.append(slot)
    st = ex.stats
    ok = (ex.occupancy() == 0 and st["occupancy"] == 0 and st["recycled"] == depth
          and st["collisions"] == depth and not held and len(ctrl.records) == depth)
    verdict(7, "8192 flow lifecycles", ok,
            f"residual occupancy {ex.occupancy()}, recycled {st['recycled']}, collisions counted "
            f"{st['collisions']}, corrupted slots {len(held)}, audits {audits}")


def test_c8_attention_shapes_and_utilization(verdict):
    want = [((15, 16), (16, 64))] * 3 + [((15, 64), (64, 15)), ((15, 15), (15, 64)),
                                          ((15, 64), (64, 128)), ((15, 128), (128, 64))]
    got = [t.shape for t in lower_model(transformer_flow(0)) if isinstance(t, MatmulTask)]
    ucfg = load_config("usecase3")
    sc = ucfg.system_config()
    sched = schedule(quantize_model(ucfg.model_ir()), sc.compile)
    util = saturated(sched, 1000, sc.compute_hz).arype_utilization
    ok = got == want and sc.compile.collab and util >= 0.85
    verdict(8, "usecase3 matmul shapes and utilization", ok,
            f"shapes {'match' if got == want else got}, AryPE utilization {100 * util:.1f}% with collaboration (>= 85%)")
