import numpy as np
import pytest

from octosim.errors import OutOfMemory, OutOfRange, Overlap, PortConflict
from octosim.fabric import COMPUTE0, COMPUTE1, FEATURE, Address, Fabric

W = bytes(range(16))


def test_geometry():
    g = Fabric().geometry()
    assert g[FEATURE] == {"depth": 8192, "width_bits": 128, "bytes": 128 * 1024}
    assert g[COMPUTE0]["depth"] == g[COMPUTE1]["depth"] == 16384
    assert g[COMPUTE0]["bytes"] == 256 * 1024


def test_write_then_read_and_zero_init():
    f = Fabric()
    a = Address(COMPUTE0, 7)
    assert f.read(a, 0, 0) == bytes(16)
    f.write(a, W, 0, 1)
    assert f.read(a, 1, 2) == W


def test_dual_port_same_cycle():
    f = Fabric()
    f.read(Address(COMPUTE1, 0), 0, 5)
    f.read(Address(COMPUTE1, 1), 1, 5)
    with pytest.raises(PortConflict):
        f.read(Address(COMPUTE1, 2), 0, 5)
    with pytest.raises(PortConflict):
        f.read(Address(COMPUTE1, 2), 2, 6)


def test_read_first_on_race():
    f = Fabric()
    a = Address(FEATURE, 3)
    f.write(a, W, 1, 0)
    new = bytes(reversed(W))
    f.write(a, new, 1, 1)
    assert f.read(a, 0, 1) == W
    assert f.read(a, 0, 2) == new


def test_out_of_range():
    f = Fabric()
    with pytest.raises(OutOfRange):
        f.write(Address(FEATURE, 8192), W, 0, 0)
    with pytest.raises(OutOfRange):
        f[COMPUTE0].load_bytes(16384 * 16 - 4, 8)


def test_ping_pong_schedule_has_no_conflicts():
    # AryPE (port 1) writes bank t%2 while VU (port 0) reads the other bank
    f = Fabric()
    banks = (COMPUTE0, COMPUTE1)
    for t in range(1000):
        f.write(Address(banks[t % 2], t % 64), W, 1, t)
        f.read(Address(banks[(t + 1) % 2], t % 64), 0, t)
        f.read(Address(banks[t % 2], (t + 32) % 64), 0, t)


def test_allocation():
    f = Fabric()
    a = f.allocate("a", 100)
    assert a.base == 0
    b = f.allocate("b", 50)
    assert b.base >= a.end
    with pytest.raises(OutOfMemory):
        f.allocate("big", 16385)
    with pytest.raises(Overlap):
        f.allocate("c", 10, base=90)
    with pytest.raises(Overlap):
        f.allocate("a", 1)
    f.free("a")
    assert f.allocate("d", 100).base == 0


def test_dump_and_load(tmp_path):
    f = Fabric()
    r = f.allocate("w", 4, COMPUTE1)
    f.store_array(r, np.arange(64, dtype=np.int8))
    f.dump(tmp_path)
    g = Fabric.load(tmp_path)
    assert np.array_equal(g.region_array(g.regions["w"], np.int8, (64,)), np.arange(64))
