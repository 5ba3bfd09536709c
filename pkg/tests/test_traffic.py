import struct

import dpkt
import pytest

from octosim.errors import BadMagic, IoError, MalformedFrame, UnsupportedProtocol
from octosim.traffic import (BACKWARD, FORWARD, PROTO_TCP, PROTO_UDP, TCP_SYN, FiveTuple, RawPacket,
                             SyntheticFlowSpec, build_frame, generate_trace, ip_int, parse_packet,
                             read_pcap, write_pcap)


def syn_packet():
    tup = FiveTuple(ip_int("10.0.0.1"), ip_int("10.0.0.2"), 1234, 80, PROTO_TCP)
    # 20 bytes of options make it the classic 74-byte SYN
    return tup, build_frame(tup, b"", TCP_SYN, tcp_options=b"\x02\x04\x05\xb4" + b"\x01" * 16)


def test_syn_matches_reference_parser():
    tup, frame = syn_packet()
    assert len(frame) == 74
    h = parse_packet(RawPacket(frame, 5))
    eth = dpkt.ethernet.Ethernet(frame)
    ip, tcp = eth.data, eth.data.data
    assert h.tuple == FiveTuple(struct.unpack("!I", ip.src)[0], struct.unpack("!I", ip.dst)[0],
                                tcp.sport, tcp.dport, ip.p)
    assert h.tuple == tup
    assert h.flags == tcp.flags and h.flags & TCP_SYN
    assert h.pkt_size == 74
    assert h.payload_len == len(tcp.data) == 0


def test_short_payload_is_zero_padded():
    tup = FiveTuple(1, 2, 3, 4, PROTO_UDP)
    h = parse_packet(RawPacket(build_frame(tup, b"abc"), 0), truncation=16)
    assert h.payload_prefix == b"abc" + b"\0" * 13
    assert h.payload_len == 3


def test_malformed_and_unsupported():
    with pytest.raises(MalformedFrame):
        parse_packet(RawPacket(b"\0" * 10, 0))
    frame = bytearray(build_frame(FiveTuple(1, 2, 3, 4, PROTO_UDP)))
    frame[14 + 9] = 47  # GRE
    with pytest.raises(UnsupportedProtocol):
        parse_packet(RawPacket(bytes(frame), 0))


def test_direction_is_canonical_orientation():
    t = FiveTuple(ip_int("10.0.0.1"), ip_int("10.0.0.9"), 5000, 80, PROTO_TCP)
    fwd = parse_packet(RawPacket(build_frame(t), 0))
    back = parse_packet(RawPacket(build_frame(t.reversed()), 1))
    assert fwd.tuple.key_bytes() == back.tuple.key_bytes()
    assert {fwd.direction, back.direction} == {FORWARD, BACKWARD}


def test_single_flow_trace():
    pkts = generate_trace(SyntheticFlowSpec(1, 20, seed=3))
    assert len(pkts) == 20
    keys = {parse_packet(p).tuple.key_bytes() for p in pkts}
    assert len(keys) == 1
    times = [p.arrival_ns for p in pkts]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_trace_counts_and_determinism():
    spec = SyntheticFlowSpec(1000, 20, seed=7)
    a, b = generate_trace(spec), generate_trace(spec)
    assert a == b
    assert len(a) == 20_000
    assert len({parse_packet(p).tuple.key_bytes() for p in a}) == 1000
    assert all(y.arrival_ns >= x.arrival_ns for x, y in zip(a, a[1:]))


def test_pcap_roundtrip_against_reference_reader(tmp_path):
    pkts = generate_trace(SyntheticFlowSpec(2, 2, seed=1))[:3]
    path = tmp_path / "three.pcap"
    write_pcap(path, pkts, nanosecond=True)
    got = read_pcap(path)
    assert got == pkts
    with open(path, "rb") as fh:
        ref = [(ts, buf) for ts, buf in dpkt.pcap.Reader(fh)]
    assert [buf for _, buf in ref] == [p.data for p in pkts]


def test_pcap_microsecond_timestamps(tmp_path):
    path = tmp_path / "us.pcap"
    write_pcap(path, [RawPacket(build_frame(FiveTuple(1, 2, 3, 4, 6)), 1_500_000_123)])
    assert read_pcap(path)[0].arrival_ns == 1_500_000_000


def test_pcap_empty_and_broken(tmp_path):
    empty = tmp_path / "empty.pcap"
    write_pcap(empty, [])
    assert read_pcap(empty) == []
    (tmp_path / "bad.pcap").write_bytes(b"\x00" * 30)
    with pytest.raises(BadMagic):
        read_pcap(tmp_path / "bad.pcap")
    data = empty.read_bytes() + struct.pack("<IIII", 0, 0, 100, 100) + b"\0" * 10
    (tmp_path / "trunc.pcap").write_bytes(data)
    with pytest.raises(IoError):
        read_pcap(tmp_path / "trunc.pcap")
    with pytest.raises(IoError):
        read_pcap(tmp_path / "missing.pcap")
