"""Packet ingest: pcap I/O, header parsing and a seeded synthetic flow generator."""
from __future__ import annotations

import socket
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Tuple

import numpy as np

from . import config
from .errors import BadMagic, ConfigError, IoError, MalformedFrame, UnsupportedProtocol

PROTO_ICMP = 1
PROTO_TCP = 6
PROTO_UDP = 17
SUPPORTED_PROTOCOLS = (PROTO_ICMP, PROTO_TCP, PROTO_UDP)

ETH_LEN = 14
ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100

FORWARD = 0
BACKWARD = 1

TCP_FIN, TCP_SYN, TCP_RST, TCP_PSH, TCP_ACK = 0x01, 0x02, 0x04, 0x08, 0x10


@dataclass(frozen=True)
class RawPacket:
    data: bytes
    arrival_ns: int


@dataclass(frozen=True, order=True)
class FiveTuple:
    src_ip: int
    dst_ip: int
    src_port: int
    dst_port: int
    protocol: int

    def reversed(self) -> "FiveTuple":
        return FiveTuple(self.dst_ip, self.src_ip, self.dst_port, self.src_port, self.protocol)

    def is_canonical(self) -> bool:
        """True when the lower IP:port endpoint is the source."""
        return (self.src_ip, self.src_port) <= (self.dst_ip, self.dst_port)

    def canonical(self) -> "FiveTuple":
        return self if self.is_canonical() else self.reversed()

    def key_bytes(self) -> bytes:
        """13-byte big-endian encoding of the canonical orientation."""
        c = self.canonical()
        return struct.pack("!IIHHB", c.src_ip, c.dst_ip, c.src_port, c.dst_port, c.protocol)

    def __str__(self) -> str:
        return (f"{ip_str(self.src_ip)}:{self.src_port}->"
                f"{ip_str(self.dst_ip)}:{self.dst_port}/{self.protocol}")


def ip_str(ip: int) -> str:
    return socket.inet_ntoa(struct.pack("!I", ip))


def ip_int(text: str) -> int:
    return struct.unpack("!I", socket.inet_aton(text))[0]


@dataclass(frozen=True)
class ParsedHeader:
    tuple: FiveTuple
    pkt_size: int
    flags: int
    direction: int
    arrival_ns: int
    payload_prefix: bytes
    payload_len: int = 0


def parse_packet(pkt: RawPacket, truncation: int = config.PAYLOAD_BYTES) -> ParsedHeader:
    """Parse an Ethernet/IPv4 frame into the extractor's meta fields.

    ``direction`` is relative to the canonical tuple orientation; the
    extractor turns it into a flow-relative bit using the orientation it
    recorded for the flow's first packet.
    """
    buf = pkt.data
    if len(buf) < ETH_LEN + 20:
        raise MalformedFrame(f"frame of {len(buf)} bytes cannot hold an IPv4 header")
    off = 12
    ethertype = struct.unpack_from("!H", buf, off)[0]
    off += 2
    if ethertype == ETHERTYPE_VLAN:
        ethertype = struct.unpack_from("!H", buf, off + 2)[0]
        off += 4
    if ethertype != ETHERTYPE_IPV4:
        raise UnsupportedProtocol(f"ethertype 0x{ethertype:04x}")
    if len(buf) < off + 20:
        raise MalformedFrame("truncated IPv4 header")
    ver_ihl = buf[off]
    if ver_ihl >> 4 != 4:
        raise UnsupportedProtocol(f"IP version {ver_ihl >> 4}")
    ihl = (ver_ihl & 0x0F) * 4
    if ihl < 20 or len(buf) < off + ihl:
        raise MalformedFrame("bad IHL")
    proto = buf[off + 9]
    src_ip, dst_ip = struct.unpack_from("!II", buf, off + 12)
    l4 = off + ihl
    if proto == PROTO_TCP:
        if len(buf) < l4 + 20:
            raise MalformedFrame("truncated TCP header")
        sport, dport = struct.unpack_from("!HH", buf, l4)
        doff = (buf[l4 + 12] >> 4) * 4
        if doff < 20 or len(buf) < l4 + doff:
            raise MalformedFrame("bad TCP data offset")
        flags = buf[l4 + 13]
        pay = l4 + doff
    elif proto == PROTO_UDP:
        if len(buf) < l4 + 8:
            raise MalformedFrame("truncated UDP header")
        sport, dport = struct.unpack_from("!HH", buf, l4)
        flags = 0
        pay = l4 + 8
    elif proto == PROTO_ICMP:
        if len(buf) < l4 + 8:
            raise MalformedFrame("truncated ICMP header")
        sport = dport = 0
        flags = buf[l4]  # ICMP type
        pay = l4 + 8
    else:
        raise UnsupportedProtocol(f"IP protocol {proto}")
    tup = FiveTuple(src_ip, dst_ip, sport, dport, proto)
    payload = buf[pay:]
    prefix = bytes(payload[:truncation]).ljust(truncation, b"\x00")
    return ParsedHeader(
        tuple=tup,
        pkt_size=len(buf),
        flags=flags,
        direction=FORWARD if tup.is_canonical() else BACKWARD,
        arrival_ns=pkt.arrival_ns,
        payload_prefix=prefix,
        payload_len=len(payload),
    )


def _ip_checksum(hdr: bytes) -> int:
    s = sum(struct.unpack(f"!{len(hdr) // 2}H", hdr))
    while s >> 16:
        s = (s & 0xFFFF) + (s >> 16)
    return ~s & 0xFFFF


def build_frame(tup: FiveTuple, payload: bytes = b"", flags: int = 0,
                tcp_options: bytes = b"") -> bytes:
    """Serialise an Ethernet/IPv4/{TCP,UDP,ICMP} frame (inverse of parse_packet)."""
    if tup.protocol == PROTO_TCP:
        opts = tcp_options + b"\x00" * (-len(tcp_options) % 4)
        doff = (20 + len(opts)) // 4
        l4 = struct.pack("!HHIIBBHHH", tup.src_port, tup.dst_port, 1, 0,
                         doff << 4, flags & 0xFF, 65535, 0, 0) + opts
    elif tup.protocol == PROTO_UDP:
        l4 = struct.pack("!HHHH", tup.src_port, tup.dst_port, 8 + len(payload), 0)
    elif tup.protocol == PROTO_ICMP:
        l4 = struct.pack("!BBHI", flags & 0xFF, 0, 0, 0)
    else:
        raise UnsupportedProtocol(f"IP protocol {tup.protocol}")
    total = 20 + len(l4) + len(payload)
    ip = struct.pack("!BBHHHBBHII", 0x45, 0, total, 0, 0x4000, 64, tup.protocol, 0,
                     tup.src_ip, tup.dst_ip)
    ip = ip[:10] + struct.pack("!H", _ip_checksum(ip)) + ip[12:]
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01" + struct.pack("!H", ETHERTYPE_IPV4)
    return eth + ip + l4 + payload


def header_overhead(protocol: int) -> int:
    return ETH_LEN + 20 + (20 if protocol == PROTO_TCP else 8)


# ---------------------------------------------------------------------------
# synthetic traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticFlowSpec:
    """Parameters of a generated trace.

    ``size_distribution`` is ``("uniform", lo, hi)`` or ``("constant", v)`` in
    frame bytes; ``interval_distribution`` is ``("exponential", mean_ns)``,
    ``("uniform", lo_ns, hi_ns)`` or ``("constant", ns)``. Flow start times are
    drawn uniformly from ``[0, start_spread_ns]``.
    """

    flow_count: int
    packets_per_flow: int
    size_distribution: Tuple = ("uniform", 64, 1500)
    interval_distribution: Tuple = ("exponential", 200_000)
    seed: int = 0
    start_spread_ns: int = 0
    reverse_prob: float = 0.3
    udp_fraction: float = 0.3

    def validate(self) -> None:
        if self.flow_count < 1 or self.packets_per_flow < 1:
            raise ConfigError("flow_count and packets_per_flow must be positive")
        if not 0.0 <= self.reverse_prob <= 1.0 or not 0.0 <= self.udp_fraction <= 1.0:
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.start_spread_ns < 0:
            raise ConfigError("start_spread_ns must be >= 0")


def _draw(rng, dist, n):
    kind = dist[0]
    if kind == "constant":
        return np.full(n, float(dist[1]))
    if kind == "uniform":
        return rng.uniform(float(dist[1]), float(dist[2]), n)
    if kind == "exponential":
        return rng.exponential(float(dist[1]), n)
    raise ConfigError(f"unknown distribution {kind!r}")


def _distinct_tuples(rng, count: int, udp_fraction: float) -> List[FiveTuple]:
    seen = set()
    out: List[FiveTuple] = []
    while len(out) < count:
        src = int(rng.integers(0x0A000001, 0x0AFFFFFF))
        dst = int(rng.integers(0xC0A80001, 0xC0A8FFFF))
        proto = PROTO_UDP if rng.random() < udp_fraction else PROTO_TCP
        sport = int(rng.integers(1024, 65536))
        dport = int(rng.choice([53, 80, 443, 8080, 22, 123])) if rng.random() < 0.7 \
            else int(rng.integers(1, 65536))
        t = FiveTuple(src, dst, sport, dport, proto)
        key = t.key_bytes()
        if key in seen:
            continue
        seen.add(key)
        out.append(t)
    return out


def generate_flows(spec: SyntheticFlowSpec):
    """Per-flow packet lists: ``[(tuple, [(arrival_ns, RawPacket), ...]), ...]``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    tuples = _distinct_tuples(rng, spec.flow_count, spec.udp_fraction)
    flows = []
    for tup in tuples:
        n = spec.packets_per_flow
        start = int(rng.integers(0, spec.start_spread_ns + 1))
        gaps = np.maximum(np.rint(_draw(rng, spec.interval_distribution, n)), 1000).astype(np.int64)
        gaps[0] = 0
        times = start + np.cumsum(gaps)
        sizes = np.rint(_draw(rng, spec.size_distribution, n)).astype(np.int64)
        back = rng.random(n) < spec.reverse_prob
        back[0] = False
        pkts = []
        for i in range(n):
            t = tup.reversed() if back[i] else tup
            size = max(int(sizes[i]), header_overhead(t.protocol))
            payload = rng.integers(0, 256, size - header_overhead(t.protocol), dtype=np.uint8).tobytes()
            flags = 0
            if t.protocol == PROTO_TCP:
                flags = TCP_SYN if i == 0 else (TCP_ACK | (TCP_PSH if payload else 0))
            pkts.append(RawPacket(build_frame(t, payload, flags), int(times[i])))
        flows.append((tup, pkts))
    return flows


def generate_trace(spec: SyntheticFlowSpec) -> List[RawPacket]:
    """Interleave all generated flows by arrival time (stable on ties)."""
    flows = generate_flows(spec)
    merged = [(p.arrival_ns, fi, pi, p) for fi, (_, pkts) in enumerate(flows)
              for pi, p in enumerate(pkts)]
    merged.sort(key=lambda e: (e[0], e[1], e[2]))
    return [e[3] for e in merged]


# ---------------------------------------------------------------------------
# pcap
# ---------------------------------------------------------------------------

PCAP_MAGIC_US = 0xA1B2C3D4
PCAP_MAGIC_NS = 0xA1B23C4D
LINKTYPE_ETHERNET = 1


def read_pcap(path) -> List[RawPacket]:
    return list(iter_pcap(path))


def iter_pcap(path) -> Iterator[RawPacket]:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    if len(data) < 24:
        raise BadMagic("file shorter than a pcap global header")
    for endian in ("<", ">"):
        magic = struct.unpack_from(endian + "I", data, 0)[0]
        if magic in (PCAP_MAGIC_US, PCAP_MAGIC_NS):
            break
    else:
        raise BadMagic(f"unknown magic 0x{struct.unpack_from('<I', data, 0)[0]:08x}")
    scale = 1 if magic == PCAP_MAGIC_NS else 1000
    off = 24
    while off < len(data):
        if off + 16 > len(data):
            raise IoError("truncated pcap record header")
        sec, frac, incl, _orig = struct.unpack_from(endian + "IIII", data, off)
        off += 16
        if off + incl > len(data):
            raise IoError("truncated pcap record body")
        yield RawPacket(bytes(data[off:off + incl]), sec * 1_000_000_000 + frac * scale)
        off += incl


def write_pcap(path, packets: Iterable[RawPacket], nanosecond: bool = False) -> None:
    magic = PCAP_MAGIC_NS if nanosecond else PCAP_MAGIC_US
    chunks = [struct.pack("<IHHiIII", magic, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET)]
    for p in packets:
        sec, rem = divmod(p.arrival_ns, 1_000_000_000)
        frac = rem if nanosecond else rem // 1000
        chunks.append(struct.pack("<IIII", sec, frac, len(p.data), len(p.data)))
        chunks.append(p.data)
    Path(path).write_bytes(b"".join(chunks))
