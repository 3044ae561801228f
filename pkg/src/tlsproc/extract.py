"""Packets to NetworkRecords: protocol identification, parsing, fingerprinting."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import BinaryIO, Iterator

from .fingerprint import encode_fingerprint
from .fusion import FiveTuple, NetworkRecord
from .pcap import PacketError, read_pcap, tcp_segment
from .tls_parser import DestinationContext, ParseError, identify_client_hello, parse_client_hello


@dataclass
class ExtractStats:
    packets: int = 0
    tcp_data: int = 0
    client_hellos: int = 0
    errors: dict[str, int] = field(default_factory=dict)

    def error(self, kind: str) -> None:
        self.errors[kind] = self.errors.get(kind, 0) + 1


def extract_records(f: BinaryIO, stats: ExtractStats | None = None) -> Iterator[NetworkRecord]:
    """One record per flow whose first data-bearing packet is a client_hello."""
    stats = stats if stats is not None else ExtractStats()
    seen: set[tuple] = set()
    for ts, linktype, frame in read_pcap(f):
        stats.packets += 1
        try:
            seg = tcp_segment(ts, linktype, frame)
        except PacketError:
            stats.error("packet")
            continue
        if seg is None or not seg.payload:
            continue
        flow = (seg.src_ip, seg.dst_ip, seg.src_port, seg.dst_port)
        if flow in seen:
            continue
        seen.add(flow)
        stats.tcp_data += 1
        if len(seg.payload) < 8 or not identify_client_hello(seg.payload):
            continue
        try:
            hello = parse_client_hello(seg.payload)
        except ParseError as exc:
            stats.error(type(exc).__name__.lower())
            continue
        stats.client_hellos += 1
        yield NetworkRecord(
            FiveTuple(seg.src_ip, seg.dst_ip, seg.src_port, seg.dst_port, "tcp"),
            seg.timestamp,
            encode_fingerprint(hello),
            DestinationContext(seg.dst_ip, seg.dst_port, hello.server_name),
        )
