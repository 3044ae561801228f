"""Minimal classic-pcap reading and writing, plus TCP payload extraction.

Supports Ethernet (with 802.1Q tags) and raw-IP link types; pcapng is not
handled.
"""

from __future__ import annotations

import ipaddress
import struct
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Optional

LINKTYPE_ETHERNET = 1
LINKTYPE_RAW = 101
LINKTYPE_IPV4 = 228
LINKTYPE_IPV6 = 229

_MAGIC = {
    b"\xd4\xc3\xb2\xa1": ("<", 1e-6),
    b"\xa1\xb2\xc3\xd4": (">", 1e-6),
    b"\x4d\x3c\xb2\xa1": ("<", 1e-9),
    b"\xa1\xb2\x3c\x4d": (">", 1e-9),
}


class PcapError(ValueError):
    pass


class PacketError(ValueError):
    """A single packet could not be decoded."""


@dataclass(frozen=True)
class TcpSegment:
    timestamp: float
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    payload: bytes


def read_pcap(f: BinaryIO) -> Iterator[tuple[float, int, bytes]]:
    """Yield (timestamp, linktype, frame) for every record in a classic pcap stream."""
    header = f.read(24)
    if len(header) < 24 or header[:4] not in _MAGIC:
        raise PcapError("not a classic pcap file")
    endian, tick = _MAGIC[header[:4]]
    linktype = struct.unpack(endian + "I", header[20:24])[0] & 0x0FFFFFFF
    rec = struct.Struct(endian + "IIII")
    while True:
        hdr = f.read(rec.size)
        if not hdr:
            return
        if len(hdr) < rec.size:
            raise PcapError("truncated packet header")
        sec, frac, incl_len, _ = rec.unpack(hdr)
        frame = f.read(incl_len)
        if len(frame) < incl_len:
            raise PcapError("truncated packet data")
        yield sec + frac * tick, linktype, frame


def _ip_payload(linktype: int, frame: bytes) -> bytes:
    if linktype == LINKTYPE_ETHERNET:
        if len(frame) < 14:
            raise PacketError("short Ethernet frame")
        ethertype, off = struct.unpack("!H", frame[12:14])[0], 14
        while ethertype in (0x8100, 0x88A8):
            if len(frame) < off + 4:
                raise PacketError("short VLAN tag")
            ethertype = struct.unpack("!H", frame[off + 2:off + 4])[0]
            off += 4
        if ethertype not in (0x0800, 0x86DD):
            return b""
        return frame[off:]
    if linktype in (LINKTYPE_RAW, LINKTYPE_IPV4, LINKTYPE_IPV6):
        return frame
    raise PacketError(f"unsupported link type {linktype}")


def tcp_segment(timestamp: float, linktype: int, frame: bytes) -> Optional[TcpSegment]:
    """Decode a frame down to TCP; None for anything that is not TCP over IP."""
    ip = _ip_payload(linktype, frame)
    if not ip:
        return None
    version = ip[0] >> 4
    if version == 4:
        if len(ip) < 20:
            raise PacketError("short IPv4 header")
        ihl = (ip[0] & 0x0F) * 4
        total = struct.unpack("!H", ip[2:4])[0]
        if ihl < 20 or total < ihl or len(ip) < ihl:
            raise PacketError("bad IPv4 header lengths")
        if ip[6] & 0x1F or ip[7]:
            return None  # non-first fragment
        proto = ip[9]
        src, dst = ipaddress.IPv4Address(ip[12:16]), ipaddress.IPv4Address(ip[16:20])
        body = ip[ihl:min(total, len(ip))]
    elif version == 6:
        if len(ip) < 40:
            raise PacketError("short IPv6 header")
        plen = struct.unpack("!H", ip[4:6])[0]
        proto = ip[6]
        src, dst = ipaddress.IPv6Address(ip[8:24]), ipaddress.IPv6Address(ip[24:40])
        body = ip[40:40 + plen]
    else:
        raise PacketError(f"IP version {version}")
    if proto != 6:
        return None
    if len(body) < 20:
        raise PacketError("short TCP header")
    sport, dport = struct.unpack("!HH", body[:4])
    data_off = (body[12] >> 4) * 4
    if data_off < 20 or data_off > len(body):
        raise PacketError("bad TCP data offset")
    return TcpSegment(timestamp, str(src), str(dst), sport, dport, bytes(body[data_off:]))


def write_pcap(f: BinaryIO, packets, linktype: int = LINKTYPE_ETHERNET) -> None:
    """Write (timestamp, frame) pairs as a little-endian microsecond pcap."""
    f.write(struct.pack("<IHHiIII", 0xA1B2C3D4, 2, 4, 0, 0, 65535, linktype))
    for ts, frame in packets:
        sec = int(ts)
        usec = int(round((ts - sec) * 1e6))
        f.write(struct.pack("<IIII", sec, usec, len(frame), len(frame)))
        f.write(frame)


def ipv4_tcp_frame(src: str, dst: str, sport: int, dport: int, payload: bytes,
                   ethernet: bool = True, flags: int = 0x18) -> bytes:
    """Assemble an Ethernet/IPv4/TCP frame (checksums left zero)."""
    tcp = struct.pack("!HHIIBBHHH", sport, dport, 1, 0, 5 << 4, flags, 65535, 0, 0) + payload
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(tcp), 0, 0x4000, 64, 6, 0,
                     ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed) + tcp
    if not ethernet:
        return ip
    return b"\x00\x11\x22\x33\x44\x55" + b"\x66\x77\x88\x99\xaa\xbb" + b"\x08\x00" + ip
