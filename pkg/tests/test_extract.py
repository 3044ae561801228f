import io
import ipaddress
import struct

import pytest

from tlsproc.extract import ExtractStats, extract_records
from tlsproc.pcap import (
    LINKTYPE_ETHERNET, LINKTYPE_RAW, PacketError, PcapError, ipv4_tcp_frame, read_pcap, tcp_segment,
    write_pcap,
)
from tlsproc.tls_parser import build_client_hello

from hello_corpus import CASES, summary_of

HELLO_CASE = CASES[0]
HELLO = build_client_hello(summary_of(HELLO_CASE))


def pcap_bytes(packets, linktype=LINKTYPE_ETHERNET):
    buf = io.BytesIO()
    write_pcap(buf, packets, linktype)
    return buf.getvalue()


def udp_frame(src, dst, sport, dport, payload):
    udp = struct.pack("!HHHH", sport, dport, 8 + len(payload), 0) + payload
    ip = struct.pack("!BBHHHBBH4s4s", 0x45, 0, 20 + len(udp), 0, 0, 64, 17, 0,
                     ipaddress.IPv4Address(src).packed, ipaddress.IPv4Address(dst).packed) + udp
    return b"\x00" * 12 + b"\x08\x00" + ip


def ipv6_tcp_raw(src, dst, sport, dport, payload):
    tcp = struct.pack("!HHIIBBHHH", sport, dport, 1, 0, 5 << 4, 0x18, 65535, 0, 0) + payload
    return (struct.pack("!IHBB", 6 << 28, len(tcp), 6, 64)
            + ipaddress.IPv6Address(src).packed + ipaddress.IPv6Address(dst).packed + tcp)


def test_single_hello():
    data = pcap_bytes([(1700000000.25, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 51000, 443, HELLO))])
    records = list(extract_records(io.BytesIO(data)))
    assert len(records) == 1
    r = records[0]
    assert r.fingerprint == HELLO_CASE[4]
    assert r.five_tuple == ("10.0.0.2", "1.2.3.4", 51000, 443, "tcp")
    assert r.destination.server_name == "example.com" and r.destination.dst_ip == "1.2.3.4"
    assert r.start_time == pytest.approx(1700000000.25)


def test_every_corpus_case_through_pcap():
    packets = [(1.0 + i, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 50000 + i, 443, build_client_hello(summary_of(c))))
               for i, c in enumerate(CASES)]
    records = list(extract_records(io.BytesIO(pcap_bytes(packets))))
    assert [r.fingerprint for r in records] == [c[4] for c in CASES]


def test_udp_only_gives_nothing():
    data = pcap_bytes([(1.0, udp_frame("10.0.0.2", "8.8.8.8", 5353, 53, HELLO))])
    stats = ExtractStats()
    assert list(extract_records(io.BytesIO(data), stats)) == []
    assert stats.packets == 1 and stats.client_hellos == 0


def test_only_first_data_packet_per_flow():
    frames = [
        (1.0, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 51000, 443, b"", flags=0x02)),
        (1.1, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 51000, 443, b"GET / HTTP/1.1\r\n\r\n")),
        (1.2, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 51000, 443, HELLO)),
        (1.3, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 51001, 443, HELLO)),
        (1.4, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 51001, 443, HELLO)),
    ]
    records = list(extract_records(io.BytesIO(pcap_bytes(frames))))
    assert [r.five_tuple.src_port for r in records] == [51001]


def test_raw_ip_vlan_and_ipv6():
    raw = pcap_bytes([(2.0, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 1, 443, HELLO, ethernet=False))], LINKTYPE_RAW)
    assert len(list(extract_records(io.BytesIO(raw)))) == 1
    eth = ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 1, 443, HELLO)
    tagged = eth[:12] + b"\x81\x00\x00\x05" + eth[12:]
    assert len(list(extract_records(io.BytesIO(pcap_bytes([(3.0, tagged)]))))) == 1
    v6 = pcap_bytes([(4.0, ipv6_tcp_raw("2001:db8::2", "2001:db8::1", 40000, 8443, HELLO))], LINKTYPE_RAW)
    (r,) = extract_records(io.BytesIO(v6))
    assert r.destination.dst_ip == "2001:db8::1" and r.destination.dst_port == 8443


def test_big_endian_nanosecond_pcap():
    frame = ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 1, 443, HELLO)
    data = (struct.pack(">IHHiIII", 0xA1B23C4D, 2, 4, 0, 0, 65535, LINKTYPE_ETHERNET)
            + struct.pack(">IIII", 5, 500_000_000, len(frame), len(frame)) + frame)
    ((ts, link, got),) = list(read_pcap(io.BytesIO(data)))
    assert ts == 5.5 and link == LINKTYPE_ETHERNET and got == frame


def test_truncated_hello_counted_not_fatal():
    frames = [(1.0, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 1, 443, HELLO[:40])),
              (2.0, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 2, 443, HELLO))]
    stats = ExtractStats()
    assert len(list(extract_records(io.BytesIO(pcap_bytes(frames)), stats))) == 1
    assert stats.errors == {"truncated": 1}


def test_garbage_frames_counted():
    frames = [(1.0, b"\x00" * 12 + b"\x08\x00" + b"\x45" + b"\x00" * 5), (2.0, b"\x01")]
    stats = ExtractStats()
    assert list(extract_records(io.BytesIO(pcap_bytes(frames)), stats)) == []
    assert stats.errors == {"packet": 2}


def test_bad_files():
    with pytest.raises(PcapError):
        list(read_pcap(io.BytesIO(b"\x0a\x0d\x0d\x0a" + b"\x00" * 40)))
    data = pcap_bytes([(1.0, ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 1, 443, HELLO))])
    with pytest.raises(PcapError):
        list(read_pcap(io.BytesIO(data[:-5])))
    with pytest.raises(PcapError):
        list(read_pcap(io.BytesIO(data[:30])))


def test_segment_errors():
    with pytest.raises(PacketError):
        tcp_segment(0.0, 147, b"\x45")
    frame = ipv4_tcp_frame("10.0.0.2", "1.2.3.4", 1, 443, b"x")
    assert tcp_segment(0.0, LINKTYPE_ETHERNET, frame).payload == b"x"
    arp = frame[:12] + b"\x08\x06" + frame[14:]
    assert tcp_segment(0.0, LINKTYPE_ETHERNET, arp) is None
