"""Join host process events with network fingerprint events.

Records sharing a 5-tuple are paired greedily by ascending timestamp delta;
pairs further apart than ``max_delta_seconds`` are dropped.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import re
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, NamedTuple

from .tls_parser import DestinationContext

MALWARE_ENGINE_THRESHOLD = 5
DEFAULT_MAX_DELTA = 5.0

_SHA256_RE = re.compile(r"[0-9a-fA-F]{64}")


class FiveTuple(NamedTuple):
    src_ip: str
    dst_ip: str
    src_port: int
    dst_port: int
    transport_protocol: str = "tcp"

    @classmethod
    def from_dict(cls, d: Mapping) -> "FiveTuple":
        return cls(str(d["src_ip"]), str(d["dst_ip"]), int(d["src_port"]), int(d["dst_port"]),
                   str(d.get("transport_protocol", "tcp")))


@dataclass(frozen=True)
class HostRecord:
    five_tuple: FiveTuple
    start_time: float
    process_name: str
    process_sha256: str
    os: str = ""

    def __post_init__(self):
        if not _SHA256_RE.fullmatch(self.process_sha256):
            raise ValueError(f"bad sha256: {self.process_sha256!r}")
        if self.five_tuple.transport_protocol != "tcp":
            raise ValueError(f"unsupported transport {self.five_tuple.transport_protocol!r}")


@dataclass(frozen=True)
class NetworkRecord:
    five_tuple: FiveTuple
    start_time: float
    fingerprint: str
    destination: DestinationContext

    def __post_init__(self):
        d = self.destination
        if d.dst_port != self.five_tuple.dst_port or (
            d.dst_ip is not None and d.dst_ip != DestinationContext(self.five_tuple.dst_ip, 0).dst_ip
        ):
            raise ValueError("destination does not agree with the 5-tuple")


@dataclass(frozen=True)
class FusedRecord:
    fingerprint: str
    destination: DestinationContext
    process_name: str
    process_sha256: str
    os: str
    start_time: float
    malware: bool = False


def _pair_key(host: HostRecord, net: NetworkRecord):
    return (abs(host.start_time - net.start_time), net.start_time, host.process_sha256,
            host.start_time, host.process_name, host.os, net.fingerprint,
            net.destination.server_name or "")


def join_records(
    hosts: Iterable[HostRecord],
    nets: Iterable[NetworkRecord],
    max_delta_seconds: float = DEFAULT_MAX_DELTA,
) -> list[FusedRecord]:
    if max_delta_seconds <= 0:
        raise ValueError("max_delta_seconds must be positive")
    host_groups: dict[FiveTuple, list[HostRecord]] = defaultdict(list)
    for h in hosts:
        host_groups[h.five_tuple].append(h)

    net_groups: dict[FiveTuple, list[NetworkRecord]] = defaultdict(list)
    for n in nets:
        if n.five_tuple in host_groups:
            net_groups[n.five_tuple].append(n)

    fused = []
    for key, group_nets in net_groups.items():
        candidates = [
            (_pair_key(h, n), i, j)
            for i, h in enumerate(host_groups[key])
            for j, n in enumerate(group_nets)
            if abs(h.start_time - n.start_time) <= max_delta_seconds
        ]
        candidates.sort(key=lambda c: c[0])
        used_h, used_n = set(), set()
        for _, i, j in candidates:
            if i in used_h or j in used_n:
                continue
            used_h.add(i)
            used_n.add(j)
            h, n = host_groups[key][i], group_nets[j]
            fused.append(FusedRecord(n.fingerprint, n.destination, h.process_name,
                                     h.process_sha256, h.os, n.start_time))
    fused.sort(key=_fused_order)
    return fused


def _fused_order(r: FusedRecord):
    d = r.destination
    return (r.start_time, r.fingerprint, d.dst_ip or "", d.dst_port, d.server_name or "",
            r.process_name, r.process_sha256, r.os, r.malware)


def label_malware(records: Iterable[FusedRecord], verdicts: Mapping[str, int]) -> list[FusedRecord]:
    """Flag records whose executable hash was called malicious by enough engines."""
    lowered = {k.lower(): v for k, v in verdicts.items()}
    return [
        dataclasses.replace(r, malware=lowered.get(r.process_sha256.lower(), 0) >= MALWARE_ENGINE_THRESHOLD)
        if r.process_sha256.lower() in lowered else r
        for r in records
    ]


# -- line-delimited record I/O ------------------------------------------------

def destination_to_dict(d: DestinationContext) -> dict:
    return {"dst_ip": d.dst_ip, "dst_port": d.dst_port, "server_name": d.server_name}


def destination_from_dict(d: Mapping) -> DestinationContext:
    return DestinationContext(d.get("dst_ip"), int(d["dst_port"]), d.get("server_name"))


def record_to_dict(rec) -> dict:
    out = {}
    for f in dataclasses.fields(rec):
        value = getattr(rec, f.name)
        if isinstance(value, FiveTuple):
            value = value._asdict()
        elif isinstance(value, DestinationContext):
            value = destination_to_dict(value)
        out[f.name] = value
    return out


def host_from_dict(d: Mapping) -> HostRecord:
    return HostRecord(FiveTuple.from_dict(d["five_tuple"]), float(d["start_time"]),
                      str(d["process_name"]), str(d["process_sha256"]), str(d.get("os", "")))


def network_from_dict(d: Mapping) -> NetworkRecord:
    return NetworkRecord(FiveTuple.from_dict(d["five_tuple"]), float(d["start_time"]),
                         str(d["fingerprint"]), destination_from_dict(d["destination"]))


def fused_from_dict(d: Mapping) -> FusedRecord:
    return FusedRecord(str(d["fingerprint"]), destination_from_dict(d["destination"]),
                       str(d["process_name"]), str(d["process_sha256"]), str(d.get("os", "")),
                       float(d["start_time"]), bool(d.get("malware", False)))


def dumps_record(rec) -> str:
    return json.dumps(record_to_dict(rec), sort_keys=True, separators=(",", ":"))


class RecordError(ValueError):
    def __init__(self, message: str, line: int, source: str = "<stream>"):
        super().__init__(f"{source}:{line}: {message}")
        self.line = line
        self.source = source


def read_records(lines: Iterable[str], parse=fused_from_dict, source: str = "<stream>") -> Iterator:
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            yield parse(json.loads(line))
        except (ValueError, KeyError, TypeError) as exc:
            raise RecordError(str(exc), lineno, source) from exc


def read_verdicts(lines: Iterable[str]) -> dict[str, int]:
    verdicts = {}
    for row in csv.reader(lines):
        if not row or row[0].strip().lower() == "sha256":
            continue
        verdicts[row[0].strip().lower()] = int(row[1])
    return verdicts
