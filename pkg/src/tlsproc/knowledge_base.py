"""Fingerprint knowledge bases: per-fingerprint process and destination counts."""

from __future__ import annotations

import csv
import datetime as dt
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .equivalence import FEATURE_KINDS, EquivalenceTables, destination_features
from .fusion import FusedRecord

SCHEMA_VERSION = "1"

# (kind, value)
DestinationKey = tuple[str, str]


class SchemaMismatch(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class ProcessNames:
    """Raw process name -> normalized name -> family, identity when unmapped."""

    def __init__(self, names: Optional[dict[str, str]] = None, families: Optional[dict[str, str]] = None):
        self.names = {k.lower(): v for k, v in (names or {}).items()}
        self.families = dict(families or {})

    def normalize(self, raw: str) -> str:
        return self.names.get(raw.lower(), raw)

    def family(self, name: str) -> str:
        return self.families.get(name, name)

    @classmethod
    def from_csv(cls, names_path=None, families_path=None) -> "ProcessNames":
        return cls(_read_pairs(names_path) if names_path else None,
                   _read_pairs(families_path) if families_path else None)


def _read_pairs(path) -> dict[str, str]:
    with open(path, newline="") as f:
        return {row[0].strip(): row[1].strip() for row in csv.reader(f) if len(row) >= 2}


@dataclass
class ProcessEntry:
    process_name: str
    process_family: str
    malware: bool = False
    session_count: int = 0
    feature_counts: Counter = field(default_factory=Counter)

    def add(self, other: "ProcessEntry") -> None:
        self.malware = self.malware or other.malware
        self.session_count += other.session_count
        self.feature_counts.update(other.feature_counts)

    def copy(self) -> "ProcessEntry":
        return ProcessEntry(self.process_name, self.process_family, self.malware,
                            self.session_count, Counter(self.feature_counts))


@dataclass
class FingerprintEntry:
    processes: dict[str, ProcessEntry] = field(default_factory=dict)

    @property
    def total_count(self) -> int:
        return sum(p.session_count for p in self.processes.values())


@dataclass
class KnowledgeBase:
    entries: dict[str, FingerprintEntry] = field(default_factory=dict)
    date_range: Optional[tuple[dt.date, dt.date]] = None
    schema_version: str = SCHEMA_VERSION

    def __contains__(self, fingerprint: str) -> bool:
        return fingerprint in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def total_sessions(self) -> int:
        return sum(e.total_count for e in self.entries.values())

    def _add(self, fingerprint: str, proc: ProcessEntry) -> None:
        entry = self.entries.setdefault(fingerprint, FingerprintEntry())
        if proc.process_name in entry.processes:
            entry.processes[proc.process_name].add(proc)
        else:
            entry.processes[proc.process_name] = proc.copy()


def record_day(record: FusedRecord) -> dt.date:
    return dt.datetime.fromtimestamp(record.start_time, dt.timezone.utc).date()


def build_daily(
    records: Iterable[FusedRecord],
    day: dt.date,
    tables: Optional[EquivalenceTables] = None,
    names: Optional[ProcessNames] = None,
) -> KnowledgeBase:
    tables = tables or EquivalenceTables()
    names = names or ProcessNames()
    kb = KnowledgeBase(date_range=(day, day))
    for rec in records:
        if record_day(rec) != day:
            raise ValueError(f"record at {rec.start_time} is not dated {day}")
        name = names.normalize(rec.process_name)
        feats = destination_features(rec.destination, tables)
        entry = kb.entries.setdefault(rec.fingerprint, FingerprintEntry())
        proc = entry.processes.get(name)
        if proc is None:
            proc = entry.processes[name] = ProcessEntry(name, names.family(name))
        proc.session_count += 1
        proc.malware = proc.malware or rec.malware
        proc.feature_counts.update(feats.items())
    return kb


def build(records: Iterable[FusedRecord], tables=None, names=None) -> KnowledgeBase:
    """Build one knowledge base from records spanning any number of UTC days."""
    by_day: dict[dt.date, list[FusedRecord]] = {}
    for rec in records:
        by_day.setdefault(record_day(rec), []).append(rec)
    tables = tables or EquivalenceTables()
    return merge([build_daily(recs, day, tables, names) for day, recs in sorted(by_day.items())])


def merge(kbs: Sequence[KnowledgeBase]) -> KnowledgeBase:
    kbs = list(kbs)
    versions = {kb.schema_version for kb in kbs}
    if len(versions) > 1:
        raise SchemaMismatch(f"cannot merge schema versions {sorted(versions)}")
    out = KnowledgeBase(schema_version=versions.pop() if versions else SCHEMA_VERSION)
    ranges = [kb.date_range for kb in kbs if kb.date_range is not None]
    if ranges:
        out.date_range = (min(r[0] for r in ranges), max(r[1] for r in ranges))
    for kb in kbs:
        for fp, entry in kb.entries.items():
            for proc in entry.processes.values():
                out._add(fp, proc)
    return out


def filter_window(
    daily_kbs: Iterable[tuple[dt.date, KnowledgeBase]], start: dt.date, end: dt.date
) -> KnowledgeBase:
    if start > end:
        raise ValueError("window start is after its end")
    return merge([kb for day, kb in daily_kbs if start <= day <= end])


# -- persistence ---------------------------------------------------------------
# line 1: header object; then one object per fingerprint, sorted by fingerprint

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def serialize(kb: KnowledgeBase) -> bytes:
    header = {
        "schema_version": kb.schema_version,
        "date_range": [d.isoformat() for d in kb.date_range] if kb.date_range else None,
        "entries": sum(1 for e in kb.entries.values() if e.total_count > 0),
    }
    lines = [_dumps(header)]
    for fp in sorted(kb.entries):
        entry = kb.entries[fp]
        if entry.total_count == 0:
            continue
        procs = []
        for name in sorted(entry.processes):
            p = entry.processes[name]
            features: dict[str, dict[str, int]] = {}
            for (kind, value), n in p.feature_counts.items():
                if n:
                    features.setdefault(kind, {})[value] = n
            procs.append({
                "process_name": p.process_name,
                "process_family": p.process_family,
                "malware": p.malware,
                "session_count": p.session_count,
                "features": features,
            })
        lines.append(_dumps({"fingerprint": fp, "total_count": entry.total_count, "processes": procs}))
    return ("\n".join(lines) + "\n").encode("utf-8")


def deserialize(data: bytes) -> KnowledgeBase:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"not UTF-8: {exc}", 1) from exc
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("missing header", 1)
    try:
        header = json.loads(lines[0])
        version = str(header["schema_version"])
        expected = int(header["entries"])
        date_range = None
        if header["date_range"] is not None:
            first, last = header["date_range"]
            date_range = (dt.date.fromisoformat(first), dt.date.fromisoformat(last))
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"bad header: {exc}", 1) from exc
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported schema version {version!r}")

    kb = KnowledgeBase(date_range=date_range, schema_version=version)
    for lineno, line in enumerate(lines[1:], 2):
        try:
            obj = json.loads(line)
            fp = obj["fingerprint"]
            entry = FingerprintEntry()
            for p in obj["processes"]:
                counts = Counter()
                for kind, values in p["features"].items():
                    if kind not in FEATURE_KINDS:
                        raise ValueError(f"unknown feature kind {kind!r}")
                    for value, n in values.items():
                        counts[(kind, value)] = int(n)
                entry.processes[p["process_name"]] = ProcessEntry(
                    p["process_name"], p["process_family"], bool(p["malware"]),
                    int(p["session_count"]), counts)
        except (ValueError, KeyError, TypeError, AttributeError) as exc:
            raise ParseError(str(exc), lineno) from exc
        if entry.total_count != obj.get("total_count") or entry.total_count < 1:
            raise ParseError(f"total_count {obj.get('total_count')} does not match process counts", lineno)
        if fp in kb.entries:
            raise ParseError(f"duplicate fingerprint {fp}", lineno)
        kb.entries[fp] = entry
    if len(kb.entries) != expected:
        raise ParseError(f"expected {expected} entries, found {len(kb.entries)} (truncated?)", len(lines) + 1)
    return kb
