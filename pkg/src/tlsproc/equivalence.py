"""Destination equivalence classes: FQDN to domain/TLD, IP to AS, port to class."""

from __future__ import annotations

import csv
import functools
import ipaddress
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Optional

from .tls_parser import DestinationContext

UNKNOWN_PORT = "unknown"
NO_ASN = "AS0"

DEFAULT_PORT_CLASSES = {
    443: "https", 8443: "https",
    993: "email", 995: "email", 465: "email", 26: "email",
    80: "http-alt", 8080: "http-alt",
}

FEATURE_KINDS = ("server_name", "domain", "tld", "ip", "asn", "port", "port_class")


class NoDomain(ValueError):
    """The name is itself a public suffix (or not a usable host name)."""


def _ace(label: str) -> str:
    try:
        return label.encode("idna").decode("ascii")
    except UnicodeError:
        return label


class PublicSuffixList:
    def __init__(self, rules: Iterable[str] = ()):
        self.exact: set[str] = set()
        self.wildcard: set[str] = set()
        self.exception: set[str] = set()
        for rule in rules:
            self.add(rule)

    def add(self, rule: str) -> None:
        rule = rule.strip().lower()
        if not rule:
            return
        target = self.exact
        if rule.startswith("!"):
            target, rule = self.exception, rule[1:]
        elif rule.startswith("*."):
            target, rule = self.wildcard, rule[2:]
        target.add(rule)
        # rules are published in Unicode; host names on the wire are ACE
        ace = ".".join(_ace(label) for label in rule.split("."))
        target.add(ace)

    @classmethod
    def from_text(cls, text: str, icann_only: bool = True) -> "PublicSuffixList":
        rules = []
        in_private = False
        for line in text.splitlines():
            line = line.strip()
            if line.startswith("//"):
                if "===BEGIN PRIVATE DOMAINS===" in line:
                    in_private = True
                elif "===END PRIVATE DOMAINS===" in line:
                    in_private = False
                continue
            if not line or (in_private and icann_only):
                continue
            rules.append(line.split()[0])
        return cls(rules)

    @classmethod
    def from_file(cls, path, icann_only: bool = True) -> "PublicSuffixList":
        with open(path, encoding="utf-8") as f:
            return cls.from_text(f.read(), icann_only)

    def suffix_length(self, labels: list[str]) -> tuple[int, bool]:
        """Number of trailing labels forming the public suffix, and whether a rule matched."""
        n = len(labels)
        for i in range(n):
            if ".".join(labels[i:]) in self.exception:
                return n - i - 1, True
        for i in range(n):
            if ".".join(labels[i:]) in self.exact:
                return n - i, True
            if i + 1 < n and ".".join(labels[i + 1:]) in self.wildcard:
                return n - i, True
        return 1, False


@functools.lru_cache(maxsize=None)
def default_psl() -> PublicSuffixList:
    text = resources.files("tlsproc").joinpath("data/public_suffix_list.dat").read_text("utf-8")
    return PublicSuffixList.from_text(text)


class AsnTable:
    """Longest-prefix-match table from IP prefixes to AS identifiers."""

    def __init__(self, prefixes: Mapping[str, str] | Iterable[tuple[str, str]] = ()):
        # (ip version, prefix length) -> {network address as int: asn}
        self._by_len: dict[tuple[int, int], dict[int, str]] = {}
        self._order: list[tuple[int, int]] = []
        items = prefixes.items() if isinstance(prefixes, Mapping) else prefixes
        for prefix, asn in items:
            self.add(prefix, asn)

    def add(self, prefix: str, asn: str | int) -> None:
        net = ipaddress.ip_network(prefix.strip(), strict=False)
        asn = str(asn).strip()
        if not asn.upper().startswith("AS"):
            asn = f"AS{asn}"
        key = (net.version, net.prefixlen)
        self._by_len.setdefault(key, {})[int(net.network_address)] = "AS" + asn[2:]
        self._order = sorted(self._by_len, key=lambda k: -k[1])

    def __len__(self):
        return sum(len(v) for v in self._by_len.values())

    def items(self) -> list[tuple[str, str]]:
        """(prefix, asn) pairs, most specific first."""
        out = []
        for version, plen in self._order:
            addr = ipaddress.IPv4Address if version == 4 else ipaddress.IPv6Address
            for value, asn in sorted(self._by_len[(version, plen)].items()):
                out.append((f"{addr(value)}/{plen}", asn))
        return out

    def lookup(self, ip) -> str:
        addr = ipaddress.ip_address(ip)
        value, bits = int(addr), addr.max_prefixlen
        for version, plen in self._order:
            if version != addr.version:
                continue
            mask = ((1 << plen) - 1) << (bits - plen) if plen else 0
            asn = self._by_len[(version, plen)].get(value & mask)
            if asn is not None:
                return asn
        return NO_ASN

    @classmethod
    def from_csv(cls, path) -> "AsnTable":
        table = cls()
        with open(path, newline="") as f:
            for row in csv.reader(f):
                if not row or row[0].startswith("#") or row[0].strip().lower() == "prefix":
                    continue
                table.add(row[0], row[1])
        return table


def load_port_classes(path) -> dict[int, str]:
    table = dict(DEFAULT_PORT_CLASSES)
    with open(path, newline="") as f:
        for row in csv.reader(f):
            if not row or row[0].strip().lower() == "port":
                continue
            table[int(row[0])] = row[1].strip()
    return table


@dataclass
class EquivalenceTables:
    psl: PublicSuffixList = field(default_factory=default_psl)
    asn: AsnTable = field(default_factory=AsnTable)
    port_classes: dict[int, str] = field(default_factory=lambda: dict(DEFAULT_PORT_CLASSES))


def _labels(name: str) -> list[str]:
    name = name.lower()
    if name.endswith("."):
        name = name[:-1]
    labels = name.split(".")
    if not name or any(not label for label in labels):
        raise NoDomain(f"not a host name: {name!r}")
    return labels


def domain_of(server_name: str, tables: Optional[EquivalenceTables] = None) -> str:
    """Registrable domain: the public suffix plus one label."""
    psl = tables.psl if tables else default_psl()
    labels = _labels(server_name)
    k, matched = psl.suffix_length(labels)
    if not matched and len(labels) <= 2:
        return ".".join(labels)
    if k >= len(labels):
        raise NoDomain(f"{server_name!r} is a public suffix")
    return ".".join(labels[-(k + 1):])


def tld_of(server_name: str, tables: Optional[EquivalenceTables] = None) -> str:
    psl = tables.psl if tables else default_psl()
    labels = _labels(server_name)
    k, matched = psl.suffix_length(labels)
    if not matched:
        return labels[-1]
    return ".".join(labels[-k:]) if k else labels[-1]


def asn_of(ip, tables: Optional[EquivalenceTables] = None) -> str:
    if tables is None:
        ipaddress.ip_address(ip)
        return NO_ASN
    return tables.asn.lookup(ip)


def port_class(port: int, tables: Optional[EquivalenceTables] = None) -> str:
    if not 0 <= port <= 65535:
        raise ValueError(f"port out of range: {port}")
    classes = tables.port_classes if tables else DEFAULT_PORT_CLASSES
    return classes.get(port, UNKNOWN_PORT)


def destination_features(dest: DestinationContext, tables: Optional[EquivalenceTables] = None) -> dict[str, str]:
    """Feature kind -> value for one session; kinds with no value are left out."""
    feats: dict[str, str] = {}
    if dest.server_name:
        sn = dest.server_name.lower()
        feats["server_name"] = sn
        try:
            feats["domain"] = domain_of(sn, tables)
        except NoDomain:
            pass
        try:
            feats["tld"] = tld_of(sn, tables)
        except NoDomain:
            pass
    if dest.dst_ip is not None:
        feats["ip"] = dest.dst_ip
        feats["asn"] = asn_of(dest.dst_ip, tables)
    feats["port"] = str(dest.dst_port)
    feats["port_class"] = port_class(dest.dst_port, tables)
    return feats
