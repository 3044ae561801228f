"""Recognize and decode TLS client_hello records from raw TCP payloads.

Every length field is checked against the bytes that remain before it is
used, so arbitrary input yields either a summary or a ``ParseError``.
"""

from __future__ import annotations

import ipaddress
import os
import struct
from dataclasses import dataclass
from typing import Optional

HANDSHAKE = 0x16
CLIENT_HELLO = 0x01
RECORD_VERSIONS = frozenset({0x0300, 0x0301, 0x0302, 0x0303})
# TLSCiphertext.length upper bound (2^14 + 2048)
MAX_RECORD_LENGTH = 18432
EXT_SERVER_NAME = "0000"


class ParseError(ValueError):
    """Base class for client_hello decoding failures."""


class Truncated(ParseError):
    """A declared length runs past the end of the available bytes."""


class Malformed(ParseError):
    """Length fields or framing are internally inconsistent."""


@dataclass(frozen=True)
class ClientHelloSummary:
    legacy_version: str
    cipher_suites: tuple[str, ...] = ()
    extensions: tuple[tuple[str, bytes], ...] = ()
    server_name: Optional[str] = None


@dataclass(frozen=True)
class DestinationContext:
    dst_ip: Optional[str]
    dst_port: int
    server_name: Optional[str] = None

    def __post_init__(self):
        if not 0 <= self.dst_port <= 65535:
            raise ValueError(f"port out of range: {self.dst_port}")
        if self.dst_ip is not None:
            # canonical text form so equal addresses compare equal
            object.__setattr__(self, "dst_ip", str(ipaddress.ip_address(self.dst_ip)))


class _Reader:
    def __init__(self, data: bytes | memoryview):
        self.data = memoryview(data)
        self.pos = 0

    @property
    def remaining(self) -> int:
        return len(self.data) - self.pos

    def take(self, n: int) -> memoryview:
        if n > self.remaining:
            raise Truncated(f"need {n} bytes at offset {self.pos}, have {self.remaining}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        b = self.take(2)
        return (b[0] << 8) | b[1]

    def u24(self) -> int:
        b = self.take(3)
        return (b[0] << 16) | (b[1] << 8) | b[2]


def identify_client_hello(payload: bytes) -> bool:
    """Return True if the first eight bytes look like a client_hello record.

    Only bytes 0-7 are inspected: content type, record version, record
    length, handshake type and the top two bytes of the handshake length.
    """
    if len(payload) < 8:
        raise ValueError("identify_client_hello needs at least 8 bytes")
    if payload[0] != HANDSHAKE or payload[5] != CLIENT_HELLO:
        return False
    if ((payload[1] << 8) | payload[2]) not in RECORD_VERSIONS:
        return False
    record_length = (payload[3] << 8) | payload[4]
    if not 4 <= record_length <= MAX_RECORD_LENGTH:
        return False
    # handshake length is 24 bits; a client_hello never reaches 2^16
    return payload[6] == 0


def parse_client_hello(payload: bytes) -> ClientHelloSummary:
    """Decode a single-record client_hello.

    Raises ``Truncated`` when a declared length exceeds the available bytes
    (including hellos that continue in a later record) and ``Malformed`` for
    inconsistent framing.
    """
    if len(payload) < 8:
        raise Truncated(f"{len(payload)} bytes is shorter than a record header")
    if not identify_client_hello(payload):
        raise Malformed("not a TLS client_hello record")

    rec = _Reader(payload)
    rec.take(3)
    record = _Reader(rec.take(rec.u16()))
    record.take(1)
    hs_length = record.u24()
    body = _Reader(record.take(hs_length))

    legacy_version = bytes(body.take(2)).hex()
    body.take(32)  # random
    body.take(body.u8())  # session_id
    cs_length = body.u16()
    if cs_length % 2:
        raise Malformed(f"odd cipher_suites length {cs_length}")
    cs = body.take(cs_length)
    ciphers = tuple(bytes(cs[i:i + 2]).hex() for i in range(0, cs_length, 2))
    body.take(body.u8())  # compression_methods

    extensions: list[tuple[str, bytes]] = []
    server_name = None
    if body.remaining:
        ext_block = _Reader(body.take(body.u16()))
        if body.remaining:
            raise Malformed(f"{body.remaining} trailing bytes after extensions")
        while ext_block.remaining:
            if ext_block.remaining < 4:
                raise Malformed("partial extension header")
            ext_type = bytes(ext_block.take(2)).hex()
            ext_len = ext_block.u16()
            if ext_len > ext_block.remaining:
                raise Malformed(f"extension {ext_type} overruns the extensions block")
            data = bytes(ext_block.take(ext_len))
            extensions.append((ext_type, data))
            if ext_type == EXT_SERVER_NAME and server_name is None:
                server_name = parse_server_name(data)

    return ClientHelloSummary(legacy_version, ciphers, tuple(extensions), server_name)


def parse_server_name(data: bytes) -> Optional[str]:
    """First host_name entry of a server_name extension body, or None."""
    r = _Reader(data)
    try:
        names = _Reader(r.take(r.u16()))
        while names.remaining:
            name_type = names.u8()
            name = bytes(names.take(names.u16()))
            if name_type != 0:
                continue
            if not name or not name.isascii():
                return None
            return name.decode("ascii")
    except Truncated:
        return None
    return None


def server_name_extension(host: str) -> tuple[str, bytes]:
    """Build a (type, data) server_name extension carrying one host_name."""
    name = host.encode("ascii")
    entry = struct.pack("!BH", 0, len(name)) + name
    return EXT_SERVER_NAME, struct.pack("!H", len(entry)) + entry


def build_client_hello(
    summary: ClientHelloSummary,
    *,
    record_version: str = "0301",
    random: bytes | None = None,
    session_id: bytes = b"",
    compression_methods: bytes = b"\x00",
    omit_extensions_block: bool = False,
) -> bytes:
    """Serialize a summary into a single TLS record.

    ``summary.server_name`` is not consulted; include a server_name extension
    (see :func:`server_name_extension`) to carry one.
    """
    if random is None:
        random = os.urandom(32)
    body = bytes.fromhex(summary.legacy_version) + random
    body += bytes([len(session_id)]) + session_id
    ciphers = b"".join(bytes.fromhex(c) for c in summary.cipher_suites)
    body += struct.pack("!H", len(ciphers)) + ciphers
    body += bytes([len(compression_methods)]) + compression_methods
    if not (omit_extensions_block and not summary.extensions):
        exts = b"".join(
            bytes.fromhex(t) + struct.pack("!H", len(d)) + d for t, d in summary.extensions
        )
        body += struct.pack("!H", len(exts)) + exts
    handshake = bytes([CLIENT_HELLO]) + len(body).to_bytes(3, "big") + body
    return bytes([HANDSHAKE]) + bytes.fromhex(record_version) + struct.pack("!H", len(handshake)) + handshake
