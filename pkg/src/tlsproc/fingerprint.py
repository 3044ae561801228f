"""Normalized fingerprint strings: ``(version)(ciphers)((ext1)(ext2)...)``.

All fields are lowercase hex taken from the client_hello bytes, so any
substring other than the normalized GREASE value can be located in the
original packet. GREASE code points collapse to ``0a0a`` in place.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

from .tls_parser import ClientHelloSummary

GREASE = "0a0a"
GREASE_VALUES = frozenset(f"{b:02x}{b:02x}" for b in range(0x0a, 0x100, 0x10))

# extension types whose data is part of the fingerprint
RETAINED_DATA = frozenset({
    "0001", "0005", "0007", "0008", "0009", "000a", "000b", "000d", "000f",
    "0010", "0011", "0013", "0014", "0018", "001b", "001c", "002b", "002d",
    "0032", "5500", "0a0a",
})
# (extension type, length-prefix size) for lists of 2-byte code points
_CODEPOINT_LISTS = {"000a": 2, "002b": 1}

_HEX4 = "[0-9a-f]{4}"
# an empty extension list is written "(())"
_FP_RE = re.compile(
    rf"\(({_HEX4})\)\(((?:{_HEX4})*)\)\((\(\)|(?:\({_HEX4}(?:[0-9a-f]{{2}})*\))+)\)"
)
_EXT_RE = re.compile(r"\(([0-9a-f]*)\)")


class MalformedFingerprint(ValueError):
    pass


def normalize_grease(code: str) -> str:
    code = code.lower()
    if len(code) != 4:
        raise ValueError(f"expected a 4-hex-char code, got {code!r}")
    return GREASE if code in GREASE_VALUES else code


def _normalize_codepoint_list(data: bytes, prefix: int) -> str:
    text = data.hex()
    head, rest = text[:2 * prefix], text[2 * prefix:]
    codes = [rest[i:i + 4] for i in range(0, len(rest) - len(rest) % 4, 4)]
    tail = rest[len(codes) * 4:]
    return head + "".join(GREASE if c in GREASE_VALUES else c for c in codes) + tail


def encode_extension(ext_type: str, data: bytes) -> str:
    ext_type = normalize_grease(ext_type)
    if ext_type == GREASE or ext_type not in RETAINED_DATA:
        return ext_type
    if ext_type in _CODEPOINT_LISTS:
        return ext_type + _normalize_codepoint_list(data, _CODEPOINT_LISTS[ext_type])
    return ext_type + data.hex()


def encode_fingerprint(summary: ClientHelloSummary) -> str:
    version = summary.legacy_version.lower()
    ciphers = "".join(normalize_grease(c) for c in summary.cipher_suites)
    exts = "".join(f"({encode_extension(t, d)})" for t, d in summary.extensions)
    return f"({version})({ciphers})({exts or '()'})"


@dataclass(frozen=True)
class FingerprintTokens:
    version: str
    ciphers: tuple[str, ...] = ()
    extensions: tuple[str, ...] = ()

    def sequence(self) -> tuple[tuple[str, str], ...]:
        """Flat token sequence; tokens carry their field so fields never compare equal."""
        return (
            (("v", self.version),)
            + tuple(("c", c) for c in self.ciphers)
            + tuple(("e", e) for e in self.extensions)
        )

    def __len__(self):
        return 1 + len(self.ciphers) + len(self.extensions)


def is_fingerprint(text: str) -> bool:
    return _FP_RE.fullmatch(text) is not None


def tokenize_fingerprint(fp: str) -> FingerprintTokens:
    m = _FP_RE.fullmatch(fp)
    if m is None:
        raise MalformedFingerprint(f"not a fingerprint string: {fp!r}")
    version, ciphers, exts = m.groups()
    return FingerprintTokens(
        version,
        tuple(ciphers[i:i + 4] for i in range(0, len(ciphers), 4)),
        tuple(_EXT_RE.findall(exts)) if exts != "()" else (),
    )


def detokenize(tokens: FingerprintTokens) -> str:
    exts = "".join(f"({e})" for e in tokens.extensions)
    return f"({tokens.version})({''.join(tokens.ciphers)})({exts or '()'})"
