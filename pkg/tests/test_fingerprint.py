import inspect

import pytest
from hypothesis import assume, given, strategies as st

import tlsproc.fingerprint as fpmod
from tlsproc.fingerprint import (
    FingerprintTokens, MalformedFingerprint, detokenize, encode_fingerprint, is_fingerprint,
    normalize_grease, tokenize_fingerprint,
)
from tlsproc.tls_parser import ClientHelloSummary, build_client_hello, parse_client_hello

from hello_corpus import CASES, reversible_pieces, summary_of

GREASE_CODES = [f"{b:02x}{b:02x}" for b in range(0x0a, 0x100, 0x10)]


@pytest.mark.parametrize("code, expected", [("5a5a", "0a0a"), ("1301", "1301"), ("0a0a", "0a0a"),
                                            ("FAFA", "0a0a"), ("0a1a", "0a1a")])
def test_normalize_grease(code, expected):
    assert normalize_grease(code) == expected


def test_grease_set_has_sixteen_values():
    assert len(fpmod.GREASE_VALUES) == 16
    assert {normalize_grease(c) for c in GREASE_CODES} == {"0a0a"}


def test_retained_set_matches_extension_list():
    assert len(fpmod.RETAINED_DATA) == 21


@pytest.mark.parametrize("case", CASES, ids=[c[0] for c in CASES])
def test_corpus_fingerprints(case):
    raw = build_client_hello(summary_of(case))
    fp = encode_fingerprint(parse_client_hello(raw))
    assert fp == case[4]
    assert is_fingerprint(fp)
    for piece in reversible_pieces(fp):
        assert piece in raw


def test_empty_sequences():
    assert encode_fingerprint(ClientHelloSummary("0303")) == "(0303)()(())"


@pytest.mark.parametrize("fp, version, ciphers, exts", [
    ("(0303)(13011302)((0000)(002b020304))", "0303", ("1301", "1302"), ("0000", "002b020304")),
    ("(0303)()(())", "0303", (), ()),
    ("(0303)(13011301)((0a0a))", "0303", ("1301", "1301"), ("0a0a",)),
])
def test_tokenize(fp, version, ciphers, exts):
    tokens = tokenize_fingerprint(fp)
    assert tokens == FingerprintTokens(version, ciphers, exts)
    assert detokenize(tokens) == fp


@pytest.mark.parametrize("bad", [
    "", "(303)()(())", "(0303)(130)(())", "(0303)()()", "(0303)()((00))",
    "(0303)()((0000)", "(0303)(1301)((0000)(002b0))", "(0303)(ABCD)(())", "(0303)()(())x",
])
def test_tokenize_rejects_malformed(bad):
    with pytest.raises(MalformedFingerprint):
        tokenize_fingerprint(bad)


def test_no_hashing():
    assert "hashlib" not in inspect.getsource(fpmod)
    assert "md5" not in inspect.getsource(fpmod).lower()


codes = st.binary(min_size=2, max_size=2).map(bytes.hex)
ext_types = st.sampled_from(sorted(fpmod.RETAINED_DATA) + ["0000", "0017", "0033", "ff01"] + GREASE_CODES)


@st.composite
def summaries(draw):
    exts = tuple((draw(ext_types), draw(st.binary(max_size=12))) for _ in range(draw(st.integers(0, 6))))
    return ClientHelloSummary(draw(codes), tuple(draw(st.lists(codes, max_size=12))), exts)


@given(summaries())
def test_round_trip_through_tokens(summary):
    fp = encode_fingerprint(summary)
    assert is_fingerprint(fp)
    assert detokenize(tokenize_fingerprint(fp)) == fp
    assert encode_fingerprint(summary) == fp


@given(summaries())
def test_reversible(summary):
    raw = build_client_hello(summary)
    for piece in reversible_pieces(encode_fingerprint(summary)):
        assert piece in raw


@given(summaries(), st.permutations(range(12)))
def test_cipher_order_matters(summary, perm):
    ciphers = summary.cipher_suites
    permuted = tuple(ciphers[i] for i in perm if i < len(ciphers))
    normalized = [normalize_grease(c) for c in ciphers]
    assume([normalize_grease(c) for c in permuted] != normalized)
    other = ClientHelloSummary(summary.legacy_version, permuted, summary.extensions)
    assert encode_fingerprint(other) != encode_fingerprint(summary)


@given(summaries(), st.data())
def test_grease_stability(summary, data):
    def swap(code):
        return data.draw(st.sampled_from(GREASE_CODES)) if code in fpmod.GREASE_VALUES else code

    def swap_data(ext_type, payload):
        if ext_type not in ("000a", "002b"):
            return payload
        prefix = 2 if ext_type == "000a" else 1
        body = bytearray(payload)
        for i in range(prefix, len(body) - 1, 2):
            code = body[i:i + 2].hex()
            if code in fpmod.GREASE_VALUES:
                body[i:i + 2] = bytes.fromhex(swap(code))
        return bytes(body)

    other = ClientHelloSummary(
        summary.legacy_version,
        tuple(swap(c) for c in summary.cipher_suites),
        tuple((swap(t), swap_data(t, d)) for t, d in summary.extensions),
    )
    assert encode_fingerprint(other) == encode_fingerprint(summary)
