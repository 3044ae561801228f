import hashlib
import io
import random

import pytest
from hypothesis import given, settings, strategies as st

from tlsproc.fusion import (
    FiveTuple, FusedRecord, HostRecord, NetworkRecord, RecordError, dumps_record, fused_from_dict,
    host_from_dict, join_records, label_malware, network_from_dict, read_records, read_verdicts,
    record_to_dict,
)
from tlsproc.tls_parser import DestinationContext

from oracles import brute_force_join
from records import collision_scenario, planted_late_corpus

FP = "(0303)(13011302)((0000)(002b020304))"


def sha(name):
    return hashlib.sha256(name.encode()).hexdigest()


def tup(n=0, dst="93.184.216.34", dport=443):
    return FiveTuple("10.0.0.5", dst, 40000 + n, dport)


def host(t, name="chrome", five=None):
    return HostRecord(five or tup(), t, name, sha(name), "windows")


def net(t, five=None, fp=FP, sni="example.com"):
    five = five or tup()
    return NetworkRecord(five, t, fp, DestinationContext(five.dst_ip, five.dst_port, sni))


def test_unique_match():
    out = join_records([host(100.0)], [net(100.2)])
    assert out == [FusedRecord(FP, DestinationContext("93.184.216.34", 443, "example.com"),
                               "chrome", sha("chrome"), "windows", 100.2)]


def test_late_pair_discarded():
    assert join_records([host(100.0)], [net(107.0)]) == []


def test_cutoff_is_strict_greater_than():
    assert len(join_records([host(100.0)], [net(105.0)])) == 1
    assert join_records([host(100.0)], [net(105.001)]) == []
    assert len(join_records([host(100.0)], [net(99.5)], max_delta_seconds=0.5)) == 1


def test_collision_pairs_by_minimal_delta():
    hosts = [host(10.0, "a"), host(20.0, "b")]
    nets = [net(10.1), net(19.8)]
    out = join_records(hosts, nets)
    assert [(r.process_name, r.start_time) for r in out] == [("a", 10.1), ("b", 19.8)]


def test_different_tuples_never_join():
    assert join_records([host(1.0, five=tup(1))], [net(1.0, five=tup(2))]) == []


def test_non_positive_delta_rejected():
    with pytest.raises(ValueError):
        join_records([], [], max_delta_seconds=0)


def test_record_validation():
    with pytest.raises(ValueError):
        HostRecord(tup(), 1.0, "x", "abc", "")
    with pytest.raises(ValueError):
        HostRecord(FiveTuple("1.1.1.1", "2.2.2.2", 1, 2, "udp"), 1.0, "x", sha("x"), "")
    with pytest.raises(ValueError):
        NetworkRecord(tup(), 1.0, FP, DestinationContext("93.184.216.34", 8443))
    with pytest.raises(ValueError):
        NetworkRecord(tup(), 1.0, FP, DestinationContext("1.1.1.1", 443))


@pytest.mark.parametrize("count, expected", [(5, True), (4, False), (None, False), (60, True)])
def test_label_malware(count, expected):
    rec = join_records([host(1.0, "evil")], [net(1.0)])
    verdicts = {} if count is None else {sha("evil").upper(): count}
    assert label_malware(rec, verdicts)[0].malware is expected


def test_brute_force_agreement_on_collisions():
    rng = random.Random(7)
    nonempty = 0
    for _ in range(100):
        hosts, nets = collision_scenario(rng)
        got = join_records(hosts, nets)
        want = brute_force_join(hosts, nets)
        assert sorted(got, key=lambda r: (r.start_time, r.process_sha256)) == want
        nonempty += bool(got)
        rng.shuffle(hosts)
        rng.shuffle(nets)
        assert join_records(hosts, nets) == got
    assert nonempty > 50


def test_collision_example_is_min_weight():
    hosts = [host(10.0, "a"), host(20.0, "b")]
    nets = [net(10.1), net(19.8)]
    assert join_records(hosts, nets) == sorted(brute_force_join(hosts, nets), key=lambda r: r.start_time)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 2), st.integers(0, 40)), max_size=6),
       st.lists(st.tuples(st.integers(0, 2), st.integers(0, 40)), max_size=6))
def test_injective_and_bounded(host_specs, net_specs):
    hosts = [host(1000 + t / 2, f"h{k}", tup(g)) for k, (g, t) in enumerate(host_specs)]
    nets = [net(1000 + t / 2, tup(g), fp=f"(0303)({k:04x})(())") for k, (g, t) in enumerate(net_specs)]
    out = join_records(hosts, nets)
    assert len({r.process_name for r in out}) == len(out)
    assert len({r.fingerprint for r in out}) == len(out)
    by_name = {h.process_name: h for h in hosts}
    for r in out:
        h = by_name[r.process_name]
        assert abs(h.start_time - r.start_time) <= 5.0
        assert h.five_tuple.dst_port == r.destination.dst_port


def test_planted_late_rate():
    hosts, nets, late = planted_late_corpus(random.Random(11), 20000, 10)
    out = join_records(hosts, nets)
    assert (len(nets) - len(out)) / len(nets) == late / len(nets) == 0.0005


# -- I/O --------------------------------------------------------------------------

def test_json_round_trip():
    h, n = host(1.5), net(1.5)
    assert host_from_dict(record_to_dict(h)) == h
    assert network_from_dict(record_to_dict(n)) == n
    rec = label_malware(join_records([h], [n]), {sha("chrome"): 9})[0]
    assert fused_from_dict(record_to_dict(rec)) == rec
    line = dumps_record(rec)
    assert list(read_records(io.StringIO(line + "\n\n" + line))) == [rec, rec]


def test_read_records_reports_line():
    with pytest.raises(RecordError) as err:
        list(read_records(["{}", ""], source="x.jsonl"))
    assert err.value.line == 1
    with pytest.raises(RecordError) as err:
        list(read_records([dumps_record(join_records([host(1)], [net(1)])[0]), "not json"]))
    assert err.value.line == 2


def test_read_verdicts():
    lines = ["sha256,engine_count", f"{sha('a').upper()},7", "", f"{sha('b')},0"]
    assert read_verdicts(lines) == {sha("a"): 7, sha("b"): 0}
