"""Command-line entry points.

Exit codes: 0 success, 1 usage, 2 I/O, 3 data error.
"""

from __future__ import annotations

import argparse
import contextlib
import datetime as dt
import gzip
import json
import logging
import sys
from typing import Iterable, Optional

from . import knowledge_base as kbmod
from .classifier import FeatureWeights, ProcessClassifier, apply_threshold, compute_weights, evaluate
from .equivalence import FEATURE_KINDS, AsnTable, EquivalenceTables, PublicSuffixList, load_port_classes
from .extract import ExtractStats, extract_records
from .fusion import (
    dumps_record, fused_from_dict, host_from_dict, join_records, label_malware,
    network_from_dict, read_records, read_verdicts,
)

log = logging.getLogger("tlsproc")

EXIT_USAGE, EXIT_IO, EXIT_DATA = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- file helpers ----------------------------------------------------------------

def _open_text(path: str, mode: str = "r"):
    if path == "-":
        return contextlib.nullcontext(sys.stdin if "r" in mode else sys.stdout)
    if path.endswith(".gz"):
        return gzip.open(path, mode + "t", encoding="utf-8")
    return open(path, mode, encoding="utf-8", newline="" if "w" in mode else None)


def read_kb(path: str) -> kbmod.KnowledgeBase:
    with open(path, "rb") as f:
        data = f.read()
    if data[:2] == b"\x1f\x8b":
        data = gzip.decompress(data)
    try:
        return kbmod.deserialize(data)
    except kbmod.ParseError as exc:
        raise kbmod.ParseError(f"{path}: {exc}", exc.line) from exc


def write_kb(path: str, kb: kbmod.KnowledgeBase) -> None:
    data = kbmod.serialize(kb)
    if path == "-":
        sys.stdout.write(data.decode("utf-8"))
        return
    if path.endswith(".gz"):
        data = gzip.compress(data, mtime=0)
    with open(path, "wb") as f:
        f.write(data)


def _records(paths: Iterable[str], parse):
    for path in paths:
        with _open_text(path) as f:
            yield from read_records(f, parse, source=path)


def _tables(args) -> EquivalenceTables:
    tables = EquivalenceTables()
    if getattr(args, "psl", None):
        tables.psl = PublicSuffixList.from_file(args.psl)
    if getattr(args, "asn", None):
        tables.asn = AsnTable.from_csv(args.asn)
    if getattr(args, "ports", None):
        tables.port_classes = load_port_classes(args.ports)
    return tables


def _names(args) -> kbmod.ProcessNames:
    return kbmod.ProcessNames.from_csv(getattr(args, "procmap", None), getattr(args, "families", None))


def _feature_list(text: Optional[str]) -> Optional[list[str]]:
    if text is None:
        return None
    kinds = [k.strip() for k in text.split(",") if k.strip()]
    bad = [k for k in kinds if k not in FEATURE_KINDS]
    if bad:
        raise UsageError(f"unknown feature kinds {bad}; choose from {','.join(FEATURE_KINDS)}")
    return kinds


def _validate_paths(*paths):
    for p in paths:
        if p and p != "-":
            with open(p, "rb"):
                pass


# -- commands ----------------------------------------------------------------------

def cmd_extract(args) -> int:
    _validate_paths(args.pcap)
    stats = ExtractStats()
    with open(args.pcap, "rb") as f, _open_text(args.output, "w") as out:
        for rec in extract_records(f, stats):
            out.write(dumps_record(rec) + "\n")
    print(f"extract: {stats.packets} packets, {stats.tcp_data} flows with data, "
          f"{stats.client_hellos} client_hellos, errors {stats.errors or 0}", file=sys.stderr)
    return 0


def cmd_fuse(args) -> int:
    _validate_paths(args.hosts, args.network, args.verdicts)
    hosts = list(_records([args.hosts], host_from_dict))
    nets = list(_records([args.network], network_from_dict))
    fused = join_records(hosts, nets, args.max_delta)
    if args.verdicts:
        with open(args.verdicts, newline="") as f:
            fused = label_malware(fused, read_verdicts(f))
    with _open_text(args.output, "w") as out:
        for rec in fused:
            out.write(dumps_record(rec) + "\n")
    print(f"fuse: {len(hosts)} host, {len(nets)} network, {len(fused)} fused", file=sys.stderr)
    return 0


def cmd_kb_build(args) -> int:
    _validate_paths(*args.inputs)
    records = list(_records(args.inputs, fused_from_dict))
    tables, names = _tables(args), _names(args)
    if args.day:
        kb = kbmod.build_daily(records, dt.date.fromisoformat(args.day), tables, names)
    else:
        kb = kbmod.build(records, tables, names)
    write_kb(args.output, kb)
    return 0


def cmd_kb_merge(args) -> int:
    _validate_paths(*args.inputs)
    write_kb(args.output, kbmod.merge([read_kb(p) for p in args.inputs]))
    return 0


def cmd_kb_window(args) -> int:
    _validate_paths(*args.inputs)
    start, end = dt.date.fromisoformat(args.start), dt.date.fromisoformat(args.end)
    if start > end:
        raise UsageError("--start is after --end")
    daily = []
    for p in args.inputs:
        kb = read_kb(p)
        if kb.date_range is None:
            continue
        first, last = kb.date_range
        if first != last:
            raise kbmod.ParseError(f"{p}: window inputs must be single-day knowledge bases", 1)
        daily.append((first, kb))
    write_kb(args.output, kbmod.filter_window(daily, start, end))
    return 0


def cmd_weights(args) -> int:
    _validate_paths(args.kb)
    weights = compute_weights(read_kb(args.kb))
    with _open_text(args.output, "w") as out:
        out.write(weights.to_csv())
    return 0


def classify_line(clf: ProcessClassifier, index: int, raw: str, threshold: float) -> dict:
    """One output row for one input record line; errors are reported inline."""
    row = {"index": index}
    try:
        obj = json.loads(raw)
        rec = network_from_dict(obj) if "five_tuple" in obj else fused_from_dict(obj)
        row["fingerprint"] = rec.fingerprint
        result = clf.classify(rec.fingerprint, rec.destination)
    except Exception as exc:  # noqa: BLE001 - reported per record, processing continues
        row.update(error=f"{type(exc).__name__}: {exc}", abstain=True, process=None)
        return row
    passed = apply_threshold(result, threshold)
    top = result.top
    row.update(
        process=top.process_name if passed else None,
        process_family=top.process_family if passed else None,
        probability=top.probability,
        malware=top.malware,
        malware_probability=result.malware_probability,
        match_kind=result.match.kind,
        distance=result.match.distance,
        matched_fingerprint=result.match.matched_fingerprint,
        abstain=passed is None,
        candidates=[[c.process_name, c.probability] for c in result.candidates[:5]],
        error=None,
    )
    if passed is None:
        row["top_process"] = top.process_name
    return row


TSV_FIELDS = ("index", "process", "probability", "malware", "malware_probability",
              "match_kind", "distance", "abstain", "error")


def cmd_classify(args) -> int:
    _validate_paths(args.kb, args.weights, *args.records)
    if not 0.0 <= args.threshold <= 1.0:
        raise UsageError("--threshold must be within [0, 1]")
    features = _feature_list(args.features)
    weights = FeatureWeights.load(args.weights) if args.weights else FeatureWeights.default()
    clf = ProcessClassifier(read_kb(args.kb), weights, _tables(args), features)
    index = 0
    with _open_text(args.output, "w") as out:
        if args.format == "tsv":
            out.write("\t".join(TSV_FIELDS) + "\n")
        for path in args.records or ["-"]:
            with _open_text(path) as f:
                for raw in f:
                    if not raw.strip():
                        continue
                    row = classify_line(clf, index, raw, args.threshold)
                    index += 1
                    if args.format == "tsv":
                        out.write("\t".join(_tsv(row.get(k)) for k in TSV_FIELDS) + "\n")
                    else:
                        out.write(json.dumps(row, sort_keys=True) + "\n")
    return 0


def _tsv(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value).replace("\t", " ")


def cmd_eval(args) -> int:
    _validate_paths(args.predictions, args.truth)
    with _open_text(args.predictions) as f:
        preds = [json.loads(line) for line in f if line.strip()]
    truth = list(_records([args.truth], fused_from_dict))
    if len(preds) != len(truth):
        raise kbmod.ParseError(
            f"{len(preds)} predictions but {len(truth)} truth records", min(len(preds), len(truth)) + 1)
    names = _names(args)
    label = names.family if args.family else (lambda n: n)
    pairs, mal = [], []
    for p, t in zip(preds, truth):
        pred = None if p.get("abstain") or p.get("process") is None else p["process"]
        true = names.normalize(t.process_name)
        pairs.append((label(pred) if pred is not None else None, label(true)))
        if args.malware_score:
            mal.append((p.get("malware_probability", 0.0) >= 0.5, t.malware))
        else:
            mal.append((bool(p.get("malware")) and pred is not None, t.malware))
    m = evaluate(pairs, mal)
    report = {
        "count": m.count,
        "micro_f1": m.micro_f1,
        "micro_precision": m.micro_precision,
        "micro_recall": m.micro_recall,
        "malware_precision": m.malware_precision,
        "malware_recall": m.malware_recall,
        "per_label": m.per_label,
    }
    with _open_text(args.output, "w") as out:
        out.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    return 0


# -- argument parsing ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    tables = _Parser(add_help=False)
    tables.add_argument("--psl", metavar="PATH", help="public suffix list (PSL text format)")
    tables.add_argument("--asn", metavar="PATH", help="prefix,asn CSV")
    tables.add_argument("--ports", metavar="PATH", help="port,label CSV overriding port classes")
    names = _Parser(add_help=False)
    names.add_argument("--procmap", metavar="PATH", help="raw_name,normalized_name CSV")
    names.add_argument("--families", metavar="PATH", help="normalized_name,family CSV")
    output = _Parser(add_help=False)
    output.add_argument("-o", "--output", default="-", metavar="PATH")

    parser = _Parser(prog="tlsproc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("extract", parents=[output], help="pcap -> network records")
    p.add_argument("pcap")
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("fuse", parents=[output], help="join host and network records")
    p.add_argument("--hosts", required=True)
    p.add_argument("--network", required=True)
    p.add_argument("--verdicts", help="sha256,engine_count CSV")
    p.add_argument("--max-delta", type=float, default=5.0)
    p.set_defaults(func=cmd_fuse)

    kb = sub.add_parser("kb", help="knowledge base lifecycle")
    kbsub = kb.add_subparsers(dest="kb_command", required=True, parser_class=_Parser)
    p = kbsub.add_parser("build", parents=[tables, names])
    p.add_argument("inputs", nargs="+", help="fused record files")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--day", help="YYYY-MM-DD; all records must fall on this UTC day")
    p.set_defaults(func=cmd_kb_build)
    p = kbsub.add_parser("merge")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_kb_merge)
    p = kbsub.add_parser("window")
    p.add_argument("inputs", nargs="+", help="single-day knowledge bases")
    p.add_argument("--start", required=True)
    p.add_argument("--end", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_kb_window)

    p = sub.add_parser("weights", parents=[output], help="information gain ratio weights")
    p.add_argument("--kb", required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("classify", parents=[tables, output], help="infer processes")
    p.add_argument("records", nargs="*", help="network or fused record files (default stdin)")
    p.add_argument("--kb", required=True)
    p.add_argument("--weights")
    p.add_argument("--threshold", type=float, default=0.0)
    p.add_argument("--features", help=f"comma-separated subset of {','.join(FEATURE_KINDS)}")
    p.add_argument("--format", choices=("jsonl", "tsv"), default="jsonl")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", parents=[names, output], help="score predictions against truth")
    p.add_argument("predictions")
    p.add_argument("truth", help="fused records in prediction order")
    p.add_argument("--family", action="store_true", help="score process families instead of names")
    p.add_argument("--malware-score", action="store_true",
                   help="call malware when malware_probability >= 0.5 instead of the top candidate flag")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"tlsproc: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"tlsproc: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"tlsproc: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
