"""Weighted naive Bayes process inference over a fingerprint knowledge base."""

from __future__ import annotations

import csv
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from .approx_match import EXACT, EmptyKnowledgeBase, MatchCache, MatchResult
from .equivalence import FEATURE_KINDS, EquivalenceTables, destination_features
from .knowledge_base import KnowledgeBase
from .tls_parser import DestinationContext

UNKNOWN = "unknown"
BASE_KINDS = ("server_name", "ip", "port")
EQUIVALENCE_KINDS = {"server_name": ("domain", "tld"), "ip": ("asn",), "port": ("port_class",)}
_ABSENT = object()


class NoCandidates(ValueError):
    pass


@dataclass(frozen=True)
class FeatureWeights:
    w: Mapping[str, float]

    def __post_init__(self):
        unknown = set(self.w) - set(FEATURE_KINDS)
        if unknown:
            raise ValueError(f"unknown feature kinds: {sorted(unknown)}")
        if any(v < 0 for v in self.w.values()):
            raise ValueError("weights must be non-negative")

    def __getitem__(self, kind: str) -> float:
        return self.w.get(kind, 0.0)

    @classmethod
    def uniform(cls, value: float = 1.0) -> "FeatureWeights":
        return cls({k: value for k in FEATURE_KINDS})

    @classmethod
    def default(cls) -> "FeatureWeights":
        text = resources.files("tlsproc").joinpath("data/weights_default.csv").read_text()
        return cls.from_csv_lines(text.splitlines())

    @classmethod
    def from_csv_lines(cls, lines: Iterable[str]) -> "FeatureWeights":
        w = {}
        for row in csv.reader(lines):
            if not row or row[0].strip() == "kind":
                continue
            w[row[0].strip()] = float(row[1])
        return cls(w)

    @classmethod
    def load(cls, path) -> "FeatureWeights":
        with open(path, newline="") as f:
            return cls.from_csv_lines(f)

    def to_csv(self) -> str:
        rows = ["kind,weight"] + [f"{k},{self[k]!r}" for k in FEATURE_KINDS]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class CandidateScore:
    process_name: str
    process_family: str
    malware: bool
    log_score: float
    probability: float


@dataclass(frozen=True)
class ClassificationResult:
    candidates: tuple[CandidateScore, ...]
    match: Optional[MatchResult] = None
    malware_probability: float = 0.0

    @property
    def top(self) -> Optional[CandidateScore]:
        return self.candidates[0] if self.candidates else None

    @property
    def label(self) -> str:
        return self.candidates[0].process_name if self.candidates else UNKNOWN

    @property
    def probability(self) -> float:
        return self.candidates[0].probability if self.candidates else 0.0


# -- information gain ratio ---------------------------------------------------

def _entropy(counts: Iterable[int]) -> float:
    # sorted so equal multisets of counts give bit-identical entropies
    counts = sorted(c for c in counts if c > 0)
    total = sum(counts)
    if total == 0:
        return 0.0
    return -math.fsum(c / total * math.log(c / total) for c in counts)


def gain_ratio(joint: Mapping[tuple, int]) -> float:
    """IGR of feature F for label Z from a {(z, f): count} table."""
    z_counts, f_counts = Counter(), Counter()
    for (z, f), n in joint.items():
        z_counts[z] += n
        f_counts[f] += n
    h_f = _entropy(f_counts.values())
    if h_f == 0:
        return 0.0
    h_z = _entropy(z_counts.values())
    h_z_given_f = _entropy(joint.values()) - h_f
    gain = min(max(h_z - h_z_given_f, 0.0), h_f)
    return gain / h_f


def contingency(kb: KnowledgeBase, kind: str) -> dict[tuple, int]:
    """Session-weighted (process, value) counts pooled over all fingerprints."""
    joint: Counter = Counter()
    for entry in kb.entries.values():
        for proc in entry.processes.values():
            seen = 0
            for (k, value), n in proc.feature_counts.items():
                if k == kind:
                    joint[(proc.process_name, value)] += n
                    seen += n
            if proc.session_count > seen:
                joint[(proc.process_name, _ABSENT)] += proc.session_count - seen
    return dict(joint)


def compute_weights(kb: KnowledgeBase) -> FeatureWeights:
    if not kb.entries:
        raise EmptyKnowledgeBase("cannot compute weights from an empty knowledge base")
    return FeatureWeights({kind: gain_ratio(contingency(kb, kind)) for kind in FEATURE_KINDS})


# -- classification -------------------------------------------------------------

def _softmax(scores: Sequence[float]) -> list[float]:
    m = max(scores)
    exps = [math.exp(s - m) for s in scores]
    total = math.fsum(exps)
    return [e / total for e in exps]


class ProcessClassifier:
    """Classifies sessions against one knowledge base.

    ``features`` restricts which feature kinds contribute (ablation); the
    approximate-match cache and destination indexes are kept per instance.
    """

    def __init__(
        self,
        kb: KnowledgeBase,
        weights: Optional[FeatureWeights] = None,
        tables: Optional[EquivalenceTables] = None,
        features: Optional[Iterable[str]] = None,
        cache: Optional[MatchCache] = None,
    ):
        if not kb.entries:
            raise EmptyKnowledgeBase("knowledge base has no fingerprints")
        self.kb = kb
        self.weights = weights if weights is not None else FeatureWeights.default()
        self.tables = tables or EquivalenceTables()
        self.features = tuple(FEATURE_KINDS if features is None else features)
        bad = set(self.features) - set(FEATURE_KINDS)
        if bad:
            raise ValueError(f"unknown feature kinds: {sorted(bad)}")
        self.cache = cache or MatchCache()
        self._dest_index: dict[str, dict[str, Counter]] = {}

    def resolve(self, fingerprint: str) -> MatchResult:
        if fingerprint in self.kb.entries:
            return MatchResult(fingerprint, 0, EXACT)
        return self.cache.lookup(self.kb, fingerprint)

    def scores(self, fingerprint: str, dest: DestinationContext) -> tuple[MatchResult, list[tuple]]:
        """Match result and (process entry, log score) for every candidate."""
        match = self.resolve(fingerprint)
        entry = self.kb.entries[match.matched_fingerprint]
        if not entry.processes:
            raise NoCandidates(f"no processes recorded for {match.matched_fingerprint}")
        t = entry.total_count
        floor = 1.0 / t
        feats = destination_features(dest, self.tables)
        active = [(k, feats[k], self.weights[k]) for k in self.features if k in feats]
        out = []
        for proc in entry.processes.values():
            n = proc.session_count
            q = math.log(n / t)
            for kind, value, w in active:
                p = proc.feature_counts.get((kind, value), 0) / n
                q += w * math.log(p if p > 0 else floor)
            out.append((proc, q))
        return match, out

    def classify(self, fingerprint: str, dest: DestinationContext) -> ClassificationResult:
        match, scored = self.scores(fingerprint, dest)
        scored.sort(key=lambda pq: (-pq[1], pq[0].process_name))
        probs = _softmax([q for _, q in scored])
        return _result(scored, probs, match)

    def top_process(self, fingerprint: str) -> ClassificationResult:
        match = self.resolve(fingerprint)
        entry = self.kb.entries[match.matched_fingerprint]
        if not entry.processes:
            raise NoCandidates(f"no processes recorded for {match.matched_fingerprint}")
        t = entry.total_count
        procs = sorted(entry.processes.values(), key=lambda p: (-p.session_count, p.process_name))
        scored = [(p, math.log(p.session_count / t)) for p in procs]
        return _result(scored, [p.session_count / t for p in procs], match)

    def destination_only(self, kind: str, dest: DestinationContext) -> ClassificationResult:
        if kind not in ("server_name", "ip"):
            raise ValueError(f"destination-only baseline supports server_name or ip, not {kind!r}")
        value = destination_features(dest, self.tables).get(kind)
        counts = self._destination_index(kind).get(value) if value is not None else None
        if not counts:
            return ClassificationResult(())
        total = sum(counts.values())
        procs = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        info = self._process_info()
        cands = tuple(
            CandidateScore(name, info[name][0], info[name][1], math.log(n / total), n / total)
            for name, n in procs
        )
        return ClassificationResult(cands, None, math.fsum(c.probability for c in cands if c.malware))

    def _destination_index(self, kind: str) -> dict[str, Counter]:
        index = self._dest_index.get(kind)
        if index is None:
            index = defaultdict(Counter)
            for entry in self.kb.entries.values():
                for proc in entry.processes.values():
                    for (k, value), n in proc.feature_counts.items():
                        if k == kind:
                            index[value][proc.process_name] += n
            self._dest_index[kind] = index
        return index

    def _process_info(self) -> dict[str, tuple[str, bool]]:
        info: dict[str, tuple[str, bool]] = {}
        for entry in self.kb.entries.values():
            for p in entry.processes.values():
                family, mal = info.get(p.process_name, (p.process_family, False))
                info[p.process_name] = (family, mal or p.malware)
        return info


def _result(scored, probs, match) -> ClassificationResult:
    cands = tuple(
        CandidateScore(p.process_name, p.process_family, p.malware, q, prob)
        for (p, q), prob in zip(scored, probs)
    )
    mal = math.fsum(c.probability for c in cands if c.malware)
    return ClassificationResult(cands, match, min(max(mal, 0.0), 1.0))


def classify(kb, weights, fingerprint, dest, tables=None, features=None) -> ClassificationResult:
    return ProcessClassifier(kb, weights, tables, features).classify(fingerprint, dest)


def top_process(kb, fingerprint, tables=None) -> ClassificationResult:
    return ProcessClassifier(kb, FeatureWeights.uniform(0.0), tables).top_process(fingerprint)


def destination_only(kb, key_kind, dest, tables=None) -> ClassificationResult:
    return ProcessClassifier(kb, FeatureWeights.uniform(0.0), tables).destination_only(key_kind, dest)


def apply_threshold(result: ClassificationResult, min_probability: float) -> Optional[ClassificationResult]:
    """The result if its top probability reaches ``min_probability``, else None (abstain)."""
    if not 0.0 <= min_probability <= 1.0:
        raise ValueError("threshold must be within [0, 1]")
    return result if result.candidates and result.probability >= min_probability else None


# -- metrics ----------------------------------------------------------------------

@dataclass
class Metrics:
    micro_f1: float
    micro_precision: float
    micro_recall: float
    per_label: dict[str, dict[str, float]] = field(default_factory=dict)
    malware_precision: Optional[float] = None
    malware_recall: Optional[float] = None
    count: int = 0


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def evaluate(
    predictions: Sequence[tuple[Optional[str], str]],
    malware: Optional[Sequence[tuple[bool, bool]]] = None,
) -> Metrics:
    """Micro-averaged F1 plus per-label and malware precision/recall.

    A predicted label of None (abstain, or an unknown destination) counts
    as a miss for the true label without a false positive.
    """
    if not predictions:
        raise ValueError("no predictions to evaluate")
    tp, fp, fn = Counter(), Counter(), Counter()
    for pred, true in predictions:
        if pred == true:
            tp[true] += 1
        else:
            fn[true] += 1
            if pred is not None:
                fp[pred] += 1
    TP, FP, FN = sum(tp.values()), sum(fp.values()), sum(fn.values())
    p, r = _ratio(TP, TP + FP), _ratio(TP, TP + FN)
    f1 = _ratio(2 * TP, 2 * TP + FP + FN)
    labels = sorted(set(tp) | set(fp) | set(fn))
    per_label = {
        lab: {"precision": _ratio(tp[lab], tp[lab] + fp[lab]),
              "recall": _ratio(tp[lab], tp[lab] + fn[lab]),
              "support": tp[lab] + fn[lab]}
        for lab in labels
    }
    m = Metrics(f1, p, r, per_label, count=len(predictions))
    if malware is not None:
        mtp = sum(1 for pr, tr in malware if pr and tr)
        mfp = sum(1 for pr, tr in malware if pr and not tr)
        mfn = sum(1 for pr, tr in malware if not pr and tr)
        m.malware_precision = _ratio(mtp, mtp + mfp)
        m.malware_recall = _ratio(mtp, mtp + mfn)
    return m
