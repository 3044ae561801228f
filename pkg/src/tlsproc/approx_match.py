"""Nearest known fingerprint by token-level edit distance."""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Optional, Sequence

from .fingerprint import FingerprintTokens, tokenize_fingerprint
from .knowledge_base import KnowledgeBase

EXACT = "exact"
APPROXIMATE = "approximate"


class EmptyKnowledgeBase(ValueError):
    pass


@dataclass(frozen=True)
class MatchResult:
    matched_fingerprint: str
    distance: int
    kind: str


def _seq(x) -> Sequence:
    return x.sequence() if isinstance(x, FingerprintTokens) else x


def token_levenshtein(a, b, bound: Optional[int] = None) -> int:
    """Unit-cost edit distance between two token sequences.

    With ``bound`` set, gives up as soon as every alignment costs more than
    ``bound`` and returns ``bound + 1``.
    """
    a, b = _seq(a), _seq(b)
    if len(a) < len(b):
        a, b = b, a
    if bound is not None and len(a) - len(b) > bound:
        return bound + 1
    prev = list(range(len(b) + 1))
    for i, ta in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, tb in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ta != tb))
        if bound is not None and min(cur) > bound:
            return bound + 1
        prev = cur
    return prev[-1]


class FingerprintIndex:
    """Tokenized view of a knowledge base, scanned in tie-break order."""

    def __init__(self, kb: KnowledgeBase):
        if not kb.entries:
            raise EmptyKnowledgeBase("knowledge base has no fingerprints")
        self.kb = kb
        order = sorted(kb.entries, key=lambda fp: (-kb.entries[fp].total_count, fp))
        self._items = [(fp, tokenize_fingerprint(fp).sequence()) for fp in order]

    def nearest(self, query: str) -> MatchResult:
        if query in self.kb.entries:
            return MatchResult(query, 0, EXACT)
        q = tokenize_fingerprint(query).sequence()
        best_fp, best = None, None
        for fp, seq in self._items:
            # earlier items win ties, so a candidate must beat best strictly
            d = token_levenshtein(q, seq, None if best is None else best - 1)
            if best is None or d < best:
                best_fp, best = fp, d
                if best == 1:
                    break
        return MatchResult(best_fp, best, APPROXIMATE)


def nearest_fingerprint(kb: KnowledgeBase, query: str) -> MatchResult:
    return FingerprintIndex(kb).nearest(query)


class MatchCache:
    """Remembers approximate-match results for one knowledge base at a time."""

    def __init__(self):
        self._lock = threading.Lock()
        self._kb = None
        self._index: Optional[FingerprintIndex] = None
        self._results: dict[str, MatchResult] = {}
        self.hits = 0
        self.computations = 0

    def __len__(self):
        return len(self._results)

    def index_for(self, kb: KnowledgeBase) -> FingerprintIndex:
        with self._lock:
            if self._kb is not kb:
                self._kb = kb
                self._index = None
                self._results = {}
            if self._index is None:
                self._index = FingerprintIndex(kb)
            return self._index

    def lookup(self, kb: KnowledgeBase, query: str) -> MatchResult:
        index = self.index_for(kb)
        with self._lock:
            cached = self._results.get(query)
            if cached is not None:
                self.hits += 1
                return cached
        result = index.nearest(query)
        with self._lock:
            if self._kb is kb:
                self._results[query] = result
            self.computations += 1
        return result


def cached_nearest(kb: KnowledgeBase, cache: MatchCache, query: str) -> MatchResult:
    return cache.lookup(kb, query)
