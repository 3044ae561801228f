"""TLS client_hello fingerprinting and process inference."""

from .approx_match import MatchCache, MatchResult, cached_nearest, nearest_fingerprint, token_levenshtein
from .classifier import (
    ClassificationResult, FeatureWeights, ProcessClassifier, apply_threshold, classify,
    compute_weights, destination_only, evaluate, top_process,
)
from .equivalence import EquivalenceTables, asn_of, domain_of, port_class, tld_of
from .fingerprint import encode_fingerprint, normalize_grease, tokenize_fingerprint
from .fusion import FusedRecord, HostRecord, NetworkRecord, join_records, label_malware
from .knowledge_base import KnowledgeBase, build_daily, deserialize, filter_window, merge, serialize
from .tls_parser import (
    ClientHelloSummary, DestinationContext, Malformed, Truncated, identify_client_hello,
    parse_client_hello,
)

__version__ = "0.1.0"

__all__ = [
    "ClassificationResult",
    "ClientHelloSummary",
    "DestinationContext",
    "EquivalenceTables",
    "FeatureWeights",
    "FusedRecord",
    "HostRecord",
    "KnowledgeBase",
    "Malformed",
    "MatchCache",
    "MatchResult",
    "NetworkRecord",
    "ProcessClassifier",
    "Truncated",
    "apply_threshold",
    "asn_of",
    "build_daily",
    "cached_nearest",
    "classify",
    "compute_weights",
    "deserialize",
    "destination_only",
    "domain_of",
    "encode_fingerprint",
    "evaluate",
    "filter_window",
    "identify_client_hello",
    "join_records",
    "label_malware",
    "merge",
    "nearest_fingerprint",
    "normalize_grease",
    "parse_client_hello",
    "port_class",
    "serialize",
    "tld_of",
    "token_levenshtein",
    "tokenize_fingerprint",
    "top_process",
]
