"""Sparse and dense indexing with reciprocal-rank-fusion hybrid retrieval.

The sparse side is Okapi BM25 over normalized tokens with an
always-positive idf; the dense side is an exact L2 scan over embedding
vectors from a pluggable provider. Rankings from both sides are combined
with reciprocal rank fusion.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Mapping, Protocol, Sequence

import numpy as np

from .errors import ParseError, ProviderError, TransportError, ValidationError

ARTICLES = frozenset({"a", "an", "the"})


def normalize_tokens(text: str) -> list[str]:
    """Lowercase, map punctuation to spaces, split, drop articles."""
    cleaned = "".join(ch if ch.isalnum() else " " for ch in text.lower())
    return [tok for tok in cleaned.split() if tok not in ARTICLES]


# ---------------------------------------------------------------------------
# Sparse (BM25)
# ---------------------------------------------------------------------------


@dataclass
class SparseIndex:
    """BM25 postings with per-document lengths."""

    k1: float = 1.5
    b: float = 0.75
    doc_lengths: dict[str, int] = field(default_factory=dict)
    postings: dict[str, dict[str, int]] = field(default_factory=dict)

    @property
    def doc_count(self) -> int:
        return len(self.doc_lengths)

    @property
    def avgdl(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)


def build_sparse_index(docs: Mapping[str, str], k1: float = 1.5, b: float = 0.75) -> SparseIndex:
    index = SparseIndex(k1=k1, b=b)
    for doc_id in sorted(docs):
        tokens = normalize_tokens(docs[doc_id])
        index.doc_lengths[doc_id] = len(tokens)
        for tok in tokens:
            index.postings.setdefault(tok, {})
            index.postings[tok][doc_id] = index.postings[tok].get(doc_id, 0) + 1
    return index


def bm25_score(query_tokens: Sequence[str], doc_id: str, index: SparseIndex) -> float:
    """Okapi BM25 with idf = ln(1 + (N - n + 0.5) / (n + 0.5)).

    Query tokens are summed as given, so repeated tokens weigh twice.
    """
    if doc_id not in index.doc_lengths:
        raise ValidationError(f"unknown document {doc_id!r}")
    n_docs = index.doc_count
    avgdl = index.avgdl
    dl = index.doc_lengths[doc_id]
    score = 0.0
    for tok in query_tokens:
        docs_with = index.postings.get(tok, {})
        tf = docs_with.get(doc_id, 0)
        if tf == 0:
            continue
        n_t = len(docs_with)
        idf = math.log(1.0 + (n_docs - n_t + 0.5) / (n_t + 0.5))
        norm = tf + index.k1 * (1.0 - index.b + index.b * dl / avgdl)
        score += idf * tf * (index.k1 + 1.0) / norm
    return score


def bm25_rank(
    query_tokens: Sequence[str], index: SparseIndex, top_m: int
) -> list[tuple[str, float]]:
    """Documents with positive BM25 score, best first; ties by doc id."""
    candidates: set[str] = set()
    for tok in query_tokens:
        candidates.update(index.postings.get(tok, {}))
    scored = [(doc_id, bm25_score(query_tokens, doc_id, index)) for doc_id in candidates]
    scored = [(d, s) for d, s in scored if s > 0.0]
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:top_m]


# ---------------------------------------------------------------------------
# Dense (exact L2)
# ---------------------------------------------------------------------------


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int
    max_tokens: int

    def embed_text(self, text: str) -> Sequence[float]: ...


@dataclass
class DenseIndex:
    """Exact-search store of document embedding vectors."""

    dimension: int
    provider_id: str
    vectors: dict[str, np.ndarray] = field(default_factory=dict)

    def validate(self) -> None:
        for doc_id, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise ValidationError(f"vector for {doc_id!r} has wrong dimension")
            if not np.all(np.isfinite(vec)):
                raise ValidationError(f"vector for {doc_id!r} has non-finite entries")


def _split_parts(text: str, max_tokens: int) -> list[str]:
    """Split text into parts of at most max_tokens normalized tokens.

    Prefers sentence boundaries; a single oversized sentence is hard-split
    on whitespace.
    """
    sentences = [s for s in re.split(r"(?<=[.!?])\s+", text) if s.strip()]
    pieces: list[str] = []
    for sentence in sentences:
        if len(normalize_tokens(sentence)) <= max_tokens:
            pieces.append(sentence)
            continue
        words = sentence.split()
        chunk: list[str] = []
        for word in words:
            if chunk and len(normalize_tokens(" ".join(chunk + [word]))) > max_tokens:
                pieces.append(" ".join(chunk))
                chunk = []
            chunk.append(word)
        if chunk:
            pieces.append(" ".join(chunk))

    parts: list[str] = []
    current: list[str] = []
    count = 0
    for piece in pieces:
        piece_count = len(normalize_tokens(piece))
        if current and count + piece_count > max_tokens:
            parts.append(" ".join(current))
            current, count = [], 0
        current.append(piece)
        count += piece_count
    if current:
        parts.append(" ".join(current))
    return parts or [text]


def embed(text: str, provider: EmbeddingProvider, retries: int = 3) -> np.ndarray:
    """Embed text, averaging part embeddings when it exceeds the provider limit."""

    def call(part: str) -> np.ndarray:
        last: Exception | None = None
        for _ in range(retries):
            try:
                vec = np.asarray(provider.embed_text(part), dtype=np.float64)
            except TransportError as exc:
                last = exc
                continue
            if vec.shape != (provider.dimension,):
                raise ProviderError(
                    f"provider {provider.provider_id!r} returned a vector of shape {vec.shape}"
                )
            return vec
        raise ProviderError(
            f"provider {provider.provider_id!r} failed after {retries} attempts"
        ) from last

    if len(normalize_tokens(text)) <= provider.max_tokens:
        return call(text)
    parts = _split_parts(text, provider.max_tokens)
    vectors = np.stack([call(part) for part in parts])
    return vectors.mean(axis=0)


def build_dense_index(
    docs: Mapping[str, str], provider: EmbeddingProvider, retries: int = 3
) -> DenseIndex:
    index = DenseIndex(dimension=provider.dimension, provider_id=provider.provider_id)
    for doc_id in sorted(docs):
        index.vectors[doc_id] = embed(docs[doc_id], provider, retries)
    index.validate()
    return index


def dense_search(
    query_vec: np.ndarray, index: DenseIndex, top_k: int
) -> list[tuple[str, float]]:
    """Exact scan: ascending L2 distance, ties broken by doc id."""
    query_vec = np.asarray(query_vec, dtype=np.float64)
    if query_vec.shape != (index.dimension,):
        raise ValidationError(
            f"query dimension {query_vec.shape} does not match index ({index.dimension},)"
        )
    scored = [
        (doc_id, float(np.linalg.norm(vec - query_vec)))
        for doc_id, vec in index.vectors.items()
    ]
    scored.sort(key=lambda item: (item[1], item[0]))
    return scored[:top_k]


# ---------------------------------------------------------------------------
# Fusion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FusionParams:
    """Reciprocal-rank-fusion settings."""

    rrf_k: int = 60
    top_m_per_retriever: int = 20
    final_top: int = 2

    def __post_init__(self):
        if self.rrf_k < 1:
            raise ValidationError("rrf_k must be >= 1")
        if self.final_top < 1:
            raise ValidationError("final_top must be >= 1")


def rrf_fuse(
    rankings: Sequence[Sequence[str]], params: FusionParams = FusionParams()
) -> list[tuple[str, float]]:
    """Fused score per doc: sum over lists of 1 / (rrf_k + rank), rank 1-based."""
    fused: dict[str, float] = {}
    for ranking in rankings:
        for rank, doc_id in enumerate(ranking, start=1):
            fused[doc_id] = fused.get(doc_id, 0.0) + 1.0 / (params.rrf_k + rank)
    ordered = sorted(fused.items(), key=lambda item: (-item[1], item[0]))
    return ordered


def hybrid_retrieve(
    query: str,
    sparse: SparseIndex,
    dense: DenseIndex,
    provider: EmbeddingProvider,
    params: FusionParams = FusionParams(),
) -> list[tuple[str, float]]:
    """Top documents by fused sparse + dense ranking."""
    fused = hybrid_rank(query, sparse, dense, provider, params)
    return fused[: params.final_top]


def hybrid_rank(
    query: str,
    sparse: SparseIndex,
    dense: DenseIndex,
    provider: EmbeddingProvider,
    params: FusionParams = FusionParams(),
) -> list[tuple[str, float]]:
    """Full fused ranking (used where callers need to look past final_top)."""
    query_tokens = normalize_tokens(query)
    sparse_ids = [doc for doc, _s in bm25_rank(query_tokens, sparse, params.top_m_per_retriever)]
    if dense.vectors:
        query_vec = embed(query, provider)
        dense_ids = [doc for doc, _d in dense_search(query_vec, dense, params.top_m_per_retriever)]
    else:
        dense_ids = []
    return rrf_fuse([sparse_ids, dense_ids], params)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_SPARSE_FORMAT = "cpgkit-sparse-index"
_DENSE_FORMAT = "cpgkit-dense-index"
_FORMAT_VERSION = 1


def save_sparse_index(index: SparseIndex) -> bytes:
    doc = {
        "format": _SPARSE_FORMAT,
        "format_version": _FORMAT_VERSION,
        "k1": index.k1,
        "b": index.b,
        "doc_lengths": index.doc_lengths,
        "postings": index.postings,
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def load_sparse_index(data: bytes | str) -> SparseIndex:
    doc = _load_index_doc(data, _SPARSE_FORMAT)
    for key in ("k1", "b", "doc_lengths", "postings"):
        if key not in doc:
            raise ParseError(f"sparse index: missing {key}")
    return SparseIndex(
        k1=float(doc["k1"]),
        b=float(doc["b"]),
        doc_lengths={k: int(v) for k, v in doc["doc_lengths"].items()},
        postings={t: {d: int(tf) for d, tf in post.items()} for t, post in doc["postings"].items()},
    )


def save_dense_index(index: DenseIndex) -> bytes:
    index.validate()
    doc = {
        "format": _DENSE_FORMAT,
        "format_version": _FORMAT_VERSION,
        "provider_id": index.provider_id,
        "dimension": index.dimension,
        "vectors": {doc_id: [float(v) for v in vec] for doc_id, vec in index.vectors.items()},
    }
    return (json.dumps(doc, indent=2, sort_keys=True) + "\n").encode("utf-8")


def load_dense_index(data: bytes | str) -> DenseIndex:
    doc = _load_index_doc(data, _DENSE_FORMAT)
    for key in ("provider_id", "dimension", "vectors"):
        if key not in doc:
            raise ParseError(f"dense index: missing {key}")
    index = DenseIndex(dimension=int(doc["dimension"]), provider_id=doc["provider_id"])
    for doc_id, values in doc["vectors"].items():
        index.vectors[doc_id] = np.asarray(values, dtype=np.float64)
    index.validate()
    return index


def _load_index_doc(data: bytes | str, expected_format: str) -> dict:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(f"index file: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or doc.get("format") != expected_format:
        raise ParseError(f"index file: not a {expected_format} document")
    if doc.get("format_version") != _FORMAT_VERSION:
        raise ParseError(f"index file: unsupported format_version {doc.get('format_version')!r}")
    return doc
