"""Hybrid lexical plus dense retrieval over a fixed document set.

Lexical scoring is Okapi BM25 (k1=1.2, b=0.75) with the non-negative
idf variant ``ln(1 + (N - n + 0.5) / (n + 0.5))``.  Dense scoring is
cosine similarity over document embeddings.  For each query the two
score families are min-max normalized independently over the candidate
pool and fused with a weight pair that must sum to one (default equal
weights).  When a family's scores are all equal, normalization maps
every one of them to 1.0, so a single-document corpus always fuses
to 1.0.

Ranking is deterministic: ties break by ascending ``doc_id``.
"""

from __future__ import annotations

import json
import math
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, StorageError
from .gateway import EmbeddingBackend
from .tokenize import terms

DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_WEIGHTS = (0.5, 0.5)


def check_weights(weights: tuple[float, float]) -> tuple[float, float]:
    w_lex, w_dense = weights
    if w_lex < 0 or w_dense < 0 or abs(w_lex + w_dense - 1.0) > 1e-9:
        raise ConfigError(f"fusion weights must be non-negative and sum to 1, got {weights}")
    return (float(w_lex), float(w_dense))


@dataclass
class HybridIndex:
    doc_ids: list[str]
    texts: list[str]
    doc_terms: list[list[str]]
    df: dict[str, int]
    avgdl: float
    embeddings: np.ndarray
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B
    weights: tuple[float, float] = DEFAULT_WEIGHTS
    _embedding_norms: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return len(self.doc_ids)

    def embedding_norms(self) -> np.ndarray:
        if self._embedding_norms is None:
            self._embedding_norms = np.linalg.norm(self.embeddings, axis=1)
        return self._embedding_norms


@dataclass(frozen=True)
class SearchResult:
    doc_id: str
    score: float
    lex_raw: float
    dense_raw: float
    text: str


def build_index(docs: list[tuple[str, str]], embedder: EmbeddingBackend, *,
                k1: float = DEFAULT_K1, b: float = DEFAULT_B,
                weights: tuple[float, float] = DEFAULT_WEIGHTS) -> HybridIndex:
    """Index ``docs`` given as ``(doc_id, text)`` pairs.

    Documents with no extractable terms get a zero embedding instead of
    a backend call; they can never match but keep their slot and id.
    """
    weights = check_weights(weights)
    ids = [d[0] for d in docs]
    if len(set(ids)) != len(ids):
        raise ConfigError("duplicate doc_id in corpus")
    texts = [d[1] for d in docs]
    doc_terms = [terms(t) for t in texts]

    df: Counter[str] = Counter()
    for toks in doc_terms:
        df.update(set(toks))
    lens = [len(toks) for toks in doc_terms]
    avgdl = (sum(lens) / len(lens)) if lens else 0.0

    nonempty = [i for i, toks in enumerate(doc_terms) if toks]
    if nonempty:
        vectors = embedder.embed([texts[i] for i in nonempty])
        dim = vectors.shape[1]
    else:
        vectors = np.zeros((0, 0), dtype=np.float64)
        dim = 0
    embeddings = np.zeros((len(docs), dim), dtype=np.float64)
    for row, i in enumerate(nonempty):
        embeddings[i] = vectors[row]

    return HybridIndex(ids, texts, doc_terms, dict(df), avgdl, embeddings,
                       k1=k1, b=b, weights=weights)


def bm25_scores(index: HybridIndex, query_terms: list[str]) -> np.ndarray:
    """Okapi BM25 score of every document against ``query_terms``."""
    n_docs = len(index)
    scores = np.zeros(n_docs, dtype=np.float64)
    if n_docs == 0 or not query_terms or index.avgdl == 0.0:
        return scores
    idf = {}
    for term in query_terms:
        if term not in idf:
            n = index.df.get(term, 0)
            idf[term] = math.log(1.0 + (n_docs - n + 0.5) / (n + 0.5))
    for i, toks in enumerate(index.doc_terms):
        if not toks:
            continue
        freqs = Counter(toks)
        dl = len(toks)
        score = 0.0
        for term in query_terms:
            f = freqs.get(term, 0)
            if f == 0:
                continue
            score += idf[term] * (f * (index.k1 + 1.0)) / (
                f + index.k1 * (1.0 - index.b + index.b * dl / index.avgdl)
            )
        scores[i] = score
    return scores


def dense_scores(index: HybridIndex, query_vector: np.ndarray) -> np.ndarray:
    """Cosine similarity of every document embedding against the query."""
    if len(index) == 0:
        return np.zeros(0, dtype=np.float64)
    if index.embeddings.shape[1] == 0:
        return np.zeros(len(index), dtype=np.float64)
    qnorm = float(np.linalg.norm(query_vector))
    if qnorm == 0.0:
        return np.zeros(len(index), dtype=np.float64)
    norms = index.embedding_norms()
    scores = np.zeros(len(index), dtype=np.float64)
    for i in range(len(index)):
        if norms[i] == 0.0:
            continue
        scores[i] = float(np.dot(index.embeddings[i], query_vector)) / (norms[i] * qnorm)
    return scores


def minmax_normalize(scores: np.ndarray) -> np.ndarray:
    """Map a score family to [0, 1]; an all-equal family maps to all 1.0."""
    if scores.size == 0:
        return scores.astype(np.float64)
    lo = float(scores.min())
    hi = float(scores.max())
    if hi == lo:
        return np.ones_like(scores, dtype=np.float64)
    return (scores - lo) / (hi - lo)


@dataclass(frozen=True)
class _ScoreTriple:
    fused: np.ndarray
    lex_raw: np.ndarray
    dense_raw: np.ndarray


def _score_query(index: HybridIndex, query: str, embedder: EmbeddingBackend,
                 weights: tuple[float, float] | None) -> _ScoreTriple:
    query_terms = terms(query)
    if not query_terms:
        raise ConfigError(f"query has no searchable terms: {query!r}")
    w_lex, w_dense = check_weights(weights) if weights is not None else index.weights
    lex_raw = bm25_scores(index, query_terms)
    qvec = embedder.embed([query])[0] if len(index) else np.zeros(0)
    dense_raw = dense_scores(index, qvec)
    fused = w_lex * minmax_normalize(lex_raw) + w_dense * minmax_normalize(dense_raw)
    return _ScoreTriple(fused, lex_raw, dense_raw)


def _ranked(index: HybridIndex, triple: _ScoreTriple, k: int | None) -> list[SearchResult]:
    order = sorted(range(len(index)), key=lambda i: (-triple.fused[i], index.doc_ids[i]))
    if k is not None:
        order = order[:k]
    return [
        SearchResult(
            index.doc_ids[i],
            float(triple.fused[i]),
            float(triple.lex_raw[i]),
            float(triple.dense_raw[i]),
            index.texts[i],
        )
        for i in order
    ]


def search(index: HybridIndex, query: str, embedder: EmbeddingBackend, *,
           k: int | None = None,
           weights: tuple[float, float] | None = None) -> list[SearchResult]:
    """Rank documents by fused hybrid score, ties by ascending doc_id."""
    return _ranked(index, _score_query(index, query, embedder, weights), k)


def search_progressive(index: HybridIndex, prefix: str, segment: str,
                       embedder: EmbeddingBackend, *, k: int | None = None,
                       weights: tuple[float, float] | None = None) -> list[SearchResult]:
    """Rank documents for a segment seen in the context of a growing prefix.

    Runs two full searches, one for ``prefix + segment`` and one for the
    segment alone, and averages their scores per document.  With an
    empty or whitespace prefix both queries coincide and the result is
    identical to :func:`search` on the segment.
    """
    if prefix.strip():
        combined = prefix.rstrip() + " " + segment.lstrip()
    else:
        combined = segment
    a = _score_query(index, combined, embedder, weights)
    b = _score_query(index, segment, embedder, weights)
    mean = _ScoreTriple(
        (a.fused + b.fused) / 2.0,
        (a.lex_raw + b.lex_raw) / 2.0,
        (a.dense_raw + b.dense_raw) / 2.0,
    )
    return _ranked(index, mean, k)


# ---------------------------------------------------------------------------
# Persistence

_EMB_MAGIC = b"RCEM"


def save_index(index: HybridIndex, directory: str | Path) -> None:
    """Write the index as ``lexical.json`` plus a raw float64 matrix."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lexical = {
        "doc_ids": index.doc_ids,
        "texts": index.texts,
        "doc_terms": index.doc_terms,
        "df": index.df,
        "avgdl": index.avgdl,
        "k1": index.k1,
        "b": index.b,
        "weights": list(index.weights),
    }
    (directory / "lexical.json").write_text(
        json.dumps(lexical, ensure_ascii=False, indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    rows, dim = index.embeddings.shape
    with open(directory / "embeddings.bin", "wb") as fh:
        fh.write(_EMB_MAGIC)
        fh.write(struct.pack("<II", rows, dim))
        fh.write(np.ascontiguousarray(index.embeddings, dtype=np.float64).tobytes())


def load_index(directory: str | Path) -> HybridIndex:
    directory = Path(directory)
    try:
        lexical = json.loads((directory / "lexical.json").read_text(encoding="utf-8"))
        blob = (directory / "embeddings.bin").read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot load index from {directory}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise StorageError(f"corrupt lexical stats in {directory}: {exc}") from exc
    if blob[:4] != _EMB_MAGIC or len(blob) < 12:
        raise StorageError(f"corrupt embedding file in {directory}")
    rows, dim = struct.unpack("<II", blob[4:12])
    expected = 12 + rows * dim * 8
    if len(blob) != expected:
        raise StorageError(
            f"embedding file in {directory} has {len(blob)} bytes, expected {expected}"
        )
    embeddings = np.frombuffer(blob[12:], dtype=np.float64).reshape(rows, dim).copy()
    return HybridIndex(
        doc_ids=lexical["doc_ids"],
        texts=lexical["texts"],
        doc_terms=lexical["doc_terms"],
        df=lexical["df"],
        avgdl=lexical["avgdl"],
        embeddings=embeddings,
        k1=lexical["k1"],
        b=lexical["b"],
        weights=tuple(lexical["weights"]),
    )
