"""Scoring models (QL, BM25, HLM), query/relevance models and set measures."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence, Union

from .index import Document, Index

DEFAULT_MU = 3500.0
DEFAULT_K1 = 1.2
DEFAULT_B = 0.75
DEFAULT_HLM_LAMBDA = 0.15
RM_CUTOFF = 40


@dataclass(frozen=True)
class QueryModel:
    probs: Mapping[str, float]

    def __post_init__(self):
        if self.probs:
            total = sum(self.probs.values())
            if abs(total - 1.0) > 1e-9 or min(self.probs.values()) < 0:
                raise ValueError(f"query model not normalized (sum={total})")

    def terms(self) -> frozenset[str]:
        return frozenset(self.probs)

    def __bool__(self) -> bool:
        return bool(self.probs)


@dataclass(frozen=True)
class RelevanceModel(QueryModel):
    cutoff: int = RM_CUTOFF

    def __post_init__(self):
        super().__post_init__()
        if len(self.probs) > self.cutoff:
            raise ValueError(f"relevance model has {len(self.probs)} terms, cutoff {self.cutoff}")


EMPTY_MODEL = RelevanceModel({})

QueryLike = Union[Sequence[str], QueryModel, Mapping[str, float]]


def query_weights(q: QueryLike) -> list[tuple[str, float]]:
    """Term weights in sorted term order: counts for token lists, probabilities for models."""
    if isinstance(q, QueryModel):
        items = q.probs.items()
    elif isinstance(q, Mapping):
        items = q.items()
    else:
        items = Counter(q).items()
    return sorted((t, float(w)) for t, w in items if w > 0)


def normalized(weights: Mapping[str, float]) -> dict[str, float]:
    total = sum(weights[t] for t in sorted(weights))
    if total <= 0:
        return {}
    return {t: weights[t] / total for t in sorted(weights) if weights[t] > 0}


def mle_query_model(tokens: Sequence[str]) -> QueryModel:
    if not tokens:
        raise ValueError("cannot estimate a query model from no tokens")
    counts = Counter(tokens)
    n = len(tokens)
    return QueryModel({t: counts[t] / n for t in sorted(counts)})


def interpolate(a: QueryModel, b: QueryModel, weight: float) -> QueryModel:
    """weight*a + (1-weight)*b; zero-weight terms are dropped."""
    out = {}
    for t in sorted(set(a.probs) | set(b.probs)):
        p = weight * a.probs.get(t, 0.0) + (1.0 - weight) * b.probs.get(t, 0.0)
        if p > 0:
            out[t] = p
    return QueryModel(out)


def top_terms(weights: Mapping[str, float], cutoff: int = RM_CUTOFF) -> RelevanceModel:
    """Keep the ``cutoff`` heaviest terms (ties lexicographic) and renormalize."""
    ranked = sorted(((t, w) for t, w in weights.items() if w > 0), key=lambda tw: (-tw[1], tw[0]))[:cutoff]
    return RelevanceModel(normalized(dict(ranked)), cutoff=cutoff)


class _Field:
    """A scoring target: term frequencies and length of a document or text field."""

    __slots__ = ("tf", "length")

    def __init__(self, tf: Mapping[str, int], length: int):
        self.tf = tf
        self.length = length

    @classmethod
    def of(cls, d: Union[Document, Sequence[str], str], index: Index) -> "_Field":
        if isinstance(d, str):
            return cls(index.doc_tf[d], index.doc_lengths[d])
        if isinstance(d, Document):
            if d.doc_id in index.doc_tf:
                return cls(index.doc_tf[d.doc_id], index.doc_lengths[d.doc_id])
            d = d.body
        return cls(Counter(d), len(d))


@dataclass(frozen=True)
class QL:
    mu: float = DEFAULT_MU

    def __post_init__(self):
        if self.mu <= 0:
            raise ValueError("mu must be positive")

    name = "QL"

    def score_field(self, weights, f: _Field, index: Index) -> float:
        denom = f.length + self.mu
        s = 0.0
        for t, w in weights:
            s += w * math.log((f.tf.get(t, 0) + self.mu * index.collection_prob(t)) / denom)
        return s


@dataclass(frozen=True)
class BM25:
    k1: float = DEFAULT_K1
    b: float = DEFAULT_B

    def __post_init__(self):
        if self.k1 <= 0 or not 0 < self.b <= 1:
            raise ValueError("BM25 requires k1 > 0 and 0 < b <= 1")

    name = "BM25"

    def idf(self, term: str, index: Index) -> float:
        n = index.n_docs
        df = index.doc_freq.get(term, 0)
        return math.log((n - df + 0.5) / (df + 0.5) + 1.0)

    def score_field(self, weights, f: _Field, index: Index) -> float:
        avgdl = index.avg_doc_length or 1.0
        norm = self.k1 * (1.0 - self.b + self.b * f.length / avgdl)
        s = 0.0
        for t, w in weights:
            tf = f.tf.get(t, 0)
            if tf:
                s += w * self.idf(t, index) * tf * (1.0 + self.k1) / (tf + norm)
        return s


@dataclass(frozen=True)
class HLM:
    lam: float = DEFAULT_HLM_LAMBDA

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("HLM lambda must lie in (0, 1)")

    name = "HLM"

    def score_field(self, weights, f: _Field, index: Index) -> float:
        s = 0.0
        for t, w in weights:
            p_ml = f.tf.get(t, 0) / f.length if f.length else 0.0
            s += w * math.log(self.lam * p_ml + (1.0 - self.lam) * index.collection_prob(t))
        return s


Scorer = Union[QL, BM25, HLM]


def score_document(scorer: Scorer, q: QueryLike, d: Union[Document, Sequence[str], str], index: Index) -> float:
    """Score ``d`` (a Document, doc id or token field) against a query or query model."""
    return scorer.score_field(query_weights(q), _Field.of(d, index), index)


def rank(
    scorer: Scorer, q: QueryLike, index: Index, candidates: Iterable[str], k: int = 100
) -> list[tuple[str, float]]:
    """Score candidates; descending score, ties by ascending doc id, truncated at ``k``."""
    weights = query_weights(q)
    scored = [(d, scorer.score_field(weights, _Field.of(d, index), index)) for d in candidates]
    scored.sort(key=lambda ds: (-ds[1], ds[0]))
    return scored[:k]


FeedbackDoc = Union[str, Sequence[str]]


def estimate_rm1(
    query: Sequence[str],
    top_docs: Sequence[Union[FeedbackDoc, tuple[FeedbackDoc, Optional[float]]]],
    index: Index,
    cutoff: int = RM_CUTOFF,
    mu: float = DEFAULT_MU,
    exclude: frozenset[str] = frozenset(),
) -> RelevanceModel:
    """RM1: P(w|R) proportional to sum_d P(w|d) P(q|d), truncated to ``cutoff`` terms.

    ``top_docs`` items are doc ids, token sequences, or ``(doc, ql_score)``
    pairs. A missing score is computed as the query's QL log-likelihood.
    P(w|d) is Dirichlet-smoothed with ``mu``; candidate terms are those
    occurring in the feedback documents, minus ``exclude``.
    """
    if not top_docs:
        raise ValueError("RM1 needs at least one feedback document")
    ql = QL(mu)
    qw = query_weights(list(query))
    fields, scores = [], []
    for item in top_docs:
        if isinstance(item, tuple) and len(item) == 2 and not isinstance(item[1], str):
            doc, score = item
        else:
            doc, score = item, None
        f = _Field.of(doc, index)
        fields.append(f)
        scores.append(ql.score_field(qw, f, index) if score is None else float(score))
    top = max(scores)
    doc_weights = [math.exp(s - top) for s in scores]
    vocab = sorted({t for f in fields for t in f.tf} - exclude)
    weights = {}
    for t in vocab:
        pc = mu * index.collection_prob(t)
        weights[t] = sum(dw * (f.tf.get(t, 0) + pc) / (f.length + mu) for f, dw in zip(fields, doc_weights))
    return top_terms(weights, cutoff)


def jaccard_terms(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def js_divergence(p: QueryModel | Mapping[str, float], q: QueryModel | Mapping[str, float]) -> float:
    """Jensen-Shannon divergence in bits (bounded by 1)."""
    p = p.probs if isinstance(p, QueryModel) else p
    q = q.probs if isinstance(q, QueryModel) else q
    kl_p = kl_q = 0.0
    for t in sorted(set(p) | set(q)):
        pt, qt = p.get(t, 0.0), q.get(t, 0.0)
        m = (pt + qt) / 2.0
        if pt > 0:
            kl_p += pt * math.log2(pt / m)
        if qt > 0:
            kl_q += qt * math.log2(qt / m)
    return min(1.0, max(0.0, 0.5 * kl_p + 0.5 * kl_q))
