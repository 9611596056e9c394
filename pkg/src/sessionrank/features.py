"""Learning-to-rank feature extraction: 75 general and 30 social-position features."""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .index import Index
from .initial_ranker import NoRelevanceModelError, SessionModels, concatenated_query, select_relevance_model
from .lambdamart import RankingData
from .matching import SocialExpansion
from .relatedness import TopicCluster
from .retrieval import (
    BM25,
    DEFAULT_MU,
    EMPTY_MODEL,
    HLM,
    QL,
    QueryModel,
    RelevanceModel,
    _Field,
    estimate_rm1,
    interpolate,
    mle_query_model,
    normalized,
    query_weights,
    top_terms,
)
from .sessions import Session, session_history

log = logging.getLogger(__name__)

LAMBDA_HIST = 0.70
MODELS = ("QL", "BM25", "HLM")
STATS = ("Maximum", "Minimum", "Average", "Variance", "StandardDeviation")


def _triple(prefix: str) -> list[str]:
    return [f"{prefix}[{m}]" for m in MODELS]


def _general_names() -> tuple[str, ...]:
    names: list[str] = []
    for q in ("FirstQuery", "CurrentQuery"):
        for target in ("Document", "Snippet"):
            names += _triple(f"{q}[{target}]")
    names += _triple("AvgFirstAndCurrent")
    names += ["AggregateQueryLength", "No.DistinctTerms", "No.MatchedTerms"]
    names += ["AggregateQueryRatio[Document]", "AggregateQueryRatio[Snippet]"]
    names += _triple("AggregateQueryScore[Document]") + _triple("AggregateQueryScore[Snippet]")
    for st in STATS:
        names += _triple(f"TermStatistics[{st}]")
    names += _triple("TopTermsScores") + _triple("QueryModelScore")
    names += ["No.Queries"]
    for st in STATS:
        names += _triple(f"SessionStatistics[{st}]")
    names += _triple("ExpansionScores") + _triple("ClickedExpansionScores")
    names += ["DocumentRank", "PageRank", "Spamness", "Stopwords", "DocLength", "Wikipedia"]
    return tuple(names)


def _social_names() -> tuple[str, ...]:
    names = ["TopicQueryTerms[Number]", "TopicQueryTerms[Ratio]"]
    names += _triple("TopicQueryScores") + ["TopicExpandTerms"]
    names += _triple("TopicRelevanceScores") + _triple("ClickRelevanceScores")
    names += ["SocialExpandTerms[Number]", "SocialExpandTerms[Ratio]"]
    names += _triple("SocialExpandTermsTitles") + _triple("SocialExpandTermsSnippets")
    names += ["TopicSocialExpandTerms"]
    names += _triple("SocialRelevanceScores") + _triple("TopicSocialRelevanceScores")
    names += _triple("TopicSocialRelevanceScores[Clicked]")
    return tuple(names)


GENERAL_NAMES = _general_names()
SOCIAL_NAMES = _social_names()
FEATURE_NAMES = GENERAL_NAMES + SOCIAL_NAMES
N_GENERAL = len(GENERAL_NAMES)
N_SOCIAL = len(SOCIAL_NAMES)
assert (N_GENERAL, N_SOCIAL) == (75, 30) and len(set(FEATURE_NAMES)) == 105

# the social-position group (as opposed to the related-session group) of the social block
SOCIAL_POSITION_GROUP = tuple(range(SOCIAL_NAMES.index("SocialExpandTerms[Number]"), N_SOCIAL))


@dataclass(frozen=True)
class Scorers:
    ql: QL = QL()
    bm25: BM25 = BM25()
    hlm: HLM = HLM()

    def __iter__(self):
        return iter((self.ql, self.bm25, self.hlm))


def history_query_model(s: Session, lam: float = LAMBDA_HIST) -> QueryModel:
    """lam * MLE(current query) + (1 - lam) * MLE(all earlier queries)."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError("lambda must lie in [0, 1]")
    current = list(s.current_query)
    history = [t for q in session_history(s) for t in q]
    if not history:
        return mle_query_model(current) if current else EMPTY_MODEL
    if not current:
        return mle_query_model(history)
    return interpolate(mle_query_model(current), mle_query_model(history), lam)


def _corpus_clicks(s: Session, index: Index) -> list[str]:
    return [d for d in s.clicked_doc_ids() if d in index.docs]


def clicked_relevance_model(
    query: Sequence[str], doc_ids: Sequence[str], index: Index, mu: float = DEFAULT_MU, exclude=frozenset()
) -> RelevanceModel:
    if not doc_ids or not query:
        return EMPTY_MODEL
    return estimate_rm1(query, list(doc_ids), index, mu=mu, exclude=exclude)


def social_relevance_model(phi: QueryModel, expansion_terms: Iterable[str]) -> QueryModel:
    """Expansion terms weighted by their phi* probability, renormalized."""
    return QueryModel(normalized({t: phi.probs.get(t, 0.0) for t in expansion_terms}))


@dataclass(frozen=True)
class SessionContext:
    """Per-session inputs shared by all of that session's candidate documents."""

    session: Session
    phi: QueryModel
    clicked_rm: QueryModel
    history_model: QueryModel
    initial_ranks: Mapping[str, int]
    expansion_terms: frozenset[str] = frozenset()  # E_i
    social_rm: QueryModel = EMPTY_MODEL

    @property
    def id(self) -> str:
        return self.session.id


def build_session_context(
    s: Session,
    models: SessionModels,
    initial_ranking: Sequence[tuple[str, float]],
    index: Index,
    expansion: Optional[SocialExpansion] = None,
    mu: float = DEFAULT_MU,
    lam_hist: float = LAMBDA_HIST,
    exclude: frozenset[str] = frozenset(),
) -> SessionContext:
    try:
        phi: QueryModel = select_relevance_model(models)[0]
    except NoRelevanceModelError:
        log.warning("session %s has no observer relevance model; expansion features are 0", s.id)
        phi = EMPTY_MODEL
    clicks = _corpus_clicks(s, index)
    if not clicks:
        log.info("session %s has no clicks in the corpus; clicked-expansion features are 0", s.id)
    E = expansion.term_set if expansion is not None else frozenset()
    return SessionContext(
        session=s,
        phi=phi,
        clicked_rm=clicked_relevance_model(concatenated_query(s), clicks, index, mu, exclude),
        history_model=history_query_model(s, lam_hist),
        initial_ranks={d: r for r, (d, _) in enumerate(initial_ranking, start=1)},
        expansion_terms=E,
        social_rm=social_relevance_model(phi, E),
    )


@dataclass(frozen=True)
class TopicArtifacts:
    topic_query: tuple[str, ...]
    topic_relevance_model: QueryModel
    topic_expansion_terms: frozenset[str]
    topic_clicked_rm: QueryModel
    topic_social_expansion: frozenset[str]
    topic_social_rm: QueryModel
    topic_social_rm_clicked: QueryModel
    members: tuple[str, ...] = ()


def _mean_model(models: Sequence[QueryModel]) -> QueryModel:
    models = [m for m in models if m]
    if not models:
        return EMPTY_MODEL
    if len(models) == 1:
        return QueryModel(dict(models[0].probs))
    acc: dict[str, float] = {}
    for m in models:
        for t in sorted(m.probs):
            acc[t] = acc.get(t, 0.0) + m.probs[t]
    return QueryModel(normalized({t: acc[t] / len(models) for t in sorted(acc)}))


def _restrict(m: QueryModel, terms: frozenset[str]) -> QueryModel:
    return QueryModel(normalized({t: p for t, p in m.probs.items() if t in terms}))


def build_topic_artifacts(
    cluster: TopicCluster,
    current: str,
    contexts: Mapping[str, SessionContext],
    index: Index,
    mu: float = DEFAULT_MU,
    exclude: frozenset[str] = frozenset(),
) -> TopicArtifacts:
    """Topic-level query, relevance models and social expansion of ``current``'s cluster.

    Cluster members without a context (not part of the log) are skipped.
    """
    if current not in cluster.members:
        raise ValueError(f"session {current} is not in cluster {cluster.cluster_id}")
    members = [current] + [m for m in cluster.members if m != current and m in contexts]
    ctxs = [contexts[m] for m in members]
    topic_query = tuple(t for c in ctxs for q in c.session.queries for t in q)
    theta_t = _mean_model([c.phi for c in ctxs])
    clicks: dict[str, None] = {}
    for c in ctxs:
        for d in _corpus_clicks(c.session, index):
            clicks.setdefault(d, None)
    if not clicks:
        log.info("topic of session %s has no clicks; click relevance features are 0", current)
    clicked = clicked_relevance_model(topic_query, list(clicks), index, mu, exclude)
    social = frozenset().union(*(c.expansion_terms for c in ctxs))
    return TopicArtifacts(
        topic_query=topic_query,
        topic_relevance_model=theta_t,
        topic_expansion_terms=top_terms(theta_t.probs).terms(),
        topic_clicked_rm=clicked,
        topic_social_expansion=social,
        topic_social_rm=_restrict(_mean_model([c.social_rm for c in ctxs]), social),
        topic_social_rm_clicked=_restrict(clicked, social),
        members=tuple(members),
    )


def _stats(values: Sequence[float]) -> list[float]:
    if not len(values):
        return [0.0] * 5
    v = np.asarray(values, dtype=float)
    var = float(v.var())
    return [float(v.max()), float(v.min()), float(v.mean()), var, float(np.sqrt(var))]


def _scores(scorers: Scorers, weights, f: Optional[_Field], index: Index) -> list[float]:
    if f is None or not weights:
        return [0.0, 0.0, 0.0]
    return [sc.score_field(weights, f, index) for sc in scorers]


def _ratio(terms: Iterable[str], tf: Mapping[str, int]) -> float:
    terms = set(terms)
    return sum(1 for t in terms if tf.get(t, 0)) / len(terms) if terms else 0.0


def _bag(terms: Iterable[str]) -> list[tuple[str, float]]:
    return [(t, 1.0) for t in sorted(set(terms))]


def top_query_terms(queries: Sequence[Sequence[str]]) -> list[str]:
    """The most frequent term(s) across the query chain."""
    counts = Counter(t for q in queries for t in q)
    if not counts:
        return []
    top = max(counts.values())
    return sorted(t for t, c in counts.items() if c == top)


def general_features(ctx: SessionContext, doc_id: str, index: Index, scorers: Scorers = Scorers()) -> np.ndarray:
    s = ctx.session
    doc = _Field.of(doc_id, index)
    snip_tokens = s.observer_snippet(doc_id)
    snip = _Field(Counter(snip_tokens), len(snip_tokens)) if snip_tokens else None
    first = query_weights(list(s.queries[0]))
    current = query_weights(list(s.current_query))
    out: list[float] = []
    first_doc = _scores(scorers, first, doc, index)
    current_doc = _scores(scorers, current, doc, index)
    out += first_doc + _scores(scorers, first, snip, index)
    out += current_doc + _scores(scorers, current, snip, index)
    out += [(a + b) / 2.0 for a, b in zip(first_doc, current_doc)]

    agg = concatenated_query(s)
    agg_w = query_weights(agg)
    distinct = sorted(set(agg))
    out += [float(len(agg)), float(len(distinct)), float(sum(1 for t in distinct if doc.tf.get(t, 0)))]
    out += [_ratio(distinct, doc.tf), _ratio(distinct, snip.tf) if snip else 0.0]
    out += _scores(scorers, agg_w, doc, index) + _scores(scorers, agg_w, snip, index)
    per_term = [_scores(scorers, [(t, 1.0)], doc, index) for t in distinct]
    for st in zip(*[_stats([row[m] for row in per_term]) for m in range(3)]):
        out += list(st)
    out += _scores(scorers, _bag(top_query_terms(s.queries)), doc, index)
    out += _scores(scorers, query_weights(ctx.history_model), doc, index)

    out += [float(len(s.queries))]
    per_query = [_scores(scorers, query_weights(list(q)), doc, index) for q in s.queries if q]
    for st in zip(*[_stats([row[m] for row in per_query]) for m in range(3)]):
        out += list(st)
    out += _scores(scorers, query_weights(ctx.phi), doc, index)
    out += _scores(scorers, query_weights(ctx.clicked_rm), doc, index)
    r = ctx.initial_ranks.get(doc_id)
    out += [1.0 / r if r else 0.0]
    meta = index.docs[doc_id].meta
    out += [meta.pagerank, float(meta.spam_percentile), meta.stopword_ratio, float(meta.length), float(meta.is_wikipedia)]
    return np.array(out, dtype=float)


def _clicked_field_terms(s: Session, part: str) -> set[str]:
    clicked = set(s.clicked_doc_ids())
    out: set[str] = set()
    for it in s.iterations:
        for res in it.observer_results:
            if res.doc_id in clicked:
                out.update(getattr(res, part))
    return out


def social_features(
    ctx: SessionContext, doc_id: str, artifacts: TopicArtifacts, index: Index, scorers: Scorers = Scorers()
) -> np.ndarray:
    doc = _Field.of(doc_id, index)
    topic_terms = sorted(set(artifacts.topic_query))
    matched = sum(1 for t in topic_terms if doc.tf.get(t, 0))
    out: list[float] = [float(matched), matched / len(topic_terms) if topic_terms else 0.0]
    out += _scores(scorers, query_weights(list(artifacts.topic_query)), doc, index)
    out += [_ratio(artifacts.topic_expansion_terms, doc.tf)]
    out += _scores(scorers, query_weights(artifacts.topic_relevance_model), doc, index)
    out += _scores(scorers, query_weights(artifacts.topic_clicked_rm), doc, index)

    E = ctx.expansion_terms
    if not E:
        return np.array(out + [0.0] * len(SOCIAL_POSITION_GROUP), dtype=float)
    present = sum(1 for t in E if doc.tf.get(t, 0))
    out += [float(present), present / len(E)]
    out += _scores(scorers, _bag(E & _clicked_field_terms(ctx.session, "title")), doc, index)
    out += _scores(scorers, _bag(E & _clicked_field_terms(ctx.session, "snippet")), doc, index)
    out += [_ratio(artifacts.topic_social_expansion, doc.tf)]
    out += _scores(scorers, query_weights(ctx.social_rm), doc, index)
    out += _scores(scorers, query_weights(artifacts.topic_social_rm), doc, index)
    out += _scores(scorers, query_weights(artifacts.topic_social_rm_clicked), doc, index)
    return np.array(out, dtype=float)


def feature_vector(
    ctx: SessionContext,
    doc_id: str,
    artifacts: TopicArtifacts,
    index: Index,
    scorers: Scorers = Scorers(),
) -> np.ndarray:
    """The full 105-dimensional vector, general block first."""
    return np.concatenate([general_features(ctx, doc_id, index, scorers), social_features(ctx, doc_id, artifacts, index, scorers)])


_SOCIAL_START = N_GENERAL + SOCIAL_POSITION_GROUP[0]
BLOCKS = {
    "general": range(0, N_GENERAL),
    "related": range(N_GENERAL, _SOCIAL_START),
    "social": range(_SOCIAL_START, N_GENERAL + N_SOCIAL),
}


def block_columns(blocks: Sequence[str]) -> list[int]:
    """Column indices for the named feature blocks, in registry order."""
    unknown = set(blocks) - set(BLOCKS)
    if unknown:
        raise ValueError(f"unknown feature blocks: {sorted(unknown)}")
    return sorted(i for b in blocks for i in BLOCKS[b])


# LETOR-style dump


@dataclass
class FeatureRows:
    qids: list[str] = field(default_factory=list)
    doc_ids: list[str] = field(default_factory=list)
    grades: list[int] = field(default_factory=list)
    vectors: list[np.ndarray] = field(default_factory=list)

    def add(self, qid: str, doc_id: str, grade: int, vec: np.ndarray) -> None:
        self.qids.append(qid)
        self.doc_ids.append(doc_id)
        self.grades.append(int(grade))
        self.vectors.append(vec)

    def to_ranking_data(self) -> RankingData:
        X = np.array(self.vectors).reshape(len(self.vectors), -1 if self.vectors else len(FEATURE_NAMES))
        return RankingData(X, np.array(self.grades), np.array(self.qids), np.array(self.doc_ids))


def format_letor(rows: FeatureRows) -> str:
    lines = []
    for qid, doc, g, vec in zip(rows.qids, rows.doc_ids, rows.grades, rows.vectors):
        feats = " ".join(f"{i}:{float(v)!r}" for i, v in enumerate(vec, start=1))
        lines.append(f"{g} qid:{qid} {feats} # {doc}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_letor(text: str) -> FeatureRows:
    rows = FeatureRows()
    for ln in text.splitlines():
        if not ln.strip():
            continue
        body, _, doc = ln.partition("#")
        parts = body.split()
        grade, qid = int(parts[0]), parts[1].removeprefix("qid:")
        vec = np.array([float(p.split(":", 1)[1]) for p in parts[2:]])
        rows.add(qid, doc.strip(), grade, vec)
    return rows


def registry_json(names: Sequence[str] = FEATURE_NAMES) -> dict[str, str]:
    return {str(i): n for i, n in enumerate(names, start=1)}
