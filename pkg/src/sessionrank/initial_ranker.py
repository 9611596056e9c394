"""Session-aware initial ranker and the current/aggregated query baselines."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .index import Index
from .retrieval import (
    DEFAULT_MU,
    EMPTY_MODEL,
    QL,
    RM_CUTOFF,
    QueryModel,
    RelevanceModel,
    estimate_rm1,
    interpolate,
    jaccard_terms,
    mle_query_model,
    rank,
)
from .sessions import Session

log = logging.getLogger(__name__)

LOCAL_DEPTH = 10


class NoRelevanceModelError(LookupError):
    """Every observer relevance model of the session is empty."""


@dataclass(frozen=True)
class SessionModels:
    observer_models: tuple[RelevanceModel, ...]
    local_models: tuple[RelevanceModel, ...]
    theta_concat: QueryModel
    empty_observer_slots: tuple[int, ...] = ()


def concatenated_query(s: Session) -> list[str]:
    return [t for q in s.queries for t in q]


def build_session_models(
    s: Session,
    index: Index,
    candidates: Sequence[str],
    mu: float = DEFAULT_MU,
    cutoff: int = RM_CUTOFF,
    exclude: frozenset[str] = frozenset(),
) -> SessionModels:
    """Per-iteration RM1 models for the observer and local engines.

    Local models are estimated from the local engine's top 10 full documents;
    observer models from the titles and snippets the observer displayed, for
    results present in the local corpus.
    """
    ql = QL(mu)
    observer, local, empty = [], [], []
    for j, it in enumerate(s.iterations):
        top = rank(ql, list(it.query), index, candidates, k=LOCAL_DEPTH) if it.query else []
        local.append(estimate_rm1(it.query, top, index, cutoff, mu, exclude) if top else EMPTY_MODEL)
        shown = [r.title + r.snippet for r in it.observer_results if r.doc_id in index.docs]
        shown = [toks for toks in shown if toks]
        if shown:
            observer.append(estimate_rm1(it.query, shown, index, cutoff, mu, exclude))
        else:
            log.debug("session %s iteration %d: no observer results in corpus", s.id, j)
            observer.append(EMPTY_MODEL)
            empty.append(j)
    return SessionModels(tuple(observer), tuple(local), mle_query_model(concatenated_query(s)), tuple(empty))


def model_score(phi: RelevanceModel, local_models: Sequence[RelevanceModel]) -> float:
    """Best Jaccard overlap between ``phi``'s terms and any local model's terms."""
    terms = phi.terms()
    return max((jaccard_terms(terms, m.terms()) for m in local_models), default=0.0)


def select_relevance_model(m: SessionModels) -> tuple[RelevanceModel, float, int]:
    """(phi*, its score, iteration index); the earliest iteration wins ties."""
    best: Optional[tuple[float, int]] = None
    for j, phi in enumerate(m.observer_models):
        if not phi:
            continue
        score = model_score(phi, m.local_models)
        if best is None or score > best[0]:
            best = (score, j)
    if best is None:
        raise NoRelevanceModelError("all observer relevance models are empty; use the concatenated query model")
    return m.observer_models[best[1]], best[0], best[1]


def initial_query_model(m: SessionModels, alpha: float = 0.70) -> QueryModel:
    try:
        phi, _, _ = select_relevance_model(m)
    except NoRelevanceModelError:
        return m.theta_concat
    return interpolate(m.theta_concat, phi, alpha)


def initial_rank(
    s: Session,
    index: Index,
    candidates: Sequence[str],
    alpha: float = 0.70,
    k: int = 100,
    mu: float = DEFAULT_MU,
    models: Optional[SessionModels] = None,
    exclude: frozenset[str] = frozenset(),
) -> list[tuple[str, float]]:
    """QL ranking of alpha*theta_concat + (1-alpha)*phi*."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if models is None:
        models = build_session_models(s, index, candidates, mu, exclude=exclude)
    return rank(QL(mu), initial_query_model(models, alpha), index, candidates, k)


def current_query_rank(s: Session, index: Index, candidates: Sequence[str], k: int = 100, mu: float = DEFAULT_MU):
    if not candidates or not s.current_query:
        return []
    return rank(QL(mu), mle_query_model(s.current_query), index, candidates, k)


def aggregated_query_rank(s: Session, index: Index, candidates: Sequence[str], k: int = 100, mu: float = DEFAULT_MU):
    concat = concatenated_query(s)
    if not candidates or not concat:
        return []
    return rank(QL(mu), mle_query_model(concat), index, candidates, k)
