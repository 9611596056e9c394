"""Embedding-based session/position matching and social expansion terms."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence, Union

import numpy as np

from .difflda import PositionModel
from .initial_ranker import SessionModels

log = logging.getLogger(__name__)

PRINTED = "printed"
SIM_ARGMAX = "sim_argmax"


class EmbeddingFormatError(ValueError):
    pass


class EmbeddingStore:
    """Term vectors, kept alongside their unit-normalized copies."""

    def __init__(self, vectors: Mapping[str, np.ndarray]):
        dims = {len(v) for v in vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"mixed embedding dimensions: {sorted(dims)}")
        self.dim = dims.pop() if dims else 0
        self.vectors = {}
        for t, v in vectors.items():
            v = np.asarray(v, dtype=float)
            if not np.any(v):
                log.warning("dropping zero vector for %r", t)
                continue
            self.vectors[t] = v
        self._unit = {t: v / np.linalg.norm(v) for t, v in self.vectors.items()}

    def __len__(self) -> int:
        return len(self.vectors)

    def __contains__(self, term: str) -> bool:
        return term in self._unit

    def unit(self, term: str) -> np.ndarray:
        return self._unit[term]

    def unit_matrix(self, terms: Iterable[str]) -> np.ndarray:
        rows = [self._unit[t] for t in terms if t in self._unit]
        return np.array(rows).reshape(len(rows), self.dim)

    def to_text(self) -> str:
        lines = [f"{len(self.vectors)} {self.dim}"]
        for t in sorted(self.vectors):
            lines.append(t + " " + " ".join(repr(float(x)) for x in self.vectors[t]))
        return "\n".join(lines) + "\n"


def load_embeddings(data: bytes | str) -> EmbeddingStore:
    """Parse the text format: a ``V dim`` header, then ``term v1 .. v_dim`` lines."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    lines = data.splitlines()
    try:
        n, dim = (int(x) for x in lines[0].split())
    except (IndexError, ValueError):
        raise EmbeddingFormatError("line 1: expected header 'V dim'") from None
    vectors: dict[str, np.ndarray] = {}
    body = [(i, ln) for i, ln in enumerate(lines[1:], start=2) if ln.strip()]
    if len(body) != n:
        raise EmbeddingFormatError(f"header declares {n} vectors, found {len(body)}")
    for lineno, ln in body:
        parts = ln.split()
        if len(parts) != dim + 1:
            raise EmbeddingFormatError(f"line {lineno}: expected {dim} values, got {len(parts) - 1}")
        term = parts[0]
        if term in vectors:
            log.warning("line %d: duplicate vector for %r; last one wins", lineno, term)
        try:
            vectors[term] = np.array([float(x) for x in parts[1:]])
        except ValueError:
            raise EmbeddingFormatError(f"line {lineno}: non-numeric value") from None
    return EmbeddingStore(vectors)


PositionTerms = Union[PositionModel, Iterable[str]]


def _terms_of(p: PositionTerms) -> list[str]:
    if isinstance(p, PositionModel):
        return [t for t, _ in p.terms]
    return list(p)


def term_position_similarity(x: str, position: PositionTerms, E: EmbeddingStore) -> float:
    """Mean cosine between ``x`` and the position's terms; OOV terms are skipped."""
    if x not in E:
        return 0.0
    R = E.unit_matrix(_terms_of(position))
    if not len(R):
        return 0.0
    return float(np.mean(R @ E.unit(x)))


def session_position_similarity(T: Iterable[str], position: PositionTerms, E: EmbeddingStore) -> float:
    """Mean over in-vocabulary session terms of their similarity to the position."""
    known = [x for x in sorted(set(T)) if x in E]
    if not known:
        log.warning("no session term has an embedding; similarity is 0")
        return 0.0
    R = E.unit_matrix(_terms_of(position))
    if not len(R):
        return 0.0
    return float(np.mean(E.unit_matrix(known) @ R.T))


def session_terms(models: SessionModels) -> frozenset[str]:
    """T_i: union of every observer and local relevance model's term set."""
    out: set[str] = set()
    for m in models.observer_models + models.local_models:
        out |= m.terms()
    return frozenset(out)


def match_session_positions(
    T: Iterable[str], positions: Sequence[PositionModel], E: EmbeddingStore, top_p: int = 2
) -> list[tuple[str, float]]:
    """Positions ordered by similarity to the session (ties by label), first ``top_p`` kept."""
    if not positions:
        raise ValueError("no social positions to match against")
    T = list(T)
    scored = [(p.label, session_position_similarity(T, p, E)) for p in positions]
    scored.sort(key=lambda ls: (-ls[1], ls[0]))
    return scored[:top_p]


@dataclass(frozen=True)
class SocialExpansion:
    session_id: str
    matched_positions: tuple[tuple[str, float], ...]
    terms: Mapping[str, str]  # expansion term -> its most probable position

    @property
    def term_set(self) -> frozenset[str]:
        return frozenset(self.terms)

    @property
    def position_labels(self) -> frozenset[str]:
        return frozenset(label for label, _ in self.matched_positions)


def term_position_probabilities(
    T: Sequence[str], positions: Sequence[PositionModel], E: EmbeddingStore, mode: str = PRINTED
) -> np.ndarray:
    """|T| x |positions| matrix of P(j|x).

    ``printed`` normalizes exp(Sim(x, R_j)) over the session's terms for each
    position; ``sim_argmax`` normalizes over positions for each term instead.
    """
    sims = np.array([[term_position_similarity(x, p, E) for p in positions] for x in T]).reshape(len(T), len(positions))
    ex = np.exp(sims)
    if mode == PRINTED:
        return ex / ex.sum(axis=0, keepdims=True)
    if mode == SIM_ARGMAX:
        return ex / ex.sum(axis=1, keepdims=True)
    raise ValueError(f"unknown expansion mode {mode!r}")


def extract_social_expansion(
    session_id: str,
    T: Iterable[str],
    positions: Sequence[PositionModel],
    matched: Sequence[tuple[str, float]],
    E: EmbeddingStore,
    mode: str = PRINTED,
) -> SocialExpansion:
    """Keep the session terms whose most probable position is one of the matched ones."""
    labels = {p.label for p in positions}
    matched_labels = {label for label, _ in matched}
    if not matched_labels <= labels:
        raise ValueError("matched positions must come from the position list")
    ordered = sorted(positions, key=lambda p: p.label)
    T = sorted(set(T))
    terms: dict[str, str] = {}
    if T and ordered:
        P = term_position_probabilities(T, ordered, E, mode)
        for i, x in enumerate(T):
            winner = ordered[int(np.argmax(P[i]))].label  # argmax keeps the first (lexicographic) tie
            if winner in matched_labels:
                terms[x] = winner
    return SocialExpansion(session_id, tuple(matched), terms)
