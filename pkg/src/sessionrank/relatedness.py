"""Related-session identification: pruning, pair features, AROW and topic clusters."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Optional, Sequence

import numpy as np

from .retrieval import QueryModel, jaccard_terms, js_divergence

log = logging.getLogger(__name__)

FEATURE_NAMES = (
    "shared_query_terms",
    "shared_query_term_ratio",
    "identical_queries",
    "shared_results",
    "shared_result_ratio",
    "jsd_relevance_models",
    "jaccard_expansion_terms",
    "jaccard_social_positions",
    "jaccard_social_expansion",
    "jsd_social_relevance_models",
)
N_FEATURES = len(FEATURE_NAMES)
RESULT_CUTOFF = 10


@dataclass(frozen=True)
class SessionProfile:
    """What the relatedness classifier needs to know about one session."""

    id: str
    queries: tuple[tuple[str, ...], ...]
    result_ids: frozenset[str]
    positions: frozenset[str]
    relevance_model: QueryModel
    expansion_terms: frozenset[str]
    social_terms: frozenset[str]
    social_relevance_model: QueryModel
    topic_label: Optional[str] = None

    @property
    def query_terms(self) -> frozenset[str]:
        return frozenset(t for q in self.queries for t in q)


def make_profile(session, models_phi, T, expansion, social_rm) -> SessionProfile:
    """Assemble a profile; results are cut at the top 10 per query."""
    results = frozenset(r.doc_id for it in session.iterations for r in it.observer_results if r.rank <= RESULT_CUTOFF)
    return SessionProfile(
        id=session.id,
        queries=tuple(session.queries),
        result_ids=results,
        positions=expansion.position_labels,
        relevance_model=models_phi,
        expansion_terms=frozenset(T),
        social_terms=expansion.term_set,
        social_relevance_model=social_rm,
        topic_label=session.topic_label,
    )


def survives_pruning(t: SessionProfile, e: SessionProfile) -> bool:
    """A shared social position plus a shared result or query term."""
    if not t.positions & e.positions:
        return False
    return bool(t.result_ids & e.result_ids) or bool(t.query_terms & e.query_terms)


def prune_candidates(t: SessionProfile, S: Iterable[SessionProfile]) -> list[SessionProfile]:
    return [e for e in S if e.id != t.id and survives_pruning(t, e)]


def _jsd_or_max(p: QueryModel, q: QueryModel) -> float:
    if not p or not q:
        return 1.0
    return js_divergence(p, q)


def pair_features(t: SessionProfile, e: SessionProfile) -> np.ndarray:
    qt, qe = t.query_terms, e.query_terms
    return np.array(
        [
            len(qt & qe),
            jaccard_terms(qt, qe),
            len(set(t.queries) & set(e.queries)),
            len(t.result_ids & e.result_ids),
            jaccard_terms(t.result_ids, e.result_ids),
            _jsd_or_max(t.relevance_model, e.relevance_model),
            jaccard_terms(t.expansion_terms, e.expansion_terms),
            jaccard_terms(t.positions, e.positions),
            jaccard_terms(t.social_terms, e.social_terms),
            _jsd_or_max(t.social_relevance_model, e.social_relevance_model),
        ],
        dtype=float,
    )


@dataclass
class ArowClassifier:
    """Diagonal-covariance AROW over standardized features plus a bias input."""

    mean: np.ndarray
    variance: np.ndarray
    r: float = 1.0
    scaler_means: np.ndarray = field(default_factory=lambda: np.zeros(N_FEATURES))
    scaler_stds: np.ndarray = field(default_factory=lambda: np.ones(N_FEATURES))

    @classmethod
    def zero(cls, n_features: int = N_FEATURES, r: float = 1.0) -> "ArowClassifier":
        return cls(np.zeros(n_features + 1), np.ones(n_features + 1), r, np.zeros(n_features), np.ones(n_features))

    def augment(self, x: np.ndarray) -> np.ndarray:
        z = (np.asarray(x, dtype=float) - self.scaler_means) / self.scaler_stds
        return np.append(z, 1.0)

    def margin(self, x: np.ndarray) -> float:
        return float(self.mean @ self.augment(x))

    def update(self, x: np.ndarray, y: int) -> None:
        xa = self.augment(x)
        m = float(self.mean @ xa)
        if m * y >= 1:
            return
        v = float(self.variance @ (xa * xa))
        beta = 1.0 / (v + self.r)
        a = max(0.0, 1.0 - y * m) * beta
        sx = self.variance * xa
        self.mean = self.mean + a * y * sx
        self.variance = self.variance - beta * sx * sx

    def to_json(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "variance": self.variance.tolist(),
            "scaler": {"means": self.scaler_means.tolist(), "stds": self.scaler_stds.tolist()},
            "r": self.r,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ArowClassifier":
        return cls(
            np.array(obj["mean"]),
            np.array(obj["variance"]),
            float(obj["r"]),
            np.array(obj["scaler"]["means"]),
            np.array(obj["scaler"]["stds"]),
        )


def arow_train(
    examples: Sequence[tuple[np.ndarray, int]],
    r: float = 1.0,
    epochs: int = 5,
    seed: int = 0,
    standardize: bool = True,
) -> ArowClassifier:
    """Train on (features, +1/-1) pairs; example order is reshuffled each epoch."""
    if not examples:
        raise ValueError("AROW needs at least one training example")
    if r <= 0:
        raise ValueError("r must be positive")
    clean = []
    for x, y in examples:
        x = np.asarray(x, dtype=float)
        if not np.all(np.isfinite(x)):
            log.warning("skipping example with non-finite features")
            continue
        clean.append((x, 1 if y > 0 else -1))
    if not clean:
        raise ValueError("no finite training examples")
    X = np.array([x for x, _ in clean])
    clf = ArowClassifier.zero(X.shape[1], r)
    if standardize:
        clf.scaler_means = X.mean(0)
        std = X.std(0)
        clf.scaler_stds = np.where(std > 0, std, 1.0)
    rng = np.random.default_rng(seed)
    for _ in range(epochs):
        for i in rng.permutation(len(clean)):
            clf.update(*clean[i])
    return clf


def classify_pair(clf: ArowClassifier, x: np.ndarray) -> bool:
    """True when the pair is classified as related."""
    return clf.margin(x) > 0


def make_training_pairs(
    profiles: Sequence[SessionProfile], seed: int = 0, neg_ratio: int = 3
) -> list[tuple[np.ndarray, int]]:
    """Labelled pairs among pruning survivors.

    Positives share a topic label; negatives are drawn from differently
    labelled survivors, at most ``neg_ratio`` per positive.
    """
    pos, neg = [], []
    for a, b in combinations(profiles, 2):
        if a.topic_label is None or b.topic_label is None or not survives_pruning(a, b):
            continue
        (pos if a.topic_label == b.topic_label else neg).append((a, b))
    rng = np.random.default_rng(seed)
    keep = min(len(neg), neg_ratio * max(len(pos), 1))
    if keep < len(neg):
        idx = sorted(rng.choice(len(neg), size=keep, replace=False))
        neg = [neg[i] for i in idx]
    return [(pair_features(a, b), 1) for a, b in pos] + [(pair_features(a, b), -1) for a, b in neg]


@dataclass(frozen=True)
class TopicCluster:
    cluster_id: int
    members: tuple[str, ...]


def build_topic_clusters(
    t: Optional[SessionProfile], S: Sequence[SessionProfile], clf: ArowClassifier
) -> list[TopicCluster]:
    """Connected components of the classified-related graph over S plus t."""
    nodes = {p.id: p for p in S}
    if t is not None:
        nodes[t.id] = t
    ids = sorted(nodes)
    parent = {i: i for i in ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for a, b in combinations(ids, 2):
        pa, pb = nodes[a], nodes[b]
        if survives_pruning(pa, pb) and classify_pair(clf, pair_features(pa, pb)):
            ra, rb = find(a), find(b)
            if ra != rb:
                parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, list[str]] = {}
    for i in ids:
        groups.setdefault(find(i), []).append(i)
    ordered = sorted(groups.values(), key=lambda g: g[0])
    return [TopicCluster(n, tuple(g)) for n, g in enumerate(ordered)]


def cluster_of(session_id: str, clusters: Sequence[TopicCluster]) -> TopicCluster:
    for c in clusters:
        if session_id in c.members:
            return c
    raise KeyError(session_id)


def pairwise_f1(outcomes: Iterable[tuple[bool, bool]]) -> float:
    """F1 of the positive class over (gold, predicted) pairs."""
    tp = fp = fn = 0
    for gold, pred in outcomes:
        tp += gold and pred
        fp += pred and not gold
        fn += gold and not pred
    if tp == 0:
        return 0.0
    return 2 * tp / (2 * tp + fp + fn)


def clustering_f1(clusters: Sequence[TopicCluster], labels: dict[str, Optional[str]]) -> float:
    """Pairwise F1 of 'same cluster' against 'same gold label'."""
    where = {m: c.cluster_id for c in clusters for m in c.members}
    ids = sorted(where)
    pairs = []
    for a, b in combinations(ids, 2):
        gold = labels.get(a) is not None and labels.get(a) == labels.get(b)
        pairs.append((gold, where[a] == where[b]))
    return pairwise_f1(pairs)
