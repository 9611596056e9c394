"""LambdaMART: boosted regression trees fitted to lambda gradients of nDCG@10."""
from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    n_trees: int = 1000
    leaves_per_tree: int = 10
    learning_rate: float = 0.1
    min_leaf_instances: int = 1
    early_stop_rounds: int = 100
    sigma: float = 1.0
    k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0 or self.leaves_per_tree < 1 or self.min_leaf_instances < 1:
            raise ValueError("tree counts must be positive")
        if self.learning_rate < 0 or self.sigma <= 0:
            raise ValueError("learning rate must be >= 0 and sigma > 0")


@dataclass
class RankingData:
    """Feature rows grouped by query; rows of one query need not be contiguous."""

    X: np.ndarray
    grades: np.ndarray
    qids: np.ndarray
    doc_ids: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.grades = np.asarray(self.grades, dtype=float)
        self.qids = np.asarray(self.qids).astype(str)
        self.doc_ids = np.asarray(self.doc_ids).astype(str)
        n = len(self.X)
        if not (len(self.grades) == len(self.qids) == len(self.doc_ids) == n):
            raise ValueError("ranking data columns differ in length")

    def groups(self) -> list[np.ndarray]:
        order = sorted(set(self.qids.tolist()))
        return [np.nonzero(self.qids == q)[0] for q in order]

    def subset(self, qids: Sequence[str]) -> "RankingData":
        keep = np.isin(self.qids, list(qids))
        return RankingData(self.X[keep], self.grades[keep], self.qids[keep], self.doc_ids[keep])

    def select_features(self, columns: Sequence[int]) -> "RankingData":
        return RankingData(self.X[:, list(columns)], self.grades, self.qids, self.doc_ids)


def _order(scores: np.ndarray, doc_ids: Optional[np.ndarray]) -> np.ndarray:
    """Indices by descending score, ties by doc id."""
    if doc_ids is None:
        doc_ids = np.arange(len(scores))
    return np.lexsort((doc_ids, -scores))


def ideal_dcg(grades: np.ndarray, k: int) -> float:
    g = np.sort(grades)[::-1][:k]
    return float(((2.0**g - 1.0) / np.log2(np.arange(len(g)) + 2.0)).sum())


def ndcg(scores: np.ndarray, grades: np.ndarray, doc_ids: Optional[np.ndarray] = None, k: int = 10) -> float:
    idcg = ideal_dcg(grades, k)
    if idcg == 0:
        return 0.0
    g = grades[_order(scores, doc_ids)][:k]
    return float(((2.0**g - 1.0) / np.log2(np.arange(len(g)) + 2.0)).sum() / idcg)


def lambda_gradients(
    scores: np.ndarray,
    grades: np.ndarray,
    doc_ids: Optional[np.ndarray] = None,
    k: int = 10,
    sigma: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    """Lambdas and second-order weights for one query group.

    For every pair with grade_i > grade_j the swap cost |delta nDCG@k| in the
    current ordering scales a logistic pairwise gradient; positive lambdas
    push a document up.
    """
    scores = np.asarray(scores, dtype=float)
    grades = np.asarray(grades, dtype=float)
    n = len(scores)
    lam, w = np.zeros(n), np.zeros(n)
    idcg = ideal_dcg(grades, k)
    if n < 2 or idcg == 0:
        return lam, w
    pos = np.empty(n, dtype=int)
    pos[_order(scores, doc_ids)] = np.arange(n)
    disc = np.where(pos < k, 1.0 / np.log2(pos + 2.0), 0.0)
    gain = 2.0**grades - 1.0
    better = grades[:, None] > grades[None, :]
    delta = np.abs((gain[:, None] - gain[None, :]) * (disc[:, None] - disc[None, :])) / idcg
    rho = expit(-sigma * (scores[:, None] - scores[None, :]))
    pair_l = np.where(better, sigma * rho * delta, 0.0)
    pair_w = np.where(better, sigma * sigma * rho * (1.0 - rho) * delta, 0.0)
    lam = pair_l.sum(1) - pair_l.sum(0)
    w = pair_w.sum(1) + pair_w.sum(0)
    return lam, w


@dataclass
class RegressionTree:
    feature: np.ndarray  # -1 at leaves
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    gain: np.ndarray  # squared-error decrease of each split (0 at leaves)

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    def apply(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        while True:
            feat = self.feature[node]
            idx = np.nonzero(feat >= 0)[0]
            if not len(idx):
                return node
            nd = node[idx]
            go_left = X[idx, feat[idx]] <= self.threshold[nd]
            node[idx] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.apply(np.atleast_2d(X))]

    def to_json(self, node: int = 0) -> dict:
        if self.feature[node] < 0:
            return {"value": float(self.value[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "gain": float(self.gain[node]),
            "left": self.to_json(int(self.left[node])),
            "right": self.to_json(int(self.right[node])),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RegressionTree":
        cols: dict[str, list] = {k: [] for k in ("feature", "threshold", "left", "right", "value", "gain")}

        def add(o) -> int:
            i = len(cols["feature"])
            for key in cols:
                cols[key].append(0)
            if "value" in o:
                cols["feature"][i], cols["threshold"][i], cols["value"][i] = -1, 0.0, o["value"]
                cols["left"][i] = cols["right"][i] = -1
                cols["gain"][i] = 0.0
            else:
                cols["feature"][i], cols["threshold"][i], cols["gain"][i] = o["feature"], o["threshold"], o["gain"]
                cols["value"][i] = 0.0
                cols["left"][i] = add(o["left"])
                cols["right"][i] = add(o["right"])
            return i

        add(obj)
        return cls(
            np.array(cols["feature"], dtype=int),
            np.array(cols["threshold"], dtype=float),
            np.array(cols["left"], dtype=int),
            np.array(cols["right"], dtype=int),
            np.array(cols["value"], dtype=float),
            np.array(cols["gain"], dtype=float),
        )


def _best_split(X, sorted_idx, targets, mask, min_leaf):
    """Best (gain, feature, threshold) for the rows in ``mask``, or None."""
    m = int(mask.sum())
    if m < 2 * min_leaf:
        return None
    F = X.shape[1]
    sel = sorted_idx.T[mask[sorted_idx].T].reshape(F, m)
    vals = np.take_along_axis(X.T, sel, axis=1)
    t = targets[sel]
    left = np.cumsum(t, axis=1)[:, :-1]
    total = targets[mask].sum()
    n_left = np.arange(1, m, dtype=float)
    gain = left**2 / n_left + (total - left) ** 2 / (m - n_left) - total**2 / m
    ok = (vals[:, :-1] < vals[:, 1:]) & (n_left >= min_leaf) & (m - n_left >= min_leaf)
    gain = np.where(ok, gain, -np.inf)
    flat = int(np.argmax(gain))  # first maximum: lowest feature, then lowest threshold
    f, p = divmod(flat, m - 1)
    g = float(gain[f, p])
    scale = float((targets[mask] ** 2).sum())
    if not math.isfinite(g) or g <= 1e-12 * max(scale, 1e-300):
        return None
    return g, f, float(vals[f, p])


def fit_tree(
    X: np.ndarray,
    targets: np.ndarray,
    hessians: np.ndarray,
    config: TrainConfig = TrainConfig(),
    sorted_idx: Optional[np.ndarray] = None,
) -> RegressionTree:
    """Grow a tree best-first on squared error, Newton-step leaf values."""
    X = np.asarray(X, dtype=float)
    targets = np.asarray(targets, dtype=float)
    hessians = np.asarray(hessians, dtype=float)
    if len(X) == 0:
        raise ValueError("cannot fit a tree to no instances")
    if sorted_idx is None:
        sorted_idx = np.argsort(X, axis=0, kind="stable")
    masks = [np.ones(len(X), dtype=bool)]
    feature, threshold, left, right, gain = [-1], [0.0], [-1], [-1], [0.0]
    candidates = {0: _best_split(X, sorted_idx, targets, masks[0], config.min_leaf_instances)}
    n_leaves = 1
    while n_leaves < config.leaves_per_tree:
        live = [(c[0], node) for node, c in candidates.items() if c is not None]
        if not live:
            break
        best_gain = max(g for g, _ in live)
        node = min(n for g, n in live if g == best_gain)
        g, f, thr = candidates.pop(node)
        go_left = masks[node] & (X[:, f] <= thr)
        go_right = masks[node] & ~go_left
        feature[node], threshold[node], gain[node] = f, thr, g
        for child_mask in (go_left, go_right):
            i = len(masks)
            masks.append(child_mask)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            gain.append(0.0)
            candidates[i] = _best_split(X, sorted_idx, targets, child_mask, config.min_leaf_instances)
        left[node], right[node] = len(masks) - 2, len(masks) - 1
        n_leaves += 1
    value = np.zeros(len(masks))
    for i, mk in enumerate(masks):
        if feature[i] < 0:
            sw = hessians[mk].sum()
            value[i] = targets[mk].sum() / sw if sw > 0 else 0.0
    return RegressionTree(
        np.array(feature), np.array(threshold), np.array(left), np.array(right), value, np.array(gain)
    )


@dataclass
class TreeEnsemble:
    trees: list[RegressionTree]
    learning_rate: float
    n_features: int
    config: TrainConfig = field(default_factory=TrainConfig)
    feature_names: tuple[str, ...] = ()
    validation_trace: list[float] = field(default_factory=list)

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        out = np.zeros(len(X))
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def registry_hash(self) -> str:
        return hashlib.sha256("\n".join(self.feature_names).encode()).hexdigest()[:16]

    def to_json(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "feature_registry_hash": self.registry_hash(),
            "config": asdict(self.config),
            "validation_ndcg": self.validation_trace,
            "trees": [t.to_json() for t in self.trees],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, obj: dict, feature_names: Sequence[str] = ()) -> "TreeEnsemble":
        return cls(
            [RegressionTree.from_json(t) for t in obj["trees"]],
            obj["learning_rate"],
            obj["n_features"],
            TrainConfig(**obj["config"]),
            tuple(feature_names),
            list(obj.get("validation_ndcg", [])),
        )


def predict(ensemble: TreeEnsemble, x: np.ndarray) -> float:
    """Score a single feature vector."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("predict scores one vector; use TreeEnsemble.predict for matrices")
    return float(ensemble.predict(x[None, :])[0])


def mean_ndcg(data: RankingData, scores: np.ndarray, k: int = 10) -> float:
    groups = data.groups()
    if not groups:
        return 0.0
    return float(np.mean([ndcg(scores[g], data.grades[g], data.doc_ids[g], k) for g in groups]))


def train(
    train_data: RankingData,
    valid_data: Optional[RankingData] = None,
    config: TrainConfig = TrainConfig(),
    feature_names: Sequence[str] = (),
) -> TreeEnsemble:
    """Boost trees on lambda gradients; keep the prefix with the best validation nDCG@k.

    Without a validation set the training data is used for model selection.
    The trace records validation nDCG for 0..n trees.
    """
    if len(train_data.X) == 0:
        raise ValueError("empty training set")
    valid = train_data if valid_data is None or len(valid_data.X) == 0 else valid_data
    X = train_data.X
    groups = train_data.groups()
    sorted_idx = np.argsort(X, axis=0, kind="stable")
    scores = np.zeros(len(X))
    vscores = np.zeros(len(valid.X))
    trees: list[RegressionTree] = []
    trace = [mean_ndcg(valid, vscores, config.k)]
    best, best_at = trace[0], 0
    for it in range(config.n_trees):
        lam = np.zeros(len(X))
        w = np.zeros(len(X))
        for g in groups:
            lam[g], w[g] = lambda_gradients(scores[g], train_data.grades[g], train_data.doc_ids[g], config.k, config.sigma)
        tree = fit_tree(X, lam, w, config, sorted_idx)
        trees.append(tree)
        scores += config.learning_rate * tree.predict(X)
        vscores += config.learning_rate * tree.predict(valid.X)
        v = mean_ndcg(valid, vscores, config.k)
        trace.append(v)
        if v > best:
            best, best_at = v, it + 1
        elif it + 1 - best_at >= config.early_stop_rounds:
            break
    log.debug("lambdaMART: %d trees grown, keeping %d (validation nDCG %.4f)", len(trees), best_at, best)
    return TreeEnsemble(trees[:best_at], config.learning_rate, X.shape[1], config, tuple(feature_names), trace[: best_at + 1])


def gini_importance(ensembles: Sequence[TreeEnsemble], n_features: Optional[int] = None) -> np.ndarray:
    """Split-gain importance summed over trees, averaged over ensembles, scaled to max 1."""
    if not ensembles:
        raise ValueError("need at least one ensemble")
    n = n_features or ensembles[0].n_features
    total = np.zeros(n)
    for ens in ensembles:
        imp = np.zeros(n)
        for t in ens.trees:
            internal = t.feature >= 0
            np.add.at(imp, t.feature[internal], t.gain[internal])
        total += imp
    total /= len(ensembles)
    top = total.max()
    return total / top if top > 0 else total


def importance_report(importance: np.ndarray, names: Sequence[str]) -> str:
    """TSV ``rank name importance``, most important first."""
    order = sorted(range(len(importance)), key=lambda i: (-importance[i], i))
    lines = ["rank\tname\timportance"]
    for r, i in enumerate(order, start=1):
        lines.append(f"{r}\t{names[i]}\t{importance[i]:.3f}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class CVSplit:
    train: tuple[str, ...]
    validation: tuple[str, ...]
    test: tuple[str, ...]


def make_cv_splits(qids: Sequence[str], seed: int = 0, n_splits: int = 10) -> list[CVSplit]:
    """Ten seeded 60/20/20 query partitions.

    Test sets are rotating windows over one seeded permutation so every query
    is tested at least once when the counts allow; validation and training
    sets are reshuffled independently for each split.
    """
    ids = sorted(set(qids))
    n = len(ids)
    if n < 5:
        raise ValueError("cross-validation needs at least 5 queries")
    n_test = max(1, round(0.2 * n))
    n_val = max(1, round(0.2 * n))
    rng = np.random.default_rng(seed)
    perm = [ids[i] for i in rng.permutation(n)]
    stride = math.ceil(n / n_splits)
    splits = []
    for s in range(n_splits):
        test = [perm[(s * stride + j) % n] for j in range(n_test)]
        rest = [q for q in perm if q not in set(test)]
        rest = [rest[i] for i in rng.permutation(len(rest))]
        splits.append(CVSplit(tuple(sorted(rest[n_val:])), tuple(sorted(rest[:n_val])), tuple(sorted(test))))
    return splits
