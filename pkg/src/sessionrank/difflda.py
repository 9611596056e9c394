"""DiffLDA: LDA with a pseudo-relevance-biased prior, a reserved role topic and
a background switch, trained by collapsed Gibbs sampling.

Each token carries a switch ``x`` (background or topic path) and, on the topic
path, a topic ``z``. Documents in the pseudo-relevant set get the prior
``alpha + tau * e_r`` over topics, where ``r`` is the role topic and
``tau = 2 * alpha``; all other documents keep the symmetric ``alpha``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numba import njit
from scipy.special import digamma

from .index import STOPWORDS, Index
from .retrieval import DEFAULT_MU, QL, rank

log = logging.getLogger(__name__)

BACKGROUND, TOPIC_PATH = 0, 1
HYPER_MIN, HYPER_MAX = 1e-4, 10.0


@dataclass(frozen=True)
class DiffLdaConfig:
    K: int = 20
    alpha: float = 0.5
    beta: float = 0.01
    mu_switch: tuple[float, float] = (1.0, 1.0)  # (background, topic path)
    lambda_psi: float = 0.5  # Psi is observed, so this never enters sampling
    tau: Optional[float] = None
    iterations: int = 2000
    burn_in: Optional[int] = None
    sample_fraction: float = 0.2
    optimize_every: int = 20
    role_topic: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.K < 2:
            raise ValueError("DiffLDA needs K >= 2")
        if self.alpha <= 0 or self.beta <= 0 or min(self.mu_switch) <= 0:
            raise ValueError("alpha, beta and mu_switch must be positive")
        if not 0 <= self.role_topic < self.K:
            raise ValueError("role topic index out of range")
        if self.iterations < 1:
            raise ValueError("need at least one sweep")
        if self.tau is None:
            object.__setattr__(self, "tau", 2.0 * self.alpha)
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.iterations // 2)

    @property
    def n_samples(self) -> int:
        return max(1, int(round(self.iterations * self.sample_fraction)))


@dataclass
class DiffLdaState:
    """Token assignments and the count tables they imply."""

    words: np.ndarray  # token -> word id
    doc_of: np.ndarray  # token -> document index
    doc_lengths: np.ndarray
    psi: np.ndarray  # observed pseudo-relevance indicator per document
    x: np.ndarray  # token -> BACKGROUND / TOPIC_PATH
    z: np.ndarray  # token -> topic (meaningful only on the topic path)
    n_mk: np.ndarray
    n_m: np.ndarray
    n_kw: np.ndarray
    n_k: np.ndarray
    n_bw: np.ndarray
    switch: np.ndarray  # [background tokens, topic-path tokens]
    alpha: float
    beta: float
    tau: float
    role_topic: int

    @property
    def K(self) -> int:
        return self.n_k.shape[0]

    @property
    def V(self) -> int:
        return self.n_bw.shape[0]

    def bias(self) -> np.ndarray:
        """Per-document bias vectors L_m: tau at the role topic for pseudo-relevant docs."""
        L = np.zeros((len(self.psi), self.K))
        L[self.psi, self.role_topic] = self.tau
        return L

    def doc_priors(self) -> np.ndarray:
        return self.alpha + self.bias()

    def is_conserved(self) -> bool:
        """Count tables agree with a fresh tally of the assignments."""
        M, K, V = len(self.psi), self.K, self.V
        tp = self.x == TOPIC_PATH
        n_mk = np.zeros((M, K), dtype=np.int64)
        np.add.at(n_mk, (self.doc_of[tp], self.z[tp]), 1)
        n_kw = np.zeros((K, V), dtype=np.int64)
        np.add.at(n_kw, (self.z[tp], self.words[tp]), 1)
        n_bw = np.bincount(self.words[~tp], minlength=V)
        bg_per_doc = np.bincount(self.doc_of[~tp], minlength=M)
        return bool(
            np.array_equal(n_mk, self.n_mk)
            and np.array_equal(n_mk.sum(1), self.n_m)
            and np.array_equal(n_kw, self.n_kw)
            and np.array_equal(n_kw.sum(1), self.n_k)
            and np.array_equal(n_bw, self.n_bw)
            and self.switch[0] == (~tp).sum()
            and self.switch[1] == tp.sum()
            and np.array_equal(self.n_m + bg_per_doc, self.doc_lengths)
        )


@njit(cache=True)
def _sweep(words, doc_of, x, z, n_mk, n_m, n_kw, n_k, n_bw, switch, priors, prior_sums, beta, mu_bg, mu_tp, u):
    K = n_k.shape[0]
    V = n_bw.shape[0]
    vb = V * beta
    cum = np.empty(K + 1)
    for i in range(words.shape[0]):
        w = words[i]
        m = doc_of[i]
        if x[i] == 0:
            n_bw[w] -= 1
            switch[0] -= 1
        else:
            k = z[i]
            n_mk[m, k] -= 1
            n_m[m] -= 1
            n_kw[k, w] -= 1
            n_k[k] -= 1
            switch[1] -= 1
        total = (switch[0] + mu_bg) * (n_bw[w] + beta) / (switch[0] + vb)
        cum[0] = total
        c = (switch[1] + mu_tp) / (n_m[m] + prior_sums[m])
        for k in range(K):
            total += c * (n_mk[m, k] + priors[m, k]) * (n_kw[k, w] + beta) / (n_k[k] + vb)
            cum[k + 1] = total
        r = u[i] * total
        j = 0
        while j < K and cum[j] <= r:
            j += 1
        if j == 0:
            x[i] = 0
            n_bw[w] += 1
            switch[0] += 1
        else:
            k = j - 1
            x[i] = 1
            z[i] = k
            n_mk[m, k] += 1
            n_m[m] += 1
            n_kw[k, w] += 1
            n_k[k] += 1
            switch[1] += 1


@dataclass
class DiffLdaResult:
    vocab: list[str]
    phi: np.ndarray  # K x V topic-word distributions
    phi_background: np.ndarray  # V
    theta: np.ndarray  # M x K
    pi: np.ndarray  # [P(background), P(topic path)]
    state: DiffLdaState
    config: DiffLdaConfig
    loglik_trace: list[tuple[int, float]] = field(default_factory=list)

    @property
    def role_topic(self) -> np.ndarray:
        return self.phi[self.config.role_topic]


def _vocab_and_tokens(corpus: Sequence[Sequence[str]]):
    vocab = sorted({t for doc in corpus for t in doc})
    ids = {t: i for i, t in enumerate(vocab)}
    words = np.fromiter((ids[t] for doc in corpus for t in doc), dtype=np.int64)
    doc_of = np.repeat(np.arange(len(corpus), dtype=np.int64), [len(d) for d in corpus])
    return vocab, words, doc_of


def init_state(corpus: Sequence[Sequence[str]], relevant: Sequence[bool], config: DiffLdaConfig, rng: np.random.Generator):
    """Draw initial assignments from the prior (switch from mu, topics from alpha_m)."""
    vocab, words, doc_of = _vocab_and_tokens(corpus)
    M, K, V = len(corpus), config.K, len(vocab)
    psi = np.asarray(relevant, dtype=bool)
    if psi.shape != (M,):
        raise ValueError("need one pseudo-relevance flag per document")
    mu_bg, mu_tp = config.mu_switch
    n = len(words)
    x = (rng.random(n) >= mu_bg / (mu_bg + mu_tp)).astype(np.int64)
    priors = np.full((M, K), config.alpha)
    priors[psi, config.role_topic] += config.tau
    cdf = np.cumsum(priors / priors.sum(1, keepdims=True), axis=1)
    z = (rng.random(n)[:, None] >= cdf[doc_of]).sum(1).clip(0, K - 1).astype(np.int64)
    tp = x == TOPIC_PATH
    n_mk = np.zeros((M, K), dtype=np.int64)
    np.add.at(n_mk, (doc_of[tp], z[tp]), 1)
    n_kw = np.zeros((K, V), dtype=np.int64)
    np.add.at(n_kw, (z[tp], words[tp]), 1)
    state = DiffLdaState(
        words=words,
        doc_of=doc_of,
        doc_lengths=np.array([len(d) for d in corpus], dtype=np.int64),
        psi=psi,
        x=x,
        z=z,
        n_mk=n_mk,
        n_m=n_mk.sum(1),
        n_kw=n_kw,
        n_k=n_kw.sum(1),
        n_bw=np.bincount(words[~tp], minlength=V).astype(np.int64),
        switch=np.array([(~tp).sum(), tp.sum()], dtype=np.int64),
        alpha=config.alpha,
        beta=config.beta,
        tau=config.tau,
        role_topic=config.role_topic,
    )
    return vocab, state


def optimize_hyperparameters(state: DiffLdaState) -> tuple[float, float]:
    """One fixed-point maximum-likelihood step for alpha and beta.

    The document prior is ``alpha * c_mk`` with ``c_mk = 3`` at the role topic
    of pseudo-relevant documents (tau = 2 alpha) and 1 elsewhere, so the update
    keeps the bias tied to alpha. Beta is fitted over the K topics plus the
    background distribution. Results are clamped to [1e-4, 10]; a non-finite
    update keeps the previous value.
    """
    a, b = state.alpha, state.beta
    c = np.ones((len(state.psi), state.K))
    c[state.psi, state.role_topic] = 1.0 + state.tau / a
    C = c.sum(1)
    num = (c * (digamma(state.n_mk + a * c) - digamma(a * c))).sum()
    den = (C * (digamma(state.n_m + a * C) - digamma(a * C))).sum()
    new_a = a * num / den if den > 0 else float("nan")

    V = state.V
    rows_w = np.vstack([state.n_kw, state.n_bw[None, :]])
    rows = rows_w.sum(1)
    num = (digamma(rows_w + b) - digamma(b)).sum()
    den = V * (digamma(rows + V * b) - digamma(V * b)).sum()
    new_b = b * num / den if den > 0 else float("nan")

    out = []
    for old, new, name in ((a, new_a, "alpha"), (b, new_b, "beta")):
        if not math.isfinite(new):
            log.warning("non-finite %s update; keeping %g", name, old)
            out.append(old)
        else:
            out.append(float(min(HYPER_MAX, max(HYPER_MIN, new))))
    return out[0], out[1]


def point_estimates(state: DiffLdaState, mu_switch: tuple[float, float]):
    """(phi, phi_background, theta, pi) implied by the current counts."""
    V, b = state.V, state.beta
    phi = (state.n_kw + b) / (state.n_k[:, None] + V * b)
    phi_b = (state.n_bw + b) / (state.switch[0] + V * b)
    priors = state.doc_priors()
    theta = (state.n_mk + priors) / (state.n_m[:, None] + priors.sum(1, keepdims=True))
    mu = np.asarray(mu_switch, dtype=float)
    pi = (state.switch + mu) / (state.switch.sum() + mu.sum())
    return phi, phi_b, theta, pi


def token_loglik(words: np.ndarray, doc_of: np.ndarray, phi, phi_b, theta, pi) -> float:
    """Log-likelihood of tokens under the mixture pi_b*phi_b + pi_t*sum_k theta_mk*phi_k."""
    p = pi[0] * phi_b[words] + pi[1] * np.einsum("nk,kn->n", theta[doc_of], phi[:, words])
    return float(np.log(p).sum())


def gibbs_train(
    corpus: Sequence[Sequence[str]],
    relevant: Sequence[bool],
    config: DiffLdaConfig = DiffLdaConfig(),
    on_sweep: Optional[Callable[[int, DiffLdaState], None]] = None,
    heldout: Optional[Sequence[Sequence[str]]] = None,
) -> DiffLdaResult:
    """Train DiffLDA on tokenized documents with pseudo-relevance flags.

    Hyperparameters are re-fitted every ``config.optimize_every`` sweeps.
    Estimates are posterior means over the last ``sample_fraction`` of the
    sweeps that follow burn-in. ``heldout`` (one token list per document,
    restricted to the training vocabulary) is scored after every
    optimization step and recorded in ``loglik_trace``.
    """
    if not corpus or not any(corpus):
        raise ValueError("empty corpus")
    rng = np.random.default_rng(config.seed)
    vocab, st = init_state(corpus, relevant, config, rng)
    mu_bg, mu_tp = config.mu_switch
    ho = None
    if heldout is not None:
        ids = {t: i for i, t in enumerate(vocab)}
        pairs = [(ids[t], m) for m, doc in enumerate(heldout) for t in doc if t in ids]
        ho = (np.array([p[0] for p in pairs], dtype=np.int64), np.array([p[1] for p in pairs], dtype=np.int64))

    start_sampling = max(config.burn_in, config.iterations - config.n_samples)
    acc = None
    n_acc = 0
    trace = []
    for sweep in range(config.iterations):
        priors = st.doc_priors()
        _sweep(
            st.words, st.doc_of, st.x, st.z, st.n_mk, st.n_m, st.n_kw, st.n_k, st.n_bw, st.switch,
            priors, priors.sum(1), st.beta, mu_bg, mu_tp, rng.random(len(st.words)),
        )
        if on_sweep is not None:
            on_sweep(sweep, st)
        if config.optimize_every and (sweep + 1) % config.optimize_every == 0:
            st.alpha, st.beta = optimize_hyperparameters(st)
            st.tau = 2.0 * st.alpha
            if ho is not None:
                trace.append((sweep + 1, token_loglik(ho[0], ho[1], *point_estimates(st, config.mu_switch))))
        if sweep >= start_sampling:
            est = point_estimates(st, config.mu_switch)
            acc = [e.copy() for e in est] if acc is None else [a + e for a, e in zip(acc, est)]
            n_acc += 1
    phi, phi_b, theta, pi = (a / n_acc for a in acc)
    # renormalize away float drift from averaging
    phi /= phi.sum(1, keepdims=True)
    phi_b /= phi_b.sum()
    theta /= theta.sum(1, keepdims=True)
    pi /= pi.sum()
    final = replace(config, alpha=st.alpha, beta=st.beta, tau=st.tau)
    return DiffLdaResult(vocab, phi, phi_b, theta, pi, st, final, trace)


@dataclass(frozen=True)
class PositionModel:
    label: str
    seed_terms: tuple[str, ...]
    terms: tuple[tuple[str, float], ...]

    @property
    def term_set(self) -> frozenset[str]:
        return frozenset(t for t, _ in self.terms)

    def to_json(self) -> dict:
        return {
            "label": self.label,
            "seeds": list(self.seed_terms),
            "terms": [{"term": t, "prob": p} for t, p in self.terms],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "PositionModel":
        return cls(obj["label"], tuple(obj.get("seeds", ())), tuple((d["term"], float(d["prob"])) for d in obj["terms"]))


def extract_position_model(
    label: str,
    seed_terms: Sequence[str],
    model: DiffLdaResult,
    m: int = 20,
    stopwords: frozenset[str] = STOPWORDS,
) -> PositionModel:
    """Top ``m`` non-stopword terms of the role topic, probability descending."""
    role = model.role_topic
    ranked = sorted(
        ((t, float(role[i])) for i, t in enumerate(model.vocab) if t not in stopwords and role[i] > 0),
        key=lambda tp: (-tp[1], tp[0]),
    )
    return PositionModel(label, tuple(seed_terms), tuple(ranked[:m]))


def build_position_corpus(
    label_tokens: Sequence[str],
    seed_terms: Sequence[str],
    index: Index,
    candidates: Sequence[str],
    mu: float = DEFAULT_MU,
    label_weight: float = 2.0,
    seed_weight: float = 1.0,
    depth: int = 100,
    n_relevant: int = 10,
) -> tuple[list[str], list[str]]:
    """(corpus doc ids, pseudo-relevant doc ids) for a position's weighted query."""
    if not seed_terms:
        raise ValueError("a social position needs seed terms")
    weights: dict[str, float] = {}
    for t in label_tokens:
        weights[t] = weights.get(t, 0.0) + label_weight
    for t in seed_terms:
        weights[t] = weights.get(t, 0.0) + seed_weight
    ranked = rank(QL(mu), weights, index, candidates, k=depth)
    corpus = [d for d, _ in ranked]
    if len(corpus) < n_relevant:
        log.warning("only %d documents retrieved for %s; all treated as pseudo-relevant", len(corpus), " ".join(label_tokens))
    return corpus, corpus[:n_relevant]


def train_position(
    label: str,
    label_tokens: Sequence[str],
    seed_terms: Sequence[str],
    index: Index,
    candidates: Sequence[str],
    config: DiffLdaConfig = DiffLdaConfig(),
    m: int = 20,
    mu: float = DEFAULT_MU,
    stopwords: frozenset[str] = STOPWORDS,
    label_weight: float = 2.0,
    seed_weight: float = 1.0,
) -> PositionModel:
    corpus_ids, relevant = build_position_corpus(label_tokens, seed_terms, index, candidates, mu, label_weight, seed_weight)
    rel = set(relevant)
    docs = [index.docs[d].body for d in corpus_ids]
    result = gibbs_train(docs, [d in rel for d in corpus_ids], config)
    return extract_position_model(label, seed_terms, result, m, stopwords)


def load_position_list(data: bytes | str) -> list[tuple[str, list[str]]]:
    """Position list file: JSON array of {label, seeds}."""
    return [(obj["label"], list(obj["seeds"])) for obj in json.loads(data)]
