"""Deterministic synthetic search logs, corpora, judgments and embeddings.

Each topic owns a set of theme terms, a pair of ambiguous terms and a set
of role terms tied to a social position. Relevant documents use theme and
role terms at a frequency that grows with their grade. Decoy documents
share the ambiguous terms but talk about something else, so a query made
only of ambiguous terms is a poor guide to relevance. Sessions start with
informative queries and drift towards ambiguous ones; each session only
knows a subset of its topic's theme terms.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .evaluation import format_judgments
from .index import DEFAULT_STEMMER, STOPWORDS, Document, build_index, corpus_to_json, make_document
from .matching import EmbeddingStore
from .retrieval import BM25, rank
from .sessions import AMORPHOUS, FACTUAL, INTELLECTUAL, SPECIFIC, Click, Iteration, ResultEntry, Session, serialize_sessions

_CONSONANTS = "bdfgklmnprtvz"
_VOWELS = "aiou"
_STOP_LIST = sorted(STOPWORDS)


@dataclass(frozen=True)
class FixtureSpec:
    n_topics: int = 4
    sessions_per_topic: int = 6
    vocab_size: int = 400  # background vocabulary
    theme_terms: int = 12
    role_terms: int = 6
    ambiguous_terms: int = 2
    decoy_terms: int = 8
    docs_per_topic: int = 30
    decoys_per_topic: int = 12
    noise_docs: int = 40
    spam_docs: int = 8
    doc_length: tuple[int, int] = (80, 160)
    iterations: tuple[int, int] = (2, 4)
    terms_per_session: int = 4
    shared_theme: int = 3  # theme terms each topic shares with the next one
    judgment_noise: float = 0.25
    embedding_dim: int = 16
    extra_positions: int = 1

    def __post_init__(self):
        if self.n_topics < 1 or self.sessions_per_topic < 1:
            raise ValueError("fixture needs at least one topic and one session per topic")
        if self.vocab_size < 1 or self.theme_terms < 1 + 2 * self.shared_theme:
            raise ValueError("fixture needs a non-empty vocabulary")
        if self.docs_per_topic <= self.decoys_per_topic:
            raise ValueError("docs_per_topic must exceed decoys_per_topic")
        if self.iterations[0] < 1 or self.iterations[1] < self.iterations[0]:
            raise ValueError("bad iteration range")


@dataclass
class Fixture:
    sessions: list[Session]
    documents: list[Document]
    judgments: dict[str, dict[str, int]]
    embeddings: EmbeddingStore
    positions: list[tuple[str, list[str]]]  # (label, seed terms)
    spec: FixtureSpec
    seed: int

    def files(self) -> dict[str, str]:
        """File name -> serialized content."""
        return {
            "sessions.json": serialize_sessions(self.sessions),
            "corpus.json": corpus_to_json(self.documents),
            "judgments.tsv": format_judgments(self.judgments),
            "embeddings.txt": self.embeddings.to_text(),
            "positions.json": json.dumps([{"label": lb, "seeds": s} for lb, s in self.positions], indent=1),
            "fixture.json": json.dumps({"seed": self.seed, "spec": asdict(self.spec)}, indent=1, sort_keys=True),
        }


def make_words(rng: np.random.Generator, n: int, taken: Optional[set[str]] = None) -> list[str]:
    """``n`` distinct pronounceable words that the stemmer leaves unchanged."""
    taken = set() if taken is None else taken
    out = []
    while len(out) < n:
        syll = int(rng.integers(2, 4))
        w = "".join(_CONSONANTS[rng.integers(len(_CONSONANTS))] + _VOWELS[rng.integers(len(_VOWELS))] for _ in range(syll))
        if w in taken or w in STOPWORDS or DEFAULT_STEMMER.stem(w) != w:
            continue
        taken.add(w)
        out.append(w)
    return out


@dataclass(frozen=True)
class _Topic:
    label: str
    theme: tuple[str, ...]
    ambiguous: tuple[str, ...]
    role: tuple[str, ...]
    decoy: tuple[str, ...]


def _zipf_sampler(rng: np.random.Generator, words: list[str]):
    p = 1.0 / np.arange(1, len(words) + 1)
    p /= p.sum()
    return lambda n: [words[i] for i in rng.choice(len(words), size=n, p=p)]


def _mix(rng, length, parts):
    """Sample ``length`` tokens from (probability, sampler) parts; leftovers go to the last part."""
    probs = np.array([p for p, _ in parts], dtype=float)
    probs = probs / probs.sum()
    counts = rng.multinomial(length, probs)
    toks = []
    for c, (_, sampler) in zip(counts, parts):
        toks += sampler(int(c))
    order = rng.permutation(len(toks))
    return [toks[i] for i in order]


def _uniform(rng, words):
    words = list(words)
    return lambda n: [words[i] for i in rng.integers(0, len(words), size=n)]


# grade -> (share of theme terms covered, theme frequency, role frequency)
_GRADE_PROFILE = {3: (1.0, 0.22, 0.08), 2: (0.6, 0.14, 0.06), 1: (0.35, 0.07, 0.04)}


def generate_fixture(seed: int = 0, spec: FixtureSpec = FixtureSpec()) -> Fixture:
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    background = make_words(rng, spec.vocab_size, taken)
    n_shared = spec.shared_theme if spec.n_topics > 1 else 0
    own = [make_words(rng, spec.theme_terms - 2 * n_shared, taken) for _ in range(spec.n_topics)]
    shared = [make_words(rng, n_shared, taken) for _ in range(spec.n_topics)]
    topics = []
    for t in range(spec.n_topics):
        # neighbouring topics (cyclically) have a block of theme terms in common
        theme = own[t] + shared[t] + (shared[t - 1] if spec.n_topics > 2 or t == 1 else [])
        topics.append(
            _Topic(
                label=f"T{t + 1}",
                theme=tuple(theme),
                ambiguous=tuple(make_words(rng, spec.ambiguous_terms, taken)),
                role=tuple(make_words(rng, spec.role_terms, taken)),
                decoy=tuple(make_words(rng, spec.decoy_terms, taken)),
            )
        )
    extra_role = [make_words(rng, spec.role_terms, taken) for _ in range(spec.extra_positions)]
    bg = _zipf_sampler(rng, background)
    stop = _uniform(rng, _STOP_LIST[:60])
    lo, hi = spec.doc_length

    docs: list[Document] = []
    judgments: dict[str, dict[str, int]] = {tp.label: {} for tp in topics}
    n_rel = spec.docs_per_topic - spec.decoys_per_topic
    grade_plan = [3] * max(1, n_rel // 5) + [2] * max(1, n_rel // 3)
    grade_plan += [1] * (n_rel - len(grade_plan))
    doc_no = 0

    def new_id() -> str:
        nonlocal doc_no
        doc_no += 1
        return f"d{doc_no:04d}"

    def meta():
        return dict(
            spam_percentile=int(rng.integers(70, 100)),
            pagerank=float(np.round(rng.gamma(2.0, 1.0), 4)),
            is_wikipedia=bool(rng.random() < 0.1),
        )

    for tp in topics:
        for g in grade_plan:
            # the judged grade and the document's content disagree now and then
            shown = g
            if rng.random() < spec.judgment_noise:
                shown = int(np.clip(g + rng.choice([-1, 1]), 1, 3))
            cover, f_theme, f_role = _GRADE_PROFILE[shown]
            k = max(1, int(round(cover * len(tp.theme))))
            theme = [tp.theme[i] for i in sorted(rng.choice(len(tp.theme), size=k, replace=False))]
            length = int(rng.integers(lo, hi + 1))
            stop_share = float(rng.uniform(0.2, 0.4))
            body = _mix(
                rng,
                length,
                [(f_theme, _uniform(rng, theme)), (f_role, _uniform(rng, tp.role)), (0.03, _uniform(rng, tp.ambiguous)),
                 (stop_share, stop), (1.0 - f_theme - f_role - 0.03 - stop_share, bg)],
            )
            title = [theme[0], *bg(2)]
            d = make_document(new_id(), body, title, **meta())
            docs.append(d)
            judgments[tp.label][d.doc_id] = g
        for _ in range(spec.decoys_per_topic):
            length = int(rng.integers(lo, hi + 1))
            stop_share = float(rng.uniform(0.2, 0.4))
            body = _mix(
                rng,
                length,
                [(0.07, _uniform(rng, tp.ambiguous)), (0.15, _uniform(rng, tp.decoy)),
                 (0.03, _uniform(rng, [tp.theme[int(i)] for i in rng.choice(len(tp.theme), size=2, replace=False)])),
                 (stop_share, stop), (1.0 - 0.25 - stop_share, bg)],
            )
            title = [tp.ambiguous[0], *bg(2)]
            d = make_document(new_id(), body, title, **meta())
            docs.append(d)
            judgments[tp.label][d.doc_id] = 0
    for _ in range(spec.noise_docs):
        length = int(rng.integers(lo, hi + 1))
        stop_share = float(rng.uniform(0.2, 0.4))
        body = _mix(rng, length, [(stop_share, stop), (1.0 - stop_share, bg)])
        docs.append(make_document(new_id(), body, bg(3), **meta()))
    all_query_terms = [w for tp in topics for w in tp.theme[:4] + tp.ambiguous]
    for _ in range(spec.spam_docs):
        length = int(rng.integers(lo, hi + 1))
        body = _mix(rng, length, [(0.3, _uniform(rng, all_query_terms)), (0.2, stop), (0.5, bg)])
        m = meta()
        m["spam_percentile"] = int(rng.integers(0, 70))
        docs.append(make_document(new_id(), body, bg(3), **m))

    index = build_index(docs)
    bm25 = BM25()
    all_ids = sorted(index.docs)

    sessions: list[Session] = []
    facets = [(FACTUAL, SPECIFIC), (FACTUAL, AMORPHOUS), (INTELLECTUAL, SPECIFIC), (INTELLECTUAL, AMORPHOUS)]
    sid = 0
    plan = [(tp, i) for i in range(spec.sessions_per_topic) for tp in topics]
    for tp, i in plan:
        sid += 1
        known = [tp.theme[j] for j in sorted(rng.choice(len(tp.theme), size=min(spec.terms_per_session, len(tp.theme)), replace=False))]
        n_it = int(rng.integers(spec.iterations[0], spec.iterations[1] + 1))
        qrels = judgments[tp.label]
        its = []
        for j in range(n_it):
            amb = tp.ambiguous[int(rng.integers(len(tp.ambiguous)))]
            if j == n_it - 1:
                # the current query leans on the ambiguous vocabulary
                query = [amb] + ([known[int(rng.integers(len(known)))]] if rng.random() < 0.3 else bg(1))
            else:
                picks = rng.choice(len(known), size=2, replace=False)
                query = [known[picks[0]], known[picks[1]]] if rng.random() < 0.5 else [amb, known[picks[0]]]
            scored = rank(bm25, query, index, all_ids, k=len(all_ids))
            noisy = sorted(((s + float(rng.normal(0.0, 1.0)), d) for d, s in scored), key=lambda sd: (-sd[0], sd[1]))[:10]
            results = []
            for r, (_, d) in enumerate(noisy, start=1):
                doc = index.docs[d]
                results.append(ResultEntry(d, r, doc.title, _snippet(doc.body, query)))
            clicks = []
            for res in results:
                g = qrels.get(res.doc_id, 0)
                if rng.random() < {3: 0.8, 2: 0.6, 1: 0.3}.get(g, 0.05):
                    clicks.append(Click(res.doc_id, float(np.round(rng.uniform(5, 180), 1))))
            its.append(Iteration(tuple(query), tuple(results), tuple(clicks)))
        prod, goal = facets[int(rng.integers(len(facets)))]
        sessions.append(Session(f"s{sid:03d}", tuple(its), tp.label, prod, goal))

    embeddings = _embeddings(rng, spec, topics, background, extra_role)
    positions = [(tp.role[0], list(tp.theme[:2]) + [tp.role[1]]) for tp in topics]
    positions += [(er[0], list(er[1:3])) for er in extra_role]
    return Fixture(sessions, docs, judgments, embeddings, positions, spec, seed)


def _snippet(body, query, width: int = 12) -> tuple[str, ...]:
    qs = set(query)
    for i, t in enumerate(body):
        if t in qs:
            start = max(0, i - width // 3)
            return tuple(body[start : start + width])
    return tuple(body[:width])


def _embeddings(rng, spec, topics, background, extra_role) -> EmbeddingStore:
    dim = spec.embedding_dim
    vectors: dict[str, np.ndarray] = {}
    for tp in topics:
        centre = rng.normal(size=dim)
        decoy_centre = rng.normal(size=dim)
        for w in tp.theme + tp.role:
            vectors[w] = centre + 0.45 * rng.normal(size=dim)
        for w in tp.ambiguous:
            vectors[w] = 0.5 * (centre + decoy_centre) + 0.45 * rng.normal(size=dim)
        for w in tp.decoy:
            vectors[w] = decoy_centre + 0.45 * rng.normal(size=dim)
    for er in extra_role:
        centre = rng.normal(size=dim)
        for w in er:
            vectors[w] = centre + 0.45 * rng.normal(size=dim)
    for w in background:
        vectors[w] = rng.normal(size=dim)
    return EmbeddingStore({w: np.round(v, 6) for w, v in sorted(vectors.items())})


@dataclass(frozen=True)
class PlantedCorpus:
    docs: list[list[str]]
    relevant: list[bool]
    role_terms: list[str]
    common_term: Optional[str] = None


def planted_role_corpus(
    seed: int,
    n_docs: int = 20,
    n_relevant: int = 10,
    n_role: int = 10,
    n_themes: int = 3,
    doc_length: int = 60,
    role_share: float = 0.45,
    uniform_term: bool = False,
) -> PlantedCorpus:
    """A small topic-model corpus with role terms planted in the first ``n_relevant`` documents.

    Documents outside the relevant set never use role terms. With
    ``uniform_term`` one extra word appears in every document at the same rate.
    """
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    role = make_words(rng, n_role, taken)
    themes = [make_words(rng, 10, taken) for _ in range(n_themes)]
    common = make_words(rng, 1, taken)[0]
    stop = _STOP_LIST[:5]
    docs, rel = [], []
    for m in range(n_docs):
        in_r = m < n_relevant
        theme = themes[m % n_themes]
        toks = []
        for _ in range(doc_length):
            if uniform_term and rng.random() < 0.1:
                toks.append(common)
                continue
            u = rng.random()
            if in_r and u < role_share:
                toks.append(role[rng.integers(n_role)])
            elif u < 0.75:
                toks.append(theme[rng.integers(len(theme))])
            else:
                toks.append(stop[rng.integers(len(stop))])
        docs.append(toks)
        rel.append(in_r)
    return PlantedCorpus(docs, rel, role, common if uniform_term else None)
