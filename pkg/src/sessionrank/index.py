"""Tokenization, stemming, the inverted index and document metadata."""
from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources
from typing import Iterable, Optional, Protocol, Sequence

log = logging.getLogger(__name__)

DEFAULT_SPAM_THRESHOLD = 70


def load_stopwords(path: Optional[str] = None) -> frozenset[str]:
    """Built-in stopword list, or one word per line from ``path``."""
    if path is None:
        text = resources.files("sessionrank").joinpath("data/stopwords.txt").read_text("utf-8")
    else:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    return frozenset(w.strip().lower() for w in text.splitlines() if w.strip())


STOPWORDS = load_stopwords()


class Stemmer(Protocol):
    def stem(self, token: str) -> str: ...


_VOWELS = set("aeiou")
_NO_UNDOUBLE = set("lsz")


def _has_vowel(s: str) -> bool:
    return any(c in _VOWELS for c in s)


class SuffixStemmer:
    """Inflectional suffix stripper standing in for Krovetz.

    Handles plurals, -ing and -ed. Rules are applied until a fixed point is
    reached, so ``stem(stem(x)) == stem(x)`` holds for every input.
    """

    EXCEPTIONS = {
        "news": "news",
        "series": "series",
        "species": "species",
        "ran": "run",
        "children": "child",
        "men": "man",
        "women": "woman",
        "feet": "foot",
        "teeth": "tooth",
        "mice": "mouse",
        "geese": "goose",
    }

    def __init__(self, protected: Iterable[str] = STOPWORDS):
        self.protected = frozenset(protected)

    def _step(self, w: str) -> str:
        if w in self.EXCEPTIONS:
            return self.EXCEPTIONS[w]
        if w in self.protected or len(w) <= 3:
            return w
        if w.endswith("sses"):
            return w[:-2]
        if w.endswith("ies") and len(w) > 4:
            return w[:-3] + "y"
        if w.endswith("ied") and len(w) > 4:
            return w[:-3] + "y"
        if w.endswith("s") and not w.endswith(("ss", "us", "is")):
            return w[:-1]
        for suffix in ("ing", "ed"):
            if not w.endswith(suffix) or w.endswith("eed"):
                continue
            base = w[: -len(suffix)]
            if len(base) < 3 or not _has_vowel(base):
                return w
            if base.endswith(("at", "bl", "iz")):
                return base + "e"
            if len(base) > 3 and base[-1] == base[-2] and base[-1] not in _VOWELS | _NO_UNDOUBLE:
                return base[:-1]
            return base
        return w

    def stem(self, token: str) -> str:
        w = token.lower()
        while True:
            nxt = self._step(w)
            if nxt == w:
                return w
            w = nxt


class IdentityStemmer:
    def stem(self, token: str) -> str:
        return token.lower()


_stem_cache: dict[tuple[int, str], str] = {}


def tokenize_stem(tokens: Sequence[str] | str, stemmer: Optional[Stemmer] = None) -> list[str]:
    """Lowercase and stem a token list (a string is whitespace-split first)."""
    if isinstance(tokens, str):
        tokens = tokens.split()
    stemmer = stemmer or DEFAULT_STEMMER
    key = id(stemmer)
    out = []
    for t in tokens:
        s = _stem_cache.get((key, t))
        if s is None:
            s = stemmer.stem(t)
            _stem_cache[(key, t)] = s
        out.append(s)
    return out


DEFAULT_STEMMER = SuffixStemmer()


@dataclass(frozen=True)
class DocMeta:
    spam_percentile: int = 99
    pagerank: float = 0.0
    is_wikipedia: bool = False
    length: int = 0
    stopword_ratio: float = 0.0

    def __post_init__(self):
        if not 0 <= self.spam_percentile <= 99:
            raise ValueError(f"spam percentile out of range: {self.spam_percentile}")
        if self.pagerank < 0:
            raise ValueError("pagerank must be non-negative")


@dataclass(frozen=True)
class Document:
    doc_id: str
    body: tuple[str, ...]
    title: tuple[str, ...] = ()
    meta: DocMeta = field(default_factory=DocMeta)


def make_document(
    doc_id: str,
    body: Sequence[str],
    title: Sequence[str] = (),
    spam_percentile: int = 99,
    pagerank: float = 0.0,
    is_wikipedia: bool = False,
    stopwords: frozenset[str] = STOPWORDS,
) -> Document:
    """Build a Document, deriving length and stopword ratio from ``body``."""
    body = tuple(body)
    n_stop = sum(1 for t in body if t in stopwords)
    meta = DocMeta(
        spam_percentile=int(spam_percentile),
        pagerank=float(pagerank),
        is_wikipedia=bool(is_wikipedia),
        length=len(body),
        stopword_ratio=n_stop / len(body) if body else 0.0,
    )
    return Document(doc_id, body, tuple(title), meta)


class DuplicateDocumentError(ValueError):
    pass


@dataclass
class Index:
    docs: dict[str, Document]
    doc_tf: dict[str, dict[str, int]]
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    collection_length: int
    doc_freq: dict[str, int]
    coll_freq: dict[str, int]

    @property
    def vocabulary(self) -> frozenset[str]:
        return frozenset(self.doc_freq)

    @property
    def n_docs(self) -> int:
        return len(self.docs)

    @property
    def avg_doc_length(self) -> float:
        return self.collection_length / len(self.docs) if self.docs else 0.0

    def tf(self, term: str, doc_id: str) -> int:
        return self.doc_tf[doc_id].get(term, 0)

    def collection_prob(self, term: str) -> float:
        """P(w|C), floored at 1/(|C|+|V|) for terms the collection never saw."""
        cf = self.coll_freq.get(term, 0)
        if cf == 0:
            return 1.0 / (self.collection_length + len(self.doc_freq))
        return cf / self.collection_length


def build_index(docs: Iterable[Document]) -> Index:
    """Build an index over document bodies; raises on duplicate doc ids."""
    by_id: dict[str, Document] = {}
    for d in docs:
        if d.doc_id in by_id:
            raise DuplicateDocumentError(f"duplicate doc_id {d.doc_id!r}")
        by_id[d.doc_id] = d
    doc_tf: dict[str, dict[str, int]] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    coll: Counter = Counter()
    for doc_id in sorted(by_id):
        tf = Counter(by_id[doc_id].body)
        doc_tf[doc_id] = dict(tf)
        coll.update(tf)
        for term in sorted(tf):
            postings.setdefault(term, []).append((doc_id, tf[term]))
    doc_lengths = {d: len(by_id[d].body) for d in sorted(by_id)}
    return Index(
        docs={d: by_id[d] for d in sorted(by_id)},
        doc_tf=doc_tf,
        postings=dict(sorted(postings.items())),
        doc_lengths=doc_lengths,
        collection_length=sum(doc_lengths.values()),
        doc_freq={t: len(p) for t, p in sorted(postings.items())},
        coll_freq=dict(sorted(coll.items())),
    )


def term_statistics(index: Index, term: str) -> tuple[int, int, float]:
    """(collection frequency, document frequency, collection probability); zeros when unseen."""
    cf = index.coll_freq.get(term, 0)
    if cf == 0:
        return 0, 0, 0.0
    return cf, index.doc_freq[term], cf / index.collection_length


def filter_candidates(index: Index, docs: Optional[Iterable[str]] = None, spam_threshold: int = DEFAULT_SPAM_THRESHOLD) -> list[str]:
    """Doc ids whose spam percentile is at least ``spam_threshold``, sorted."""
    ids = index.docs.keys() if docs is None else docs
    return sorted(d for d in ids if index.docs[d].meta.spam_percentile >= spam_threshold)


def parse_corpus(data: bytes | str, stemmer: Optional[Stemmer] = None, stopwords: frozenset[str] = STOPWORDS) -> list[Document]:
    """Read the JSON corpus format; title/body may be strings or token lists."""
    raw = json.loads(data)
    docs = []
    for obj in raw:
        body = tokenize_stem(obj.get("body", []), stemmer)
        title = tokenize_stem(obj.get("title", []), stemmer)
        docs.append(
            make_document(
                str(obj["doc_id"]),
                body,
                title,
                spam_percentile=obj.get("spam_percentile", 99),
                pagerank=obj.get("pagerank", 0.0),
                is_wikipedia=obj.get("wikipedia", False),
                stopwords=stopwords,
            )
        )
    return docs


def corpus_to_json(docs: Iterable[Document]) -> str:
    return json.dumps(
        [
            {
                "doc_id": d.doc_id,
                "title": list(d.title),
                "body": list(d.body),
                "spam_percentile": d.meta.spam_percentile,
                "pagerank": d.meta.pagerank,
                "wikipedia": d.meta.is_wikipedia,
            }
            for d in docs
        ],
        indent=1,
    )
