import time

import pytest

from sessionrank.config import PipelineConfig
from sessionrank.evaluation import parse_judgments
from sessionrank.fixture import FixtureSpec, generate_fixture
from sessionrank.index import build_index, filter_candidates, make_document, parse_corpus, tokenize_stem
from sessionrank.matching import load_embeddings
from sessionrank.pipeline import Pipeline, session_profiles
from sessionrank.sessions import Click, Iteration, ResultEntry, Session, parse_session_log


def doc(doc_id, text, **kw):
    return make_document(doc_id, text.split(), **kw)


def iteration(query, results=(), clicks=()):
    """Iteration from a query string, result ids (ranked 1..n) and clicked ids."""
    res = tuple(
        r if isinstance(r, ResultEntry) else ResultEntry(r, i + 1) for i, r in enumerate(results)
    )
    return Iteration(tuple(query.split()), res, tuple(Click(c) for c in clicks))


def session(sid, *queries, topic=None, product=None, goal=None):
    its = tuple(q if isinstance(q, Iteration) else iteration(q) for q in queries)
    return Session(sid, its, topic, product, goal)


@pytest.fixture
def small_index():
    return build_index(
        [
            doc("d1", "apple banana apple cherry"),
            doc("d2", "banana banana date"),
            doc("d3", "cherry date elder fig"),
            doc("d4", "apple fig fig fig grape"),
            doc("d5", "grape elder"),
        ]
    )


class FullRun:
    def __init__(self, cfg, pipe, seconds):
        self.cfg = cfg
        self.pipe = pipe
        self.seconds = seconds

    @property
    def out(self):
        return self.cfg.output_dir


def run_pipeline(out_dir, seed=0):
    cfg = PipelineConfig({"seed": seed, "paths": {"output_dir": str(out_dir)}})
    pipe = Pipeline(cfg)
    t0 = time.perf_counter()
    pipe.run_all()
    return FullRun(cfg, pipe, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def full_run(tmp_path_factory):
    """One complete run-all on the bundled fixture, shared across test modules."""
    return run_pipeline(tmp_path_factory.mktemp("run_a"))


class World:
    """Parsed inputs of a generated fixture, as the pipeline would load them."""

    def __init__(self, seed=0, spec=None):
        self.fixture = generate_fixture(seed, spec or FixtureSpec())
        files = self.fixture.files()
        self.index = build_index(parse_corpus(files["corpus.json"]))
        self.candidates = filter_candidates(self.index)
        self.sessions = [s.map_tokens(tokenize_stem) for s in parse_session_log(files["sessions.json"])]
        self.judgments = parse_judgments(files["judgments.tsv"])
        self.embeddings = load_embeddings(files["embeddings.txt"])


@pytest.fixture(scope="session")
def world():
    return World(0)


TWO_TOPICS = {"n_topics": 2, "sessions_per_topic": 8}


@pytest.fixture(scope="session")
def two_topic_profiles(tmp_path_factory):
    """Session profiles of the 2-topic fixture, built through the match stage."""
    cfg = PipelineConfig(
        {"paths": {"output_dir": str(tmp_path_factory.mktemp("two_topic"))}, "fixture": {"seed": 0, "spec": TWO_TOPICS}}
    )
    pipe = Pipeline(cfg)
    for name in ("fixture", "index", "positions", "match"):
        pipe.run_stage(name)
    return session_profiles(pipe.ws)


def split_by_topic(profiles):
    """Every other session of each topic for training, the rest held out."""
    by_label = {}
    for p in profiles:
        by_label.setdefault(p.topic_label, []).append(p)
    train = [p for group in by_label.values() for p in group[::2]]
    held = [p for group in by_label.values() for p in group[1::2]]
    return train, held


# acceptance criteria outcomes, printed as a block at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
