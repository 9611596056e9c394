"""Staged end-to-end pipeline with content-hash caching and a run manifest."""
from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import __version__
from .config import PipelineConfig, fixture_spec, train_config
from .difflda import DiffLdaConfig, PositionModel, train_position
from .evaluation import (
    EvalReport,
    compare_runs,
    evaluate_run,
    facet_breakdown,
    format_run,
    parse_judgments,
    parse_run,
)
from .features import (
    FEATURE_NAMES,
    FeatureRows,
    Scorers,
    block_columns,
    build_session_context,
    build_topic_artifacts,
    feature_vector,
    format_letor,
    parse_letor,
    registry_json,
    social_relevance_model,
)
from .fixture import generate_fixture
from .index import Index, build_index, filter_candidates, load_stopwords, parse_corpus, tokenize_stem
from .initial_ranker import (
    NoRelevanceModelError,
    SessionModels,
    aggregated_query_rank,
    build_session_models,
    current_query_rank,
    initial_rank,
    select_relevance_model,
)
from .lambdamart import TreeEnsemble, gini_importance, importance_report, make_cv_splits, train
from .matching import (
    SocialExpansion,
    extract_social_expansion,
    load_embeddings,
    match_session_positions,
    session_terms,
)
from .relatedness import (
    ArowClassifier,
    TopicCluster,
    arow_train,
    build_topic_clusters,
    clustering_f1,
    cluster_of,
    make_profile,
    make_training_pairs,
)
from .retrieval import BM25, EMPTY_MODEL, HLM, QL, QueryModel, RelevanceModel
from .sessions import Session, parse_session_log

log = logging.getLogger(__name__)

BASELINE_RUNS = ("current", "aggregated", "initial")


class PipelineError(RuntimeError):
    pass


class MissingDependencyError(PipelineError):
    def __init__(self, stage: str, prerequisite: str, reason: str = "has not been run"):
        super().__init__(f"stage '{stage}' needs stage '{prerequisite}' first ({prerequisite} {reason})")
        self.stage = stage
        self.prerequisite = prerequisite


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _model_json(m: QueryModel) -> dict:
    return dict(sorted(m.probs.items()))


def _rm(obj: dict) -> RelevanceModel:
    return RelevanceModel(obj) if obj else EMPTY_MODEL


@dataclass
class SessionMatch:
    """Per-session relevance models, session terms and social expansion."""

    models: SessionModels
    terms: frozenset[str]
    expansion: SocialExpansion

    def to_json(self) -> dict:
        return {
            "observer_models": [_model_json(m) for m in self.models.observer_models],
            "local_models": [_model_json(m) for m in self.models.local_models],
            "theta_concat": _model_json(self.models.theta_concat),
            "empty_observer_slots": list(self.models.empty_observer_slots),
            "session_terms": sorted(self.terms),
            "matched_positions": [[label, score] for label, score in self.expansion.matched_positions],
            "expansion_terms": dict(sorted(self.expansion.terms.items())),
        }

    @classmethod
    def from_json(cls, sid: str, obj: dict) -> "SessionMatch":
        models = SessionModels(
            tuple(_rm(m) for m in obj["observer_models"]),
            tuple(_rm(m) for m in obj["local_models"]),
            QueryModel(obj["theta_concat"]),
            tuple(obj["empty_observer_slots"]),
        )
        exp = SocialExpansion(sid, tuple((lb, float(s)) for lb, s in obj["matched_positions"]), obj["expansion_terms"])
        return cls(models, frozenset(obj["session_terms"]), exp)

    @property
    def phi(self) -> QueryModel:
        try:
            return select_relevance_model(self.models)[0]
        except NoRelevanceModelError:
            return EMPTY_MODEL


class Workspace:
    """Lazy, cached access to the inputs and intermediate artifacts of one output directory."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = cfg.output_dir

    def path(self, rel: str) -> Path:
        return self.root / rel

    def write(self, rel: str, text: str) -> str:
        p = self.path(rel)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(text)
        return rel

    def read(self, rel: str) -> str:
        return self.path(rel).read_text()

    def _input(self, name: str) -> Path:
        p = self.cfg.input_path(name)
        if not p.exists():
            raise PipelineError(f"input file for '{name}' not found: {p}")
        return p

    @cached_property
    def stopwords(self) -> frozenset[str]:
        return load_stopwords(self.cfg["paths"]["stopwords"])

    @cached_property
    def index(self) -> Index:
        return build_index(parse_corpus(self._input("corpus").read_bytes(), stopwords=self.stopwords))

    @cached_property
    def candidates(self) -> list[str]:
        return filter_candidates(self.index, spam_threshold=self.cfg["index"]["spam_threshold"])

    @cached_property
    def sessions(self) -> list[Session]:
        raw = parse_session_log(self._input("sessions").read_bytes())
        return [s.map_tokens(tokenize_stem) for s in raw]

    @cached_property
    def judgments(self) -> dict[str, dict[str, int]]:
        return parse_judgments(self._input("judgments").read_text())

    @cached_property
    def embeddings(self):
        return load_embeddings(self._input("embeddings").read_bytes())

    @cached_property
    def position_list(self) -> list[tuple[str, list[str]]]:
        raw = json.loads(self._input("positions").read_text())
        return [(obj["label"], list(obj["seeds"])) for obj in raw]

    @property
    def mu(self) -> float:
        return float(self.cfg["ql"]["mu"])

    @property
    def scorers(self) -> Scorers:
        return Scorers(QL(self.mu), BM25(self.cfg["bm25"]["k1"], self.cfg["bm25"]["b"]), HLM(self.cfg["hlm"]["lambda"]))

    @cached_property
    def positions(self) -> list[PositionModel]:
        return [PositionModel.from_json(o) for o in json.loads(self.read("positions/models.json"))]

    @cached_property
    def matches(self) -> dict[str, SessionMatch]:
        raw = json.loads(self.read("match/sessions.json"))
        return {sid: SessionMatch.from_json(sid, obj) for sid, obj in raw.items()}

    @cached_property
    def clusters(self) -> list[TopicCluster]:
        raw = json.loads(self.read("relatedness/clusters.json"))
        return [TopicCluster(c["cluster_id"], tuple(c["members"])) for c in raw]

    def run(self, name: str) -> dict[str, list[tuple[str, float]]]:
        return parse_run(self.read(f"runs/{name}.run"))

    def run_names(self) -> list[str]:
        return list(BASELINE_RUNS) + sorted(self.cfg["runs"])


# stages


def stage_fixture(ws: Workspace) -> list[str]:
    cfg = ws.cfg
    if not cfg.uses_fixture:
        log.info("all input paths configured; fixture generation skipped")
        return []
    fx = generate_fixture(cfg["fixture"]["seed"], fixture_spec(cfg))
    return [ws.write(f"fixture/{name}", text) for name, text in sorted(fx.files().items())]


def stage_index(ws: Workspace) -> list[str]:
    idx = ws.index
    summary = {
        "documents": idx.n_docs,
        "vocabulary": len(idx.doc_freq),
        "collection_length": idx.collection_length,
        "candidates": ws.candidates,
        "sessions": len(ws.sessions),
    }
    return [ws.write("index/summary.json", _dump(summary))]


def stage_positions(ws: Workspace) -> list[str]:
    p = ws.cfg["positions"]
    base = ws.cfg.stage_seed("positions", p["seed"])
    models = []
    for i, (label, seeds) in enumerate(ws.position_list):
        config = DiffLdaConfig(
            K=p["k"], alpha=p["alpha"], beta=p["beta"], lambda_psi=p["lambda_psi"], iterations=p["iters"], seed=base + i
        )
        t0 = time.perf_counter()
        pm = train_position(
            label,
            tokenize_stem(label),
            tokenize_stem(seeds),
            ws.index,
            ws.candidates,
            config,
            m=p["terms"],
            mu=ws.mu,
            stopwords=ws.stopwords,
            label_weight=p["label_weight"],
            seed_weight=p["seed_weight"],
        )
        log.info("position %r trained in %.1fs", label, time.perf_counter() - t0)
        models.append(pm.to_json())
    ws.__dict__.pop("positions", None)
    return [ws.write("positions/models.json", _dump(models))]


def stage_match(ws: Workspace) -> list[str]:
    m = ws.cfg["matching"]
    cutoff = ws.cfg["initial_ranker"]["rm_cutoff"]
    out = {}
    for s in ws.sessions:
        models = build_session_models(s, ws.index, ws.candidates, ws.mu, cutoff, exclude=ws.stopwords)
        T = session_terms(models)
        matched = match_session_positions(T, ws.positions, ws.embeddings, m["top"])
        exp = extract_social_expansion(s.id, T, ws.positions, matched, ws.embeddings, m["mode"])
        out[s.id] = SessionMatch(models, T, exp).to_json()
    ws.__dict__.pop("matches", None)
    return [ws.write("match/sessions.json", _dump(out))]


def session_profiles(ws: Workspace):
    profiles = []
    for s in ws.sessions:
        sm = ws.matches[s.id]
        phi = sm.phi
        profiles.append(make_profile(s, phi, sm.terms, sm.expansion, social_relevance_model(phi, sm.expansion.term_set)))
    return profiles


def stage_relatedness(ws: Workspace) -> list[str]:
    r = ws.cfg["relatedness"]
    seed = ws.cfg.stage_seed("relatedness", r["seed"])
    profiles = session_profiles(ws)
    pairs = make_training_pairs(profiles, seed=seed, neg_ratio=r["neg_ratio"])
    if pairs:
        clf = arow_train(pairs, r=r["r"], epochs=r["epochs"], seed=seed)
    else:
        log.warning("no labelled session pairs survive pruning; every session is its own topic")
        clf = ArowClassifier.zero(r=r["r"])
        clf.mean[-1] = -1.0
    clusters = build_topic_clusters(None, profiles, clf)
    labels = {p.id: p.topic_label for p in profiles}
    summary = {
        "training_pairs": len(pairs),
        "positive_pairs": sum(1 for _, y in pairs if y > 0),
        "clusters": len(clusters),
        "clustering_f1": clustering_f1(clusters, labels),
    }
    ws.__dict__.pop("clusters", None)
    return [
        ws.write("relatedness/classifier.json", _dump(clf.to_json())),
        ws.write("relatedness/clusters.json", _dump([{"cluster_id": c.cluster_id, "members": list(c.members)} for c in clusters])),
        ws.write("relatedness/summary.json", _dump(summary)),
    ]


def stage_features(ws: Workspace) -> list[str]:
    ir = ws.cfg["initial_ranker"]
    lam_hist = ws.cfg["features"]["lambda_hist"]
    contexts, rankings = {}, {}
    for s in ws.sessions:
        sm = ws.matches[s.id]
        ranking = initial_rank(s, ws.index, ws.candidates, ir["alpha"], ir["k"], ws.mu, models=sm.models)
        rankings[s.id] = ranking
        contexts[s.id] = build_session_context(
            s, sm.models, ranking, ws.index, sm.expansion, ws.mu, lam_hist, exclude=ws.stopwords
        )
    rows = FeatureRows()
    scorers = ws.scorers
    for s in sorted(ws.sessions, key=lambda s: s.id):
        art = build_topic_artifacts(cluster_of(s.id, ws.clusters), s.id, contexts, ws.index, ws.mu, ws.stopwords)
        qrels = ws.judgments.get(s.topic_label or "", {})
        for doc, _ in rankings[s.id]:
            rows.add(s.id, doc, qrels.get(doc, 0), feature_vector(contexts[s.id], doc, art, ws.index, scorers))
    return [
        ws.write("features/features.letor", format_letor(rows)),
        ws.write("features/registry.json", _dump(registry_json())),
        ws.write("runs/initial.run", format_run(rankings, "initial")),
    ]


def _ltr_data(ws: Workspace):
    return parse_letor(ws.read("features/features.letor")).to_ranking_data()


def stage_train(ws: Workspace) -> list[str]:
    lm = ws.cfg["lambdamart"]
    seed = ws.cfg.stage_seed("train", lm["seed"])
    data = _ltr_data(ws)
    splits = make_cv_splits(list(data.qids), seed=seed, n_splits=lm["n_splits"])
    written = []
    for run, blocks in sorted(ws.cfg["runs"].items()):
        cols = block_columns(blocks)
        names = [FEATURE_NAMES[c] for c in cols]
        sub = data.select_features(cols)
        ensembles = []
        for i, sp in enumerate(splits):
            t0 = time.perf_counter()
            ens = train(sub.subset(sp.train), sub.subset(sp.validation), train_config(ws.cfg, seed), names)
            log.info("%s split %d: %d trees in %.1fs", run, i, len(ens.trees), time.perf_counter() - t0)
            ensembles.append(ens)
            written.append(ws.write(f"train/{run}/split_{i:02d}.json", ens.dumps() + "\n"))
        written.append(ws.write(f"train/{run}/importance.tsv", importance_report(gini_importance(ensembles), names)))
        written.append(ws.write(f"train/{run}/features.json", _dump(names)))
    split_obj = [{"train": list(s.train), "validation": list(s.validation), "test": list(s.test)} for s in splits]
    written.append(ws.write("train/splits.json", _dump(split_obj)))
    return written


def stage_rank(ws: Workspace) -> list[str]:
    k = ws.cfg["initial_ranker"]["k"]
    cur = {s.id: current_query_rank(s, ws.index, ws.candidates, k, ws.mu) for s in ws.sessions}
    agg = {s.id: aggregated_query_rank(s, ws.index, ws.candidates, k, ws.mu) for s in ws.sessions}
    written = [ws.write("runs/current.run", format_run(cur, "current")), ws.write("runs/aggregated.run", format_run(agg, "aggregated"))]
    data = _ltr_data(ws)
    splits = json.loads(ws.read("train/splits.json"))
    initial = ws.run("initial")
    for run, blocks in sorted(ws.cfg["runs"].items()):
        cols = block_columns(blocks)
        names = json.loads(ws.read(f"train/{run}/features.json"))
        sub = data.select_features(cols)
        models: dict[int, TreeEnsemble] = {}
        rankings = {}
        for sid in sorted(set(sub.qids.tolist())):
            split = next((i for i, sp in enumerate(splits) if sid in sp["test"]), None)
            if split is None:
                log.warning("session %s is in no test set; %s falls back to the initial ranking", sid, run)
                rankings[sid] = initial.get(sid, [])
                continue
            if split not in models:
                obj = json.loads(ws.read(f"train/{run}/split_{split:02d}.json"))
                models[split] = TreeEnsemble.from_json(obj, names)
            rows = np.nonzero(sub.qids == sid)[0]
            scores = models[split].predict(sub.X[rows])
            docs = sub.doc_ids[rows]
            order = np.lexsort((docs, -scores))
            rankings[sid] = [(str(docs[i]), float(scores[i])) for i in order]
        written.append(ws.write(f"runs/{run}.run", format_run(rankings, run)))
    return written


def _reports(ws: Workspace) -> list[EvalReport]:
    return [evaluate_run(name, ws.run(name), ws.sessions, ws.judgments) for name in ws.run_names()]


def stage_evaluate(ws: Workspace) -> list[str]:
    written = []
    facet_lines = ["run\tsession_type\tn\tndcg@10\tnerr@10\tmap"]
    for rep in _reports(ws):
        lines = ["session\tndcg@10\tnerr@10\tmap"]
        for sid, v in sorted(rep.per_session.items()):
            lines.append(f"{sid}\t{v['ndcg@10']:.6f}\t{v['nerr@10']:.6f}\t{v['map']:.6f}")
        lines.append(f"mean\t{rep.mean('ndcg@10'):.6f}\t{rep.mean('nerr@10'):.6f}\t{rep.mean('map'):.6f}")
        written.append(ws.write(f"reports/{rep.run}.tsv", "\n".join(lines) + "\n"))
        for kind, sub in facet_breakdown(rep, ws.sessions).items():
            facet_lines.append(
                f"{rep.run}\t{kind}\t{sub.n}\t{sub.mean('ndcg@10'):.4f}\t{sub.mean('nerr@10'):.4f}\t{sub.mean('map'):.4f}"
            )
    written.append(ws.write("reports/facets.tsv", "\n".join(facet_lines) + "\n"))
    return written


def stage_compare(ws: Workspace) -> list[str]:
    c = ws.cfg["compare"]
    sig = [r for r in c["significance_vs"] if r in ws.run_names()]
    comp = compare_runs(_reports(ws), c["baseline"], sig)
    return [ws.write("reports/comparison.tsv", comp.to_tsv()), ws.write("reports/comparison.txt", comp.to_table())]


@dataclass(frozen=True)
class Stage:
    name: str
    fn: Callable[[Workspace], list[str]]
    deps: tuple[str, ...]
    sections: tuple[str, ...]  # config sections the stage reads


STAGES: dict[str, Stage] = {
    s.name: s
    for s in (
        Stage("fixture", stage_fixture, (), ("fixture", "paths")),
        Stage("index", stage_index, ("fixture",), ("paths", "index")),
        Stage("positions", stage_positions, ("index",), ("positions", "ql", "seed")),
        Stage("match", stage_match, ("positions",), ("matching", "initial_ranker", "ql")),
        Stage("relatedness", stage_relatedness, ("match",), ("relatedness", "seed")),
        Stage("features", stage_features, ("relatedness",), ("initial_ranker", "features", "ql", "bm25", "hlm")),
        Stage("train", stage_train, ("features",), ("lambdamart", "runs", "seed")),
        Stage("rank", stage_rank, ("train",), ("initial_ranker", "ql", "runs")),
        Stage("evaluate", stage_evaluate, ("rank",), ()),
        Stage("compare", stage_compare, ("evaluate",), ("compare",)),
    )
}
ORDER = tuple(STAGES)


def _versions() -> dict[str, str]:
    import numba
    import scipy

    return {
        "sessionrank": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


@dataclass
class RunManifest:
    config_hash: str = ""
    stages: dict[str, dict] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=dict)

    @classmethod
    def load(cls, path: Path) -> "RunManifest":
        if not path.exists():
            return cls()
        obj = json.loads(path.read_text())
        return cls(obj.get("config_hash", ""), obj.get("stages", {}), obj.get("versions", {}))

    def save(self, path: Path) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        obj = {"config_hash": self.config_hash, "stages": self.stages, "versions": self.versions}
        path.write_text(_dump(obj))


@dataclass
class StageResult:
    stage: str
    outputs: list[str]
    cached: bool
    seconds: float


class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.ws = Workspace(cfg)
        self.manifest_path = cfg.output_dir / "manifest.json"
        self.manifest = RunManifest.load(self.manifest_path)

    def _entry_valid(self, name: str) -> bool:
        entry = self.manifest.stages.get(name)
        if entry is None:
            return False
        for rel, digest in entry["outputs"].items():
            p = self.ws.path(rel)
            if not p.exists() or _digest(p) != digest:
                return False
        return True

    def stage_key(self, name: str) -> str:
        st = STAGES[name]
        parts = {
            "stage": name,
            "config": self.cfg.digest(*st.sections) if st.sections else "",
            "deps": {d: self.manifest.stages.get(d, {}).get("key", "") for d in st.deps},
            "dep_outputs": {d: self.manifest.stages.get(d, {}).get("outputs", {}) for d in st.deps},
        }
        if name == "index":
            paths = {k: self.cfg.input_path(k) for k in ("corpus", "sessions", "judgments", "embeddings", "positions")}
            parts["inputs"] = {k: _digest(p) if p.exists() else "" for k, p in paths.items()}
        return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()

    def _check_deps(self, name: str) -> None:
        for dep in STAGES[name].deps:
            if dep not in self.manifest.stages:
                raise MissingDependencyError(name, dep)
            if not self._entry_valid(dep):
                raise MissingDependencyError(name, dep, "outputs are missing or modified")
            if self.manifest.stages[dep]["key"] != self.stage_key(dep):
                raise MissingDependencyError(name, dep, "is stale for the current configuration")

    def run_stage(self, name: str, force: bool = False) -> StageResult:
        if name not in STAGES:
            raise PipelineError(f"unknown stage {name!r}; choose from {', '.join(ORDER)}")
        self._check_deps(name)
        key = self.stage_key(name)
        entry = self.manifest.stages.get(name)
        if not force and entry is not None and entry["key"] == key and self._entry_valid(name):
            log.info("stage %s: cache hit", name)
            return StageResult(name, list(entry["outputs"]), True, 0.0)
        t0 = time.perf_counter()
        outputs = STAGES[name].fn(self.ws)
        seconds = time.perf_counter() - t0
        self.manifest.stages[name] = {
            "key": key,
            "outputs": {rel: _digest(self.ws.path(rel)) for rel in outputs},
            "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
            "seconds": round(seconds, 3),
        }
        self.manifest.config_hash = self.cfg.digest()
        self.manifest.versions = _versions()
        self.manifest.save(self.manifest_path)
        log.info("stage %s: done in %.1fs", name, seconds)
        return StageResult(name, outputs, False, seconds)

    def run_all(self, force: bool = False) -> list[StageResult]:
        return [self.run_stage(name, force) for name in ORDER]


def run_all(cfg: PipelineConfig, force: bool = False) -> list[StageResult]:
    return Pipeline(cfg).run_all(force)
