"""Ranking metrics, paired t-tests, run files and report tables."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.special import betainc

from .sessions import Session

G_MAX = 3
METRICS = ("ndcg@10", "nerr@10", "map")

Judgments = Mapping[str, Mapping[str, int]]  # topic -> doc_id -> grade


def _grades(ranking: Sequence[str], qrels: Mapping[str, int]) -> list[int]:
    return [int(qrels.get(d, 0)) for d in ranking]


def dcg(grades: Sequence[int], k: int) -> float:
    return sum((2.0**g - 1.0) / math.log2(i + 2.0) for i, g in enumerate(grades[:k]))


def ndcg_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int = 10) -> float:
    ideal = dcg(sorted((g for g in qrels.values() if g > 0), reverse=True), k)
    if ideal == 0:
        return 0.0
    return dcg(_grades(ranking, qrels), k) / ideal


def err(grades: Sequence[int], k: int, g_max: int = G_MAX) -> float:
    total, not_stopped = 0.0, 1.0
    for i, g in enumerate(grades[:k], start=1):
        r = (2.0**g - 1.0) / 2.0**g_max
        total += not_stopped * r / i
        not_stopped *= 1.0 - r
    return total


def nerr_at_k(ranking: Sequence[str], qrels: Mapping[str, int], k: int = 10) -> float:
    ideal = err(sorted((g for g in qrels.values() if g > 0), reverse=True), k)
    if ideal == 0:
        return 0.0
    return err(_grades(ranking, qrels), k) / ideal


def average_precision(ranking: Sequence[str], qrels: Mapping[str, int]) -> float:
    n_rel = sum(1 for g in qrels.values() if g >= 1)
    if n_rel == 0:
        return 0.0
    hits, total = 0, 0.0
    for i, d in enumerate(ranking, start=1):
        if qrels.get(d, 0) >= 1:
            hits += 1
            total += hits / i
    return total / n_rel


def mean_average_precision(rankings: Sequence[Sequence[str]], qrels: Sequence[Mapping[str, int]]) -> float:
    if not rankings:
        return 0.0
    return float(np.mean([average_precision(r, q) for r, q in zip(rankings, qrels)]))


@dataclass(frozen=True)
class TTest:
    t: float
    p: float

    @property
    def significant(self) -> bool:
        return self.p < 0.05


def paired_t_test(a: Sequence[float], b: Sequence[float]) -> TTest:
    """Two-tailed paired Student's t-test.

    Zero-variance differences give p = 1 when the mean difference is 0 and
    p = 0 otherwise.
    """
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ValueError("paired t-test needs two equal-length samples with n >= 2")
    d = a - b
    n = len(d)
    mean = d.mean()
    sd = d.std(ddof=1)
    if sd == 0:
        if mean == 0:
            return TTest(0.0, 1.0)
        return TTest(math.copysign(math.inf, mean), 0.0)
    t = mean / (sd / math.sqrt(n))
    dof = n - 1
    p = float(betainc(dof / 2.0, 0.5, dof / (dof + t * t)))
    return TTest(float(t), p)


# run files


def format_run(rankings: Mapping[str, Sequence[tuple[str, float]]], tag: str) -> str:
    lines = []
    for sid in sorted(rankings):
        for r, (doc, score) in enumerate(rankings[sid], start=1):
            lines.append(f"{sid} Q0 {doc} {r} {score!r} {tag}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_run(text: str) -> dict[str, list[tuple[str, float]]]:
    rows: dict[str, list[tuple[int, str, float]]] = {}
    for ln in text.splitlines():
        if not ln.strip():
            continue
        sid, _, doc, r, score, _tag = ln.split()
        rows.setdefault(sid, []).append((int(r), doc, float(score)))
    return {sid: [(d, s) for _, d, s in sorted(v)] for sid, v in rows.items()}


def parse_judgments(text: str) -> dict[str, dict[str, int]]:
    """TSV lines ``topic doc_id grade``."""
    out: dict[str, dict[str, int]] = {}
    for ln in text.splitlines():
        if not ln.strip() or ln.startswith("#"):
            continue
        topic, doc, grade = ln.split("\t") if "\t" in ln else ln.split()
        g = int(grade)
        if not 0 <= g <= G_MAX:
            raise ValueError(f"grade {g} outside 0..{G_MAX}")
        out.setdefault(topic, {})[doc] = g
    return out


def format_judgments(judgments: Judgments) -> str:
    return "".join(
        f"{topic}\t{doc}\t{judgments[topic][doc]}\n" for topic in sorted(judgments) for doc in sorted(judgments[topic])
    )


# reports


@dataclass
class EvalReport:
    run: str
    per_session: dict[str, dict[str, float]]
    excluded: int = 0

    @property
    def n(self) -> int:
        return len(self.per_session)

    def mean(self, metric: str) -> float:
        if not self.per_session:
            return 0.0
        return float(np.mean([v[metric] for _, v in sorted(self.per_session.items())]))

    def values(self, metric: str, ids: Optional[Sequence[str]] = None) -> list[float]:
        ids = sorted(self.per_session) if ids is None else ids
        return [self.per_session[i][metric] for i in ids]


def evaluate_run(
    name: str, rankings: Mapping[str, Sequence], sessions: Sequence[Session], judgments: Judgments, k: int = 10
) -> EvalReport:
    """Per-session nDCG@k, nERR@k and AP; sessions absent from the run score 0."""
    per = {}
    for s in sessions:
        ranked = [d if isinstance(d, str) else d[0] for d in rankings.get(s.id, [])]
        qrels = judgments.get(s.topic_label or "", {})
        per[s.id] = {
            "ndcg@10": ndcg_at_k(ranked, qrels, k),
            "nerr@10": nerr_at_k(ranked, qrels, k),
            "map": average_precision(ranked, qrels),
        }
    return EvalReport(name, per)


SESSION_TYPES = {
    ("factual", "specific"): "known-item",
    ("factual", "amorphous"): "known-subject",
    ("intellectual", "specific"): "interpretive",
    ("intellectual", "amorphous"): "exploratory",
}


def facet_breakdown(report: EvalReport, sessions: Sequence[Session]) -> dict[str, EvalReport]:
    """Split a report into the four product x goal session types."""
    groups: dict[str, dict[str, dict[str, float]]] = {}
    excluded = 0
    for s in sessions:
        if s.id not in report.per_session:
            continue
        if not s.has_facets:
            excluded += 1
            continue
        kind = SESSION_TYPES[(s.product_facet, s.goal_facet)]
        groups.setdefault(kind, {})[s.id] = report.per_session[s.id]
    return {kind: EvalReport(report.run, per, excluded) for kind, per in sorted(groups.items())}


class SessionSetMismatch(ValueError):
    pass


@dataclass
class Comparison:
    baseline: str
    reports: list[EvalReport]
    significance_vs: tuple[str, ...] = ()
    markers: dict[tuple[str, str], str] = field(default_factory=dict)  # (run, metric) -> marker string

    def change(self, run: str, metric: str) -> float:
        """Relative change in percent against the baseline run."""
        base = self._report(self.baseline).mean(metric)
        value = self._report(run).mean(metric)
        return (value - base) / base * 100.0 if base else 0.0

    def _report(self, name: str) -> EvalReport:
        for r in self.reports:
            if r.run == name:
                return r
        raise KeyError(name)

    def to_tsv(self) -> str:
        lines = ["run\tmetric\tmean\tchange_pct\tmarkers"]
        for r in self.reports:
            for m in METRICS:
                lines.append(f"{r.run}\t{m}\t{r.mean(m):.4f}\t{self.change(r.run, m):.2f}\t{self.markers.get((r.run, m), '')}")
        return "\n".join(lines) + "\n"

    def to_table(self) -> str:
        symbols = {name: sym for name, sym in zip(self.significance_vs, "↑•†‡")}
        head = f"{'run':<14}" + "".join(f"{m:>24}" for m in METRICS)
        lines = [head, "-" * len(head)]
        for r in self.reports:
            cells = []
            for m in METRICS:
                cell = f"{r.mean(m):.4f}{self.markers.get((r.run, m), '')}"
                if r.run != self.baseline:
                    cell += f" ({self.change(r.run, m):+.2f}%)"
                cells.append(f"{cell:>24}")
            lines.append(f"{r.run:<14}" + "".join(cells))
        lines.append("")
        lines.append(f"change relative to '{self.baseline}'; n = {self.reports[0].n if self.reports else 0} sessions")
        lines.append("map is computed over the emitted run, not the full candidate pool")
        for name, sym in symbols.items():
            lines.append(f"{sym} significant improvement over '{name}' (paired t-test, p < 0.05)")
        return "\n".join(lines) + "\n"


def compare_runs(reports: Sequence[EvalReport], baseline: str, significance_vs: Sequence[str] = ()) -> Comparison:
    """Means, change vs ``baseline`` and paired-t markers vs each run in ``significance_vs``."""
    ids = sorted(reports[0].per_session)
    for r in reports[1:]:
        if sorted(r.per_session) != ids:
            diff = sorted(set(ids) ^ set(r.per_session))
            raise SessionSetMismatch(f"run {r.run!r} covers a different session set: {diff}")
    comp = Comparison(baseline, list(reports), tuple(significance_vs))
    by_name = {r.run: r for r in reports}
    if baseline not in by_name:
        raise KeyError(f"baseline run {baseline!r} not among the compared runs")
    symbols = dict(zip(significance_vs, "↑•†‡"))
    for r in reports:
        for m in METRICS:
            marks = ""
            for other in significance_vs:
                if other == r.run:
                    continue
                a, b = r.values(m, ids), by_name[other].values(m, ids)
                if len(ids) >= 2:
                    tt = paired_t_test(a, b)
                    if tt.significant and np.mean(a) > np.mean(b):
                        marks += symbols[other]
            comp.markers[(r.run, m)] = marks
    return comp
