"""Search sessions, interaction logs and their JSON serialization."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

FACTUAL, INTELLECTUAL = "factual", "intellectual"
SPECIFIC, AMORPHOUS = "specific", "amorphous"
PRODUCT_FACETS = (FACTUAL, INTELLECTUAL)
GOAL_FACETS = (SPECIFIC, AMORPHOUS)

MAX_RESULTS = 10


class SessionLogError(ValueError):
    """Raised when a session log cannot be parsed or fails validation."""


@dataclass(frozen=True)
class ResultEntry:
    doc_id: str
    rank: int
    title: tuple[str, ...] = ()
    snippet: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.doc_id:
            raise SessionLogError("result entry with empty doc_id")
        if self.rank < 1:
            raise SessionLogError(f"result {self.doc_id!r} has non-positive rank {self.rank}")


@dataclass(frozen=True)
class Click:
    doc_id: str
    dwell_seconds: float = 0.0

    def __post_init__(self):
        if self.dwell_seconds < 0:
            raise SessionLogError(f"negative dwell time on click {self.doc_id!r}")


@dataclass(frozen=True)
class Iteration:
    query: tuple[str, ...]
    observer_results: tuple[ResultEntry, ...] = ()
    clicks: tuple[Click, ...] = ()

    def __post_init__(self):
        if len(self.observer_results) > MAX_RESULTS:
            raise SessionLogError(f"iteration has {len(self.observer_results)} results (max {MAX_RESULTS})")
        prev = 0
        for r in self.observer_results:
            if r.rank <= prev:
                raise SessionLogError("observer result ranks must be strictly increasing")
            prev = r.rank

    def result(self, doc_id: str) -> Optional[ResultEntry]:
        for r in self.observer_results:
            if r.doc_id == doc_id:
                return r
        return None

    @property
    def result_ids(self) -> tuple[str, ...]:
        return tuple(r.doc_id for r in self.observer_results)


@dataclass(frozen=True)
class Session:
    id: str
    iterations: tuple[Iteration, ...]
    topic_label: Optional[str] = None
    product_facet: Optional[str] = None
    goal_facet: Optional[str] = None

    def __post_init__(self):
        if not self.iterations:
            raise SessionLogError(f"session {self.id}: no iterations")
        if (self.product_facet is None) != (self.goal_facet is None):
            raise SessionLogError(f"session {self.id}: facets must be both present or both absent")
        if self.product_facet is not None and self.product_facet not in PRODUCT_FACETS:
            raise SessionLogError(f"session {self.id}: unknown product facet {self.product_facet!r}")
        if self.goal_facet is not None and self.goal_facet not in GOAL_FACETS:
            raise SessionLogError(f"session {self.id}: unknown goal facet {self.goal_facet!r}")
        for it in self.iterations:
            shown = set(it.result_ids)
            for c in it.clicks:
                if c.doc_id not in shown:
                    raise SessionLogError(
                        f"session {self.id}: click on {c.doc_id!r} which is not among the iteration's results"
                    )

    @property
    def current_query(self) -> tuple[str, ...]:
        return self.iterations[-1].query

    @property
    def queries(self) -> list[tuple[str, ...]]:
        return [it.query for it in self.iterations]

    @property
    def has_facets(self) -> bool:
        return self.product_facet is not None

    @property
    def session_type(self) -> Optional[str]:
        if not self.has_facets:
            return None
        return f"{self.product_facet}-{self.goal_facet}"

    def clicked_doc_ids(self) -> list[str]:
        """Clicked documents in click order, first occurrence only."""
        seen: dict[str, None] = {}
        for it in self.iterations:
            for c in it.clicks:
                seen.setdefault(c.doc_id, None)
        return list(seen)

    def observer_snippet(self, doc_id: str) -> tuple[str, ...]:
        """Snippet shown for ``doc_id``, preferring the latest iteration."""
        for it in reversed(self.iterations):
            r = it.result(doc_id)
            if r is not None:
                return r.snippet
        return ()

    def map_tokens(self, fn) -> "Session":
        """Return a copy with every token list passed through ``fn``."""
        its = []
        for it in self.iterations:
            res = tuple(
                ResultEntry(r.doc_id, r.rank, tuple(fn(r.title)), tuple(fn(r.snippet))) for r in it.observer_results
            )
            its.append(Iteration(tuple(fn(it.query)), res, it.clicks))
        return Session(self.id, tuple(its), self.topic_label, self.product_facet, self.goal_facet)


def session_history(s: Session) -> list[tuple[str, ...]]:
    """Queries issued before the current one, in order."""
    return [it.query for it in s.iterations[:-1]]


def _tokens(value: Any, where: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise SessionLogError(f"{where}: expected a list of token strings")
    return tuple(value)


def _session_from_obj(obj: Any, pos: int) -> Session:
    where = f"session #{pos}"
    if not isinstance(obj, dict):
        raise SessionLogError(f"{where}: expected an object")
    try:
        sid = str(obj["id"])
        where = f"session {sid}"
        its = []
        for j, it in enumerate(obj["iterations"]):
            results = tuple(
                ResultEntry(
                    str(r["doc_id"]),
                    int(r["rank"]),
                    _tokens(r.get("title", []), f"{where} iteration {j} title"),
                    _tokens(r.get("snippet", []), f"{where} iteration {j} snippet"),
                )
                for r in it.get("results", [])
            )
            clicks = tuple(Click(str(c["doc_id"]), float(c.get("dwell_seconds", 0.0))) for c in it.get("clicks", []))
            its.append(Iteration(_tokens(it["query"], f"{where} iteration {j} query"), results, clicks))
    except KeyError as exc:
        raise SessionLogError(f"{where}: missing field {exc.args[0]!r}") from None
    except SessionLogError as exc:
        msg = str(exc)
        raise SessionLogError(msg if msg.startswith("session") else f"{where}: {msg}") from None
    return Session(
        sid,
        tuple(its),
        topic_label=obj.get("topic_label"),
        product_facet=obj.get("product"),
        goal_facet=obj.get("goal"),
    )


def parse_session_log(data: bytes | str) -> list[Session]:
    """Parse a JSON session log. Order of sessions is preserved."""
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        raw = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SessionLogError(f"malformed session log at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, list):
        raise SessionLogError("session log must be a JSON array")
    return [_session_from_obj(obj, i) for i, obj in enumerate(raw)]


def session_to_obj(s: Session) -> dict:
    out: dict[str, Any] = {"id": s.id}
    if s.topic_label is not None:
        out["topic_label"] = s.topic_label
    if s.has_facets:
        out["product"] = s.product_facet
        out["goal"] = s.goal_facet
    out["iterations"] = [
        {
            "query": list(it.query),
            "results": [
                {"doc_id": r.doc_id, "rank": r.rank, "title": list(r.title), "snippet": list(r.snippet)}
                for r in it.observer_results
            ],
            "clicks": [{"doc_id": c.doc_id, "dwell_seconds": c.dwell_seconds} for c in it.clicks],
        }
        for it in s.iterations
    ]
    return out


def serialize_sessions(sessions: Iterable[Session]) -> str:
    return json.dumps([session_to_obj(s) for s in sessions], indent=1, sort_keys=False)
