import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sessionrank.sessions import (
    Click,
    Iteration,
    ResultEntry,
    Session,
    SessionLogError,
    parse_session_log,
    serialize_sessions,
    session_history,
)

from conftest import iteration, session

ONE = [{"id": "s1", "iterations": [{"query": ["cheap", "flight"], "results": [], "clicks": []}]}]


def test_minimal_log():
    out = parse_session_log(json.dumps(ONE))
    assert len(out) == 1
    assert out[0].current_query == ("cheap", "flight")
    assert out[0].topic_label is None and not out[0].has_facets


def test_click_outside_results_is_rejected():
    bad = [
        {
            "id": "s1",
            "iterations": [
                {"query": ["a"], "results": [{"doc_id": "d1", "rank": 1}], "clicks": [{"doc_id": "d9"}]}
            ],
        }
    ]
    with pytest.raises(SessionLogError, match="d9"):
        parse_session_log(json.dumps(bad))


def test_labels_preserved():
    raw = [
        {"id": "a", "topic_label": "T1", "iterations": [{"query": ["x"]}]},
        {"id": "b", "topic_label": "T1", "iterations": [{"query": ["y"]}]},
        {"id": "c", "topic_label": "T2", "product": "factual", "goal": "specific", "iterations": [{"query": ["z"]}]},
    ]
    out = parse_session_log(json.dumps(raw).encode())
    assert [s.id for s in out] == ["a", "b", "c"]
    assert [s.topic_label for s in out] == ["T1", "T1", "T2"]
    assert out[2].session_type == "factual-specific"


@pytest.mark.parametrize(
    "raw, msg",
    [
        ("[{", "line 1"),
        ('{"id": 1}', "array"),
        ('[{"iterations": [{"query": ["a"]}]}]', "id"),
        ('[{"id": "s", "iterations": []}]', "no iterations"),
        ('[{"id": "s", "product": "factual", "iterations": [{"query": ["a"]}]}]', "both"),
        ('[{"id": "s", "iterations": [{"query": "a b"}]}]', "list of token"),
        (
            '[{"id": "s", "iterations": [{"query": ["a"], "results": [{"doc_id": "d", "rank": 2}, {"doc_id": "e", "rank": 1}]}]}]',
            "increasing",
        ),
    ],
)
def test_malformed_logs(raw, msg):
    with pytest.raises(SessionLogError, match=msg):
        parse_session_log(raw)


def test_too_many_results():
    with pytest.raises(SessionLogError):
        Iteration(("q",), tuple(ResultEntry(f"d{i}", i + 1) for i in range(11)))


def test_negative_dwell():
    with pytest.raises(SessionLogError):
        Click("d1", -1.0)


def test_session_history():
    assert session_history(session("s", "only")) == []
    s = session("s", "a b", "a c", "a d")
    assert session_history(s) == [("a", "b"), ("a", "c")]


def test_clicked_doc_ids_first_occurrence_order():
    s = session(
        "s",
        iteration("q1", ["d1", "d2"], ["d2", "d1"]),
        iteration("q2", ["d2", "d3"], ["d3", "d2"]),
    )
    assert s.clicked_doc_ids() == ["d2", "d1", "d3"]


def test_observer_snippet_prefers_latest():
    s = session(
        "s",
        iteration("q1", [ResultEntry("d1", 1, (), ("old",))]),
        iteration("q2", [ResultEntry("d1", 1, (), ("new",))]),
    )
    assert s.observer_snippet("d1") == ("new",)
    assert s.observer_snippet("zz") == ()


words = st.lists(st.sampled_from(["a", "b", "c", "dog", "cat"]), min_size=1, max_size=4)


@st.composite
def sessions(draw):
    n_it = draw(st.integers(1, 4))
    its = []
    for _ in range(n_it):
        n_res = draw(st.integers(0, 4))
        results = tuple(
            ResultEntry(f"d{i}", i + 1, tuple(draw(words)), tuple(draw(words))) for i in range(n_res)
        )
        clicked = draw(st.lists(st.integers(0, max(n_res - 1, 0)), max_size=n_res)) if n_res else []
        clicks = tuple(Click(f"d{i}", float(draw(st.integers(0, 100)))) for i in clicked)
        its.append(Iteration(tuple(draw(words)), results, clicks))
    facets = draw(st.sampled_from([(None, None), ("factual", "amorphous"), ("intellectual", "specific")]))
    label = draw(st.sampled_from([None, "T1", "T2"]))
    return Session(draw(st.sampled_from(["s1", "s2"])), tuple(its), label, *facets)


@settings(max_examples=60, deadline=None)
@given(st.lists(sessions(), max_size=3))
def test_round_trip(ss):
    assert parse_session_log(serialize_sessions(ss)) == ss


@settings(max_examples=60, deadline=None)
@given(sessions())
def test_history_plus_current_is_query_list(s):
    assert session_history(s) + [s.current_query] == s.queries
