import json
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sessionrank.relatedness import (
    N_FEATURES,
    ArowClassifier,
    SessionProfile,
    TopicCluster,
    arow_train,
    build_topic_clusters,
    classify_pair,
    cluster_of,
    clustering_f1,
    make_training_pairs,
    pair_features,
    pairwise_f1,
    prune_candidates,
    survives_pruning,
)
from sessionrank.retrieval import QueryModel

from conftest import split_by_topic


def profile(sid, queries=(("a",),), results=(), positions=("p",), label=None, rm=None, terms=(), social=()):
    model = QueryModel(rm or {"a": 1.0})
    return SessionProfile(
        sid,
        tuple(tuple(q) for q in queries),
        frozenset(results),
        frozenset(positions),
        model,
        frozenset(terms),
        frozenset(social),
        model,
        label,
    )


def separable_examples(seed=0, n=60):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        y = 1 if i % 2 == 0 else -1
        centre = np.full(N_FEATURES, 1.0 if y > 0 else -1.0)
        out.append((centre + rng.uniform(-0.5, 0.5, N_FEATURES), y))
    return out


class AlwaysRelated:
    def margin(self, x):
        return 1.0


def test_pruning_rules():
    a = profile("a", [("x", "y")], results=["d1"], positions=["p"])
    assert survives_pruning(a, profile("b", [("x",)], positions=["p"]))
    assert not survives_pruning(a, profile("c", [("z",)], positions=["p"]))
    assert not survives_pruning(a, profile("d", [("x",)], results=["d1"], positions=["q"]))
    assert [p.id for p in prune_candidates(a, [a, profile("b", [("x",)])])] == ["b"]


def test_self_pair_features():
    a = profile("a", [("x", "y"), ("y",)], results=["d1", "d2"], positions=["p", "q"], terms=["t"], social=["s"],
                rm={"x": 0.5, "y": 0.5})
    f = pair_features(a, a)
    assert len(f) == N_FEATURES == 10
    assert f[2] == 2  # identical queries = query count
    assert f[1] == f[4] == f[6] == f[7] == f[8] == 1.0
    assert f[5] == f[9] == 0.0


def test_disjoint_pair_features():
    a = profile("a", [("x",)], results=["d1"], positions=["p"], terms=["t"], social=["s"], rm={"x": 1.0})
    b = profile("b", [("y",)], results=["d2"], positions=["q"], terms=["u"], social=["v"], rm={"y": 1.0})
    f = pair_features(a, b)
    assert f[[0, 1, 2, 3, 4, 6, 7, 8]].tolist() == [0.0] * 8
    assert f[5] == f[9] == 1.0


def test_shared_query_term_ratio():
    a = profile("a", [("w", "x", "y", "z")])
    b = profile("b", [("y", "z", "u", "v")])
    f = pair_features(a, b)
    assert f[0] == 2
    assert f[1] == pytest.approx(len({"y", "z"}) / len({"w", "x", "y", "z", "u", "v"}))


def test_single_update_moves_margin():
    clf = ArowClassifier.zero()
    x = np.arange(1.0, N_FEATURES + 1)
    assert clf.margin(x) == 0.0
    assert not classify_pair(clf, x)
    clf.update(x, +1)
    assert clf.margin(x) > 0


def test_variances_shrink_monotonically():
    clf = ArowClassifier.zero()
    prev = clf.variance.copy()
    for x, y in separable_examples(1):
        clf.update(x, y)
        assert np.all(clf.variance <= prev) and np.all(clf.variance > 0)
        prev = clf.variance.copy()


def test_separable_training_f1():
    ex = separable_examples(0)
    clf = arow_train(ex, seed=0)
    assert pairwise_f1([(y > 0, classify_pair(clf, x)) for x, y in ex]) == 1.0


def test_arow_input_validation(caplog):
    with pytest.raises(ValueError):
        arow_train([])
    with pytest.raises(ValueError):
        arow_train(separable_examples(), r=0)
    ex = separable_examples() + [(np.full(N_FEATURES, np.nan), 1)]
    arow_train(ex)
    assert "non-finite" in caplog.text


def test_classifier_json_round_trip():
    clf = arow_train(separable_examples(), seed=3)
    back = ArowClassifier.from_json(json.loads(json.dumps(clf.to_json())))
    x = separable_examples(9)[0][0]
    assert back.margin(x) == clf.margin(x)
    assert set(clf.to_json()) == {"mean", "variance", "scaler", "r"}


def test_training_pairs_ratio():
    profs = [profile(f"s{i}", [("a",)], label="T1" if i < 3 else "T2") for i in range(12)]
    pairs = make_training_pairs(profs, seed=0, neg_ratio=1)
    pos = sum(1 for _, y in pairs if y > 0)
    assert pos == 3 + 36
    assert sum(1 for _, y in pairs if y < 0) == min(27, pos)


def test_clusters_no_edges_and_chain():
    profs = [profile(i, [(i,)], positions=[i]) for i in "abc"]
    singles = build_topic_clusters(None, profs, AlwaysRelated())
    assert [c.members for c in singles] == [("a",), ("b",), ("c",)]
    chain = [
        profile("a", [("x",)], positions=["p"]),
        profile("b", [("x", "y")], positions=["p", "q"]),
        profile("c", [("y",)], positions=["q"]),
    ]
    assert not survives_pruning(chain[0], chain[2])
    clusters = build_topic_clusters(None, chain, AlwaysRelated())
    assert [c.members for c in clusters] == [("a", "b", "c")]
    assert cluster_of("c", clusters).cluster_id == 0


def test_clustering_f1_values():
    labels = {"a": "T1", "b": "T1", "c": "T2"}
    assert clustering_f1([TopicCluster(0, ("a", "b")), TopicCluster(1, ("c",))], labels) == 1.0
    # one cluster of three: tp=1, fp=2
    assert clustering_f1([TopicCluster(0, ("a", "b", "c"))], labels) == pytest.approx(2 / 4)


def test_two_topic_fixture(two_topic_profiles):
    profs = two_topic_profiles
    assert {p.topic_label for p in profs} == {"T1", "T2"}
    train, held = split_by_topic(profs)
    clf = arow_train(make_training_pairs(train, seed=0), seed=0)
    outcomes = [
        (a.topic_label == b.topic_label, survives_pruning(a, b) and classify_pair(clf, pair_features(a, b)))
        for a, b in combinations(held, 2)
    ]
    assert pairwise_f1(outcomes) >= 0.9
    # self-pairs count as related
    assert all(classify_pair(clf, pair_features(p, p)) for p in held)
    full = arow_train(make_training_pairs(profs, seed=0), seed=0)
    clusters = build_topic_clusters(None, profs, full)
    assert clustering_f1(clusters, {p.id: p.topic_label for p in profs}) >= 0.9


def test_fixture_pruning_keeps_authored_related_pairs(two_topic_profiles):
    for a, b in combinations(two_topic_profiles, 2):
        if a.topic_label == b.topic_label and a.positions & b.positions and a.query_terms & b.query_terms:
            assert survives_pruning(a, b)


ids = st.sampled_from("abcdefgh")


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.sets(ids, max_size=3), st.sets(st.sampled_from("pq"), min_size=1)), min_size=1, max_size=7))
def test_clusters_partition(spec):
    profs = [profile(f"s{i}", [tuple(sorted(q)) or ("z",)], positions=sorted(pos)) for i, (q, pos) in enumerate(spec)]
    clf = arow_train(separable_examples(), seed=1)
    clusters = build_topic_clusters(None, profs, clf)
    members = [m for c in clusters for m in c.members]
    assert sorted(members) == sorted(p.id for p in profs)
    assert len(members) == len(set(members))
    for a, b in combinations(profs, 2):
        fa, fb = pair_features(a, b), pair_features(b, a)
        assert classify_pair(clf, fa) == classify_pair(clf, fb)
