import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from polyview.errors import ConfigError, DataError, MissingViewError
from polyview.mixture import (
    PRESETS,
    RankedList,
    WeightProfile,
    assign_topics,
    integrate,
    integrate_geometric,
    integrate_linear,
    load_profiles,
    normalize_scores,
    select_topk,
    topic_count,
)
from polyview.views import VIEW_ORDER, View


def views(*scores):
    return dict(zip(VIEW_ORDER, scores))


# ---------------------------------------------------------------------------
# fusion


def test_linear_hand_value():
    out = integrate_linear(PRESETS["inquiry"], {"d": views(0.8, 0.6, 1.0, 0.5, 0.2)})
    # 0.35*0.8 + 0.35*0.6 + 0.1*1.0 + 0.1*0.5 + 0.1*0.2 = 0.28 + 0.21 + 0.1 + 0.05 + 0.02
    assert out["d"] == pytest.approx(0.66, abs=1e-12)


def test_linear_all_ones_is_weight_sum():
    for p in PRESETS.values():
        assert integrate_linear(p, {"d": views(1, 1, 1, 1, 1)})["d"] == pytest.approx(math.fsum(p.weights))


def test_zero_weight_view_may_be_missing():
    care = PRESETS["care"]
    scores = {View.RELEVANCE: 1.0, View.UTILITY: 1.0, View.SUPPLEMENT: 1.0, View.AUTHORITY: 1.0}
    assert integrate(care, {"d": scores})["d"] == pytest.approx(1.0)


def test_missing_weighted_view_raises():
    with pytest.raises(MissingViewError) as err:
        integrate_linear(PRESETS["policy"], {"d": {View.RELEVANCE: 1.0}})
    assert err.value.doc_id == "d" and err.value.view == "utility"


def test_geometric():
    p = WeightProfile("g", (0.5, 0.5, 0, 0, 0), mode="geometric")
    assert integrate_geometric(p, {"d": views(0.64, 0.25)})["d"] == pytest.approx(0.4, abs=1e-12)
    assert integrate(p, {"d": views(0.3, 0.3)})["d"] == pytest.approx(0.3)
    # a zero is floored rather than vetoing: sqrt(1e-6 * 1) = 1e-3
    assert integrate(p, {"d": views(0.0, 1.0)})["d"] == pytest.approx(1e-3)


@settings(max_examples=200, deadline=None)
@given(
    st.lists(st.floats(0, 1), min_size=5, max_size=5),
    st.lists(st.floats(0, 1), min_size=5, max_size=5).filter(lambda w: sum(w) > 1e-3),
)
def test_geometric_stays_in_unit_interval(scores, weights):
    p = WeightProfile("g", weights, mode="geometric")
    assert 0.0 <= integrate(p, {"d": views(*scores)})["d"] <= 1.0 + 1e-12


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=5, max_size=5), st.integers(0, 4), st.floats(0, 1))
def test_linear_monotone_in_each_view(scores, view_idx, bump):
    p = PRESETS["inquiry"]
    higher = list(scores)
    higher[view_idx] = max(scores[view_idx], bump)
    a = integrate_linear(p, {"d": views(*scores)})["d"]
    b = integrate_linear(p, {"d": views(*higher)})["d"]
    assert b >= a - 1e-12


# ---------------------------------------------------------------------------
# profiles


def test_presets_load():
    assert set(PRESETS) == {"care", "inquiry", "policy"}
    assert PRESETS["care"].weights == (0.35, 0.35, 0.1, 0.2, 0.0)
    assert PRESETS["care"].active_views() == [View.RELEVANCE, View.UTILITY, View.SUPPLEMENT, View.AUTHORITY]
    assert WeightProfile.from_record(PRESETS["policy"].to_record()) == PRESETS["policy"]


@pytest.mark.parametrize(
    "kwargs",
    [
        {"weights": (1, 1, 1, 1)},
        {"weights": (0, 0, 0, 0, 0)},
        {"weights": (-1, 1, 1, 1, 1)},
        {"weights": (1, 1, 1, 1, math.nan)},
        {"weights": (1, 0, 0, 0, 0), "mode": "harmonic"},
        {"weights": (1, 0, 0, 0, 0), "k": 0},
        {"weights": (1, 0, 0, 0, 0), "eps": 0},
    ],
)
def test_bad_profiles(kwargs):
    with pytest.raises(ConfigError):
        WeightProfile("bad", **kwargs)


def test_load_profiles_duplicate(tmp_path):
    line = '{"profile_id": "x", "weights": [1, 0, 0, 0, 0]}\n'
    p = tmp_path / "profiles.jsonl"
    p.write_text(line * 2)
    with pytest.raises(ConfigError, match="duplicate"):
        load_profiles(p)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_minmax():
    raw = {"a": {View.AUTHORITY: 2.0}, "b": {View.AUTHORITY: 4.0}, "c": {View.AUTHORITY: 6.0}}
    out = normalize_scores(raw, "minmax")
    assert [out[d][View.AUTHORITY] for d in "abc"] == [0.0, 0.5, 1.0]
    flat = normalize_scores({d: {View.AUTHORITY: 5.0} for d in "abc"}, "minmax")
    assert {flat[d][View.AUTHORITY] for d in "abc"} == {0.5}


def test_normalize_fixed():
    out = normalize_scores({"a": {View.RELEVANCE: -1.0, View.AUTHORITY: 1.5}})
    assert out["a"] == {View.RELEVANCE: 0.0, View.AUTHORITY: 1.0}
    with pytest.raises(ConfigError):
        normalize_scores({"a": {}}, "zscore")
    with pytest.raises(DataError):
        normalize_scores({})


# ---------------------------------------------------------------------------
# topics


def test_dbscan_one_dimensional_surrogate():
    points = {"a": [0.0], "b": [0.1], "c": [0.2], "d": [5.0]}
    topics = assign_topics(points, eps=0.15, min_pts=2, metric="euclidean")
    assert topics == {"a": 0, "b": 0, "c": 0, "d": 1}


def test_identical_embeddings_form_one_topic():
    topics = assign_topics({f"d{i}": [1.0, 2.0, 3.0] for i in range(4)})
    assert set(topics.values()) == {0}


def test_min_pts_above_count_gives_singletons():
    topics = assign_topics({"a": [1, 0], "b": [1, 0], "c": [0, 1]}, min_pts=4)
    assert sorted(topics.values()) == [0, 1, 2]


def test_border_point_joins_first_seeded_cluster():
    # b is a border point within reach of core a (cluster 0) and core c (cluster 1)
    points = {"a": [0.0], "a2": [-0.1], "b": [1.0], "c": [2.0], "c2": [2.1]}
    topics = assign_topics(points, eps=1.0, min_pts=3, metric="euclidean")
    assert topics["b"] == topics["a"] == 0


def test_topic_errors():
    with pytest.raises(DataError):
        assign_topics({"a": [0.0, 0.0], "b": [1.0, 0.0]})
    with pytest.raises(DataError):
        assign_topics({"a": [1.0], "b": [1.0, 0.0]})
    with pytest.raises(ConfigError):
        assign_topics({"a": [1.0]}, eps=0)
    assert assign_topics({}) == {}


# ---------------------------------------------------------------------------
# selection

SCORES = {"d1": 0.9, "d2": 0.8, "d3": 0.7, "d4": 0.6, "d5": 0.5}
TOPICS = {"d1": 0, "d2": 0, "d3": 1, "d4": 2, "d5": 1}


def test_select_topk_with_and_without_coverage():
    assert set(select_topk(SCORES, TOPICS, 3, True).doc_ids) == {"d1", "d3", "d4"}
    assert select_topk(SCORES, TOPICS, 3, False).doc_ids == ["d1", "d2", "d3"]


def test_single_topic_makes_coverage_irrelevant():
    one = {d: 0 for d in SCORES}
    assert select_topk(SCORES, one, 3, True) == select_topk(SCORES, one, 3, False)


def test_select_topk_errors_and_short_lists():
    with pytest.raises(DataError) as err:
        select_topk(SCORES, TOPICS, 0, True)
    assert err.value.code == "bad_k"
    with pytest.raises(DataError):
        select_topk(SCORES, {"d1": 0}, 3, True)
    assert len(select_topk(SCORES, TOPICS, 10, True).entries) == 5


def test_ranked_list_round_trip():
    ranked = select_topk(SCORES, TOPICS, 3, True, query_id="q", profile_id="care")
    assert RankedList.from_record(ranked.to_record()) == ranked


def _brute_force(scores, topics, k):
    n_topics = len(set(topics.values()))
    need = min(k, n_topics)
    best = None
    for subset in itertools.combinations(sorted(scores), min(k, len(scores))):
        if topic_count(subset, topics) < need:
            continue
        total = math.fsum(scores[d] for d in subset)
        if best is None or total > best:
            best = total
    return best


@settings(max_examples=300, deadline=None)
@given(
    st.dictionaries(
        st.sampled_from([f"d{i}" for i in range(7)]),
        st.tuples(st.integers(0, 100), st.integers(0, 3)),
        min_size=1,
    ),
    st.integers(1, 5),
)
def test_coverage_selection_is_optimal(data, k):
    scores = {d: s / 100 for d, (s, _) in data.items()}
    topics = {d: t for d, (_, t) in data.items()}
    chosen = select_topk(scores, topics, k, True).doc_ids
    assert topic_count(chosen, topics) == min(k, len(set(topics.values())))
    assert math.fsum(scores[d] for d in chosen) == pytest.approx(_brute_force(scores, topics, k))
    assert [scores[d] for d in chosen] == sorted((scores[d] for d in chosen), reverse=True)
