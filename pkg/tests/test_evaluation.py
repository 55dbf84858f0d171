import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurotopo.errors import ValidationError
from neurotopo.evaluation import (
    LabeledDataset,
    MetricsReport,
    aggregate,
    dichotomize_enjoyment,
    dichotomize_ratings,
    plan_leave_one_group_out,
    plan_stratified_kfold,
    run_experiment,
    weighted_metrics,
)
from neurotopo.nn import TrainConfig

sk = pytest.importorskip("sklearn.metrics")


def check_plan(plan, labels, groups=None):
    n = len(labels)
    tests = np.concatenate([te for _, te in plan.folds])
    assert sorted(tests.tolist()) == list(range(n))
    for tr, te in plan.folds:
        assert not set(tr.tolist()) & set(te.tolist())
        assert len(tr) + len(te) == n
    if groups is None:
        k = len(plan.folds)
        for c in np.unique(labels):
            per_fold = [np.sum(labels[te] == c) for _, te in plan.folds]
            expected = np.sum(labels == c) / k
            assert max(abs(p - expected) for p in per_fold) <= 1


# planners -------------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(
    counts=st.lists(st.integers(5, 30), min_size=2, max_size=8),
    k=st.integers(2, 5),
    seed=st.integers(0, 2**16),
)
def test_kfold_disjoint_covering_stratified(counts, k, seed):
    labels = np.repeat(np.arange(len(counts)), counts)
    labels = labels[np.random.default_rng(seed).permutation(len(labels))]
    for plan in plan_stratified_kfold(labels, k, repetitions=3, seed=seed):
        check_plan(plan, labels)


def test_balanced_200_gives_40_per_fold_and_4_per_class():
    labels = np.repeat(np.arange(10), 20)
    for plan in plan_stratified_kfold(labels, 5, repetitions=10, seed=1):
        for _, te in plan.folds:
            assert len(te) == 40
            assert np.all(np.bincount(labels[te], minlength=10) == 4)


def test_repetitions_shuffle_differently():
    labels = np.repeat(np.arange(10), 20)
    plans = plan_stratified_kfold(labels, 5, repetitions=10, seed=0)
    firsts = {tuple(p.folds[0][1].tolist()) for p in plans}
    assert len(firsts) == 10
    again = plan_stratified_kfold(labels, 5, repetitions=10, seed=0)
    assert all(np.array_equal(a.folds[0][1], b.folds[0][1]) for a, b in zip(plans, again))


def test_small_class_rejected_by_name():
    labels = np.array([0] * 10 + [7] * 3)
    with pytest.raises(ValidationError, match="class 7"):
        plan_stratified_kfold(labels, 5)


def test_grouped_kfold_keeps_groups_together():
    labels = np.repeat(np.arange(5), 30)
    groups = np.repeat(np.arange(25), 6)
    for plan in plan_stratified_kfold(labels, 5, repetitions=2, groups=groups):
        check_plan(plan, labels, groups)
        for tr, te in plan.folds:
            assert not set(groups[tr].tolist()) & set(groups[te].tolist())


@pytest.mark.parametrize("n_groups", [20, 10])
def test_logo_one_fold_per_group_sizes_preserved(n_groups):
    rng = np.random.default_rng(n_groups)
    groups = rng.integers(0, n_groups, 500)
    groups[:n_groups] = np.arange(n_groups)
    plan = plan_leave_one_group_out(groups)
    assert len(plan.folds) == n_groups
    for g, (tr, te) in zip(plan.held_out, plan.folds):
        assert np.all(groups[te] == g) and len(te) == np.sum(groups == g)
        assert not np.any(groups[tr] == g)


def test_logo_single_group_rejected():
    with pytest.raises(ValidationError, match="2 groups"):
        plan_leave_one_group_out([3, 3, 3])


# metrics --------------------------------------------------------------------


def test_hand_computed_weighted_metrics():
    m = weighted_metrics([0, 0, 1, 1], [0, 1, 1, 1], 2)
    # class 0: p=1, r=.5, f=2/3; class 1: p=2/3, r=1, f=.8; equal support
    assert m["weighted_precision"] == pytest.approx(0.8333, abs=1e-4)
    assert m["weighted_recall"] == pytest.approx(0.75, abs=1e-4)
    assert m["weighted_f1"] == pytest.approx(0.7333, abs=1e-4)
    assert m["confusion"] == [[1, 1], [0, 2]]


def test_perfect_and_constant_predictions():
    y = np.repeat(np.arange(10), 5)
    assert all(weighted_metrics(y, y, 10)[k] == pytest.approx(1.0, abs=1e-12) for k in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1"))
    assert weighted_metrics(y, np.zeros_like(y), 10)["accuracy"] == pytest.approx(0.1)


def test_empty_input_rejected():
    with pytest.raises(ValidationError, match="empty"):
        weighted_metrics([], [], 3)


@settings(max_examples=150, deadline=None)
@given(data=st.data(), c=st.integers(2, 6), n=st.integers(1, 60))
def test_matches_sklearn_and_recall_is_accuracy(data, c, n):
    yt = np.array(data.draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n)))
    yp = np.array(data.draw(st.lists(st.integers(0, c - 1), min_size=n, max_size=n)))
    m = weighted_metrics(yt, yp, c)
    assert m["weighted_recall"] == pytest.approx(m["accuracy"], abs=1e-12)
    kw = dict(average="weighted", zero_division=0, labels=np.unique(yt))
    assert m["weighted_precision"] == pytest.approx(sk.precision_score(yt, yp, **kw), abs=1e-12)
    assert m["weighted_f1"] == pytest.approx(sk.f1_score(yt, yp, **kw), abs=1e-12)
    assert m["accuracy"] == pytest.approx(sk.accuracy_score(yt, yp), abs=1e-12)
    perm = np.random.default_rng(n).permutation(c)
    r = weighted_metrics(perm[yt], perm[yp], c)
    for key in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1"):
        assert r[key] == pytest.approx(m[key], abs=1e-12)
        assert 0 <= m[key] <= 1


def test_aggregate_ci():
    folds = [{"metrics": {k: v for k in ("accuracy", "weighted_precision", "weighted_recall", "weighted_f1")}} for v in (0.5, 0.7, 0.9)]
    a = aggregate(folds)["accuracy"]
    assert a["mean"] == pytest.approx(0.7)
    assert a["std"] == pytest.approx(0.2)
    assert a["ci95"] == pytest.approx([0.7 - 1.96 * 0.2 / np.sqrt(3), 0.7 + 1.96 * 0.2 / np.sqrt(3)])


# enjoyment ------------------------------------------------------------------


def test_threshold_is_strict():
    high, low = dichotomize_ratings({(0, 0): 7, (0, 1): 5, (0, 2): 3, (1, 0): 6})
    assert high == [(0, 0), (1, 0)]
    assert low == [(0, 1), (0, 2)]


def test_missing_rating_named():
    with pytest.raises(ValidationError, match=r"\(2, 1\)"):
        dichotomize_ratings({(2, 1): None})


def tiny_dataset(ratings, users=3, songs=2, chunks=4, shape=(4, 4, 5), seed=0):
    rng = np.random.default_rng(seed)
    u, s, c = np.meshgrid(np.arange(users), np.arange(songs), np.arange(chunks), indexing="ij")
    u, s, c = u.ravel(), s.ravel(), c.ravel()
    images = rng.normal(size=(len(u),) + shape) + 3.0 * s[:, None, None, None]
    return LabeledDataset(images, u, s, c, ratings)


def test_partition_of_chunks_follows_pairs():
    ratings = {(u, s): 9 if (u + s) % 2 else 2 for u in range(3) for s in range(2)}
    ds = tiny_dataset(ratings)
    part = dichotomize_enjoyment(ds)
    assert len(part.high) + len(part.low) == len(ds)
    assert not set(part.high.tolist()) & set(part.low.tolist())
    assert len(part.high_pairs) == 3 and len(part.low) == 12


def test_empty_side_rejected_before_training(monkeypatch):
    ds = tiny_dataset({(u, s): 9 for u in range(3) for s in range(2)})
    assert len(dichotomize_enjoyment(ds).low) == 0

    def boom(*a, **k):
        raise AssertionError("training started")

    monkeypatch.setattr("neurotopo.evaluation.train", boom)
    with pytest.raises(ValidationError, match="low-enjoyment partition is empty"):
        run_experiment("song_id_louo_low", ds)


def test_unknown_experiment():
    with pytest.raises(ValidationError, match="unknown experiment"):
        run_experiment("nope", tiny_dataset({(u, s): 5 for u in range(3) for s in range(2)}))


# runner ---------------------------------------------------------------------


def test_louo_runner_one_entry_per_user_and_json_round_trip():
    ds = tiny_dataset({(u, s): 5 for u in range(3) for s in range(2)})
    rep = run_experiment("song_id_louo", ds, train_config=TrainConfig(epochs=3, batch_size=8))
    assert sorted(g["group"] for g in rep.per_group) == [0, 1, 2]
    assert all(f["n_test"] == 8 for f in rep.per_fold)
    d = json.loads(rep.to_json())
    assert set(d) >= {"experiment", "protocol", "repetitions", "per_fold", "aggregate"}
    assert MetricsReport.from_dict(d).to_json() == rep.to_json()
    assert rep.chance == 0.5
    # separable by construction (song offsets the image)
    assert rep.mean() > 0.9


def test_runner_is_deterministic():
    ds = tiny_dataset({(u, s): 5 for u in range(3) for s in range(2)}, chunks=5)
    a = run_experiment("song_id_kfold", ds, train_config=TrainConfig(epochs=2, batch_size=8), repetitions=2)
    b = run_experiment("song_id_kfold", ds, train_config=TrainConfig(epochs=2, batch_size=8), repetitions=2)
    assert a.to_json() == b.to_json()
    assert len(a.per_fold) == 10
