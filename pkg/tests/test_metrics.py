import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from nacl.metrics import (CalibConfig, EmptyEvaluationError, MetricsRecord, assign_bins, cece, dice, ece,
                          evaluate, hausdorff, mean_case_rank, merge_bin_stats, select_eval_pixels, sum_rank,
                          write_reliability_csv)
from nacl.numerics import InvalidInputError
from oracles import cece_brute, ece_brute, ranks_by_hand

ALL = "all_pixels"


def as_map(rows):
    """(N, K) probability rows -> (K, 1, N) map."""
    return np.asarray(rows, dtype=np.float64).T[:, None, :]


def random_probs(rng, k, n, snap=None):
    p = rng.dirichlet(np.full(k, 0.5), size=n)
    if snap:
        # put some confidences exactly on bin edges
        i = rng.integers(0, n, size=n // 4)
        top = rng.integers(1, snap + 1, size=i.size) / snap
        p[i] = 0.0
        p[i, 0] = top
        p[i, 1] = 1 - top
    return p


def test_ece_hand_example():
    rows = [[0.9, 0.1], [0.8, 0.2], [0.9, 0.1], [0.6, 0.4]]
    labels = np.array([[0, 1, 0, 1]])
    val, stats = ece(as_map(rows), labels, CalibConfig(2, ALL))
    assert val == pytest.approx(0.3, abs=1e-15)
    assert stats.count.tolist() == [0, 4]
    assert stats.accuracy[1] == 0.5 and stats.confidence[1] == pytest.approx(0.8, abs=1e-15)


def test_cece_hand_example():
    val, _ = cece(as_map([[0.9, 0.1], [0.6, 0.4]]), np.array([[0, 1]]), CalibConfig(1, ALL))
    assert val == pytest.approx(0.5, abs=1e-15)


def test_perfect_predictions():
    labels = np.array([[0, 1, 2, 1]])
    probs = np.eye(3)[labels[0]]
    assert ece(as_map(probs), labels, CalibConfig(15, ALL))[0] == 0.0
    assert cece(as_map(probs), labels, CalibConfig(15, ALL))[0] == 0.0


def test_single_class_degenerate():
    probs = np.ones((1, 2, 2))
    labels = np.zeros((2, 2), dtype=int)
    assert cece(probs, labels, CalibConfig(15, ALL))[0] == 0.0


@pytest.mark.parametrize("m", [1, 2, 15])
def test_brute_force_agreement(rng, m):
    for _ in range(30):
        k = int(rng.integers(2, 5))
        n = int(rng.integers(1, 60))
        p = random_probs(rng, k, n, snap=m)
        y = rng.integers(0, k, size=n)
        e, _ = ece(as_map(p), y[None], CalibConfig(m, ALL))
        c, _ = cece(as_map(p), y[None], CalibConfig(m, ALL))
        assert abs(e - ece_brute(p.max(1), p.argmax(1) == y, m)) < 1e-12
        assert abs(c - cece_brute(p, y, m)) < 1e-12


def test_bin_boundaries():
    assert assign_bins([0.0, 0.5, 0.5000001, 1.0], 2).tolist() == [0, 0, 1, 1]


def test_reassembly(rng):
    p = random_probs(rng, 3, 200)
    y = rng.integers(0, 3, 200)
    val, stats = ece(as_map(p), y[None], CalibConfig(15, ALL))
    n = stats.count.sum()
    assert n == 200
    assert val == float((stats.count / n * np.abs(stats.accuracy - stats.confidence)).sum())
    cval, cstats = cece(as_map(p), y[None], CalibConfig(15, ALL))
    assert cval == cstats.cece()
    assert np.all(cstats.class_count.sum(axis=0) == 200)


def test_frequency_predictor_is_calibrated(rng):
    y = rng.integers(0, 4, size=(8, 9))
    freq = np.bincount(y.ravel(), minlength=4) / y.size
    probs = np.broadcast_to(freq[:, None, None], (4, 8, 9)).copy()
    assert ece(probs, y, CalibConfig(1, ALL))[0] < 1e-12


@settings(max_examples=80, deadline=None)
@given(st.integers(2, 5), st.integers(1, 40), st.integers(1, 20), st.integers(0, 2**31))
def test_bounds(k, n, m, seed):
    rng = np.random.default_rng(seed)
    p = rng.dirichlet(np.full(k, 0.3), size=n)
    y = rng.integers(0, k, n)
    e, stats = ece(as_map(p), y[None], CalibConfig(m, ALL))
    c, _ = cece(as_map(p), y[None], CalibConfig(m, ALL))
    assert 0 <= e <= 1
    # class-wise error is normalised by the pixel count, so it can reach 2
    assert 0 <= c <= 2
    full = stats.count > 0
    assert np.all((stats.accuracy[full] >= 0) & (stats.accuracy[full] <= 1))
    assert np.all((stats.confidence[full] >= 0) & (stats.confidence[full] <= 1))


def test_cece_upper_extreme():
    # a confident miss scores 2 under per-pixel normalisation
    assert cece(as_map([[1.0, 0.0]]), np.array([[1]]), CalibConfig(15, ALL))[0] == 2.0


def test_dice_examples():
    a = np.zeros((4, 5), dtype=int)
    assert dice(a, a, 1) == 1.0
    p = np.zeros(20, dtype=int)
    g = np.zeros(20, dtype=int)
    p[:10] = 1
    g[5:15] = 1
    assert dice(p, g, 1) == 0.5
    assert dice(p, 1 - p, 1) == 0.0


def test_hausdorff_examples():
    p = np.zeros((5, 6), dtype=int)
    g = np.zeros((5, 6), dtype=int)
    p[0, 0] = 1
    g[3, 4] = 1
    assert hausdorff(p, g, 1).distance == 5.0
    assert hausdorff(p, p, 1) == (0.0, False)
    empty = hausdorff(p, np.zeros_like(p), 1)
    assert empty.degenerate and empty.distance == pytest.approx(np.hypot(4, 5))


def test_selection_examples():
    gt = np.zeros((3, 3), dtype=int)
    pred = gt.copy()
    pred[1, 2] = 2
    assert not select_eval_pixels(gt, pred, "gt_foreground").any()
    assert np.argwhere(select_eval_pixels(gt, pred, "union_foreground")).tolist() == [[1, 2]]
    with pytest.raises(EmptyEvaluationError):
        ece(np.full((2, 3, 3), 0.5), gt, CalibConfig(15, "gt_foreground"))
    with pytest.raises(InvalidInputError):
        CalibConfig(0)
    with pytest.raises(InvalidInputError):
        CalibConfig(15, "everything")


@settings(max_examples=60, deadline=None)
@given(hnp.arrays(np.int64, (6, 6), elements=st.integers(0, 3)),
       hnp.arrays(np.int64, (6, 6), elements=st.integers(0, 3)))
def test_union_contains_gt(gt, pred):
    g = select_eval_pixels(gt, pred, "gt_foreground")
    u = select_eval_pixels(gt, pred, "union_foreground")
    assert np.all(u[g]) and u.sum() >= g.sum()


def test_reliability_csv(tmp_path, rng):
    p = random_probs(rng, 3, 50)
    _, stats = ece(as_map(p), rng.integers(0, 3, 50)[None], CalibConfig(15, ALL))
    path = tmp_path / "rel.csv"
    write_reliability_csv(stats, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["bin_lo", "bin_hi", "count", "accuracy", "confidence"]
    assert len(rows) == 16 and sum(int(r[2]) for r in rows[1:]) == 50


def test_merge_bin_stats(rng):
    p = random_probs(rng, 3, 80)
    y = rng.integers(0, 3, 80)
    cfg = CalibConfig(15, ALL)
    whole = ece(as_map(p), y[None], cfg)[1]
    parts = [ece(as_map(p[i:i + 20]), y[None, i:i + 20], cfg)[1] for i in range(0, 80, 20)]
    merged = merge_bin_stats(parts)
    assert np.array_equal(merged.count, whole.count)
    assert np.allclose(merged.accuracy, whole.accuracy) and np.allclose(merged.confidence, whole.confidence)


def test_evaluate_record(rng):
    gts = [rng.integers(0, 3, (6, 6)) for _ in range(3)]
    probs = [np.eye(3)[g].transpose(2, 0, 1) * 0.7 + 0.1 for g in gts]
    rec, pooled, per_image = evaluate(probs, gts, bins=15, method="m")
    assert rec.dsc_mean == 1.0 and rec.hd_mean == 0.0
    assert rec.ece["gt_foreground"] == pytest.approx(0.2)
    assert len(per_image) == 3 and pooled["union_foreground"].count.sum() == sum((g != 0).sum() for g in gts)
    assert MetricsRecord.from_dict(rec.to_dict()) == rec
    assert set(rec.flat()) == {"dsc", "hd", "ece_gt_foreground", "cece_gt_foreground",
                               "ece_union_foreground", "cece_union_foreground"}


def test_sum_rank_examples():
    table = {"A": {"dsc": 0.9, "ece": 0.1}, "B": {"dsc": 0.8, "ece": 0.05}, "C": {"dsc": 0.8, "ece": 0.2}}
    expected = {"A": 3.0, "B": 3.5, "C": 5.5}
    assert sum_rank(table) == expected
    by_hand = np.add(ranks_by_hand([0.9, 0.8, 0.8], True), ranks_by_hand([0.1, 0.05, 0.2], False))
    assert list(expected.values()) == by_hand.tolist()


def test_sum_rank_dominance_and_ties():
    table = {"best": {"dsc": 1.0, "hd": 0.0, "ece": 0.0}, "x": {"dsc": 0.5, "hd": 2.0, "ece": 0.3},
             "y": {"dsc": 0.5, "hd": 2.0, "ece": 0.3}}
    r = sum_rank(table)
    assert r["best"] == 3.0 and r["x"] == r["y"]
    assert sum_rank({"only": {"dsc": 0.2}}) == {"only": 1.0}
    with pytest.raises(InvalidInputError):
        sum_rank({"a": {"dsc": 1.0}, "b": {}}, ["dsc"])


def test_mean_case_rank():
    cases = {"a": [{"dsc": 0.9}, {"dsc": 0.1}], "b": [{"dsc": 0.5}, {"dsc": 0.5}]}
    assert mean_case_rank(cases, ["dsc"]) == {"a": 1.5, "b": 1.5}
    cases["a"][1]["dsc"] = 0.6
    assert mean_case_rank(cases, ["dsc"]) == {"a": 1.0, "b": 2.0}
