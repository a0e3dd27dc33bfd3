import math

import numpy as np
import pytest
import scipy.stats
from hypothesis import given, settings, strategies as st

from milshift.baselines import ShiftMeasureResult
from milshift.metrics import (ConfusionCounts, EvaluationRecord, confusion_counts,
                              evaluate_measure, mcc, pearson, records_to_csv, roc_auc,
                              select_threshold, threshold_candidates)


def brute_auc(labels, scores):
    pos = [s for y, s in zip(labels, scores) if y == 1]
    neg = [s for y, s in zip(labels, scores) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def brute_mcc(labels, scores, t):
    tp = fp = tn = fn = 0
    for y, s in zip(labels, scores):
        pred = s >= t
        tp += pred and y == 1
        fp += pred and y == 0
        tn += (not pred) and y == 0
        fn += (not pred) and y == 1
    den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    return 0.0 if den == 0 else (tp * tn - fp * fn) / math.sqrt(den)


def brute_threshold(labels, scores):
    u = sorted(set(scores))
    cands = [u[0] - 1.0] + [(u[i] + u[i + 1]) / 2 for i in range(len(u) - 1)] + [u[-1] + 1.0]
    best_t, best = None, -2.0
    for t in cands:  # ascending, so strict > keeps the smallest maximizer
        v = brute_mcc(labels, scores, t)
        if v > best:
            best_t, best = t, v
    return best_t, best


def random_instance(rng):
    n = int(rng.integers(2, 51))
    labels = rng.integers(0, 2, n)
    labels[0], labels[1] = 0, 1
    # coarse grid so ties occur
    scores = np.round(rng.uniform(0, 1, n), int(rng.integers(1, 3)))
    return labels.tolist(), scores.tolist()


def record(model, value, drop, measure="fdd"):
    res = ShiftMeasureResult(measure, value, value, "ref", f"t{value}", model, None)
    return EvaluationRecord(model, "ref", f"t{value}", res, 0.9, 0.9 - drop, 0.9, 0.8)


def test_mcc_examples():
    assert mcc(ConfusionCounts(tp=5, fp=0, tn=5, fn=0)) == 1.0
    assert mcc(ConfusionCounts(tp=0, fp=5, tn=0, fn=5)) == -1.0
    assert mcc(ConfusionCounts(tp=3, fp=1, tn=4, fn=2)) == 10 / math.sqrt(600)
    assert mcc(ConfusionCounts(tp=4, fp=2, tn=0, fn=0)) == 0.0
    with pytest.raises(ValueError):
        ConfusionCounts(0, 0, 0, 0)
    with pytest.raises(ValueError):
        ConfusionCounts(-1, 1, 1, 1)


@settings(max_examples=200, deadline=None)
@given(*(st.integers(0, 50) for _ in range(4)))
def test_mcc_swap_properties(tp, fp, tn, fn):
    if tp + fp + tn + fn == 0:
        return
    base = mcc(ConfusionCounts(tp, fp, tn, fn))
    assert -1.0 <= base <= 1.0
    # swap labels and predictions together
    assert mcc(ConfusionCounts(tn, fn, tp, fp)) == pytest.approx(base, abs=1e-12)
    # swap predictions only
    assert mcc(ConfusionCounts(fn, tn, fp, tp)) == pytest.approx(-base, abs=1e-12)


def test_auc_examples():
    assert roc_auc([0, 0, 1, 1], [0.1, 0.2, 0.8, 0.9]) == 1.0
    assert roc_auc([0, 1, 0, 1], [0.3] * 4) == 0.5
    assert roc_auc([1, 0, 1, 0], [0.9, 0.8, 0.7, 0.1]) == 0.75
    with pytest.raises(ValueError, match="both classes"):
        roc_auc([1, 1], [0.1, 0.2])
    with pytest.raises(ValueError):
        roc_auc([0, 1], [0.1])


def test_auc_brute_force(rng):
    for _ in range(100):
        labels, scores = random_instance(rng)
        assert roc_auc(labels, scores) == pytest.approx(brute_auc(labels, scores), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_auc_monotone_invariance(seed):
    labels, scores = random_instance(np.random.default_rng(seed))
    s = np.asarray(scores)
    assert roc_auc(labels, np.exp(3 * s) + 2) == roc_auc(labels, s)


def test_select_threshold_examples():
    assert select_threshold([0, 1], [0.1, 0.9]) == 0.5
    assert mcc(confusion_counts([0, 1], [0.1, 0.9], 0.5)) == 1.0
    # inversion: MCC is -1 at the midpoint and 0 at both sentinels
    assert select_threshold([1, 0], [0.1, 0.9]) == pytest.approx(0.1 - 1.0)
    assert select_threshold([0, 1, 1], [0.4, 0.4, 0.4]) == pytest.approx(0.4 - 1.0)
    np.testing.assert_allclose(threshold_candidates([0.2, 0.2, 0.6]), [-0.8, 0.4, 1.6])
    with pytest.raises(ValueError):
        select_threshold([1, 1], [0.1, 0.2])


def test_select_threshold_brute_force(rng):
    for _ in range(100):
        labels, scores = random_instance(rng)
        t = select_threshold(labels, scores)
        bt, best = brute_threshold(labels, scores)
        assert t == bt
        assert brute_mcc(labels, scores, t) == pytest.approx(best, abs=1e-12)
        for c in threshold_candidates(scores):
            assert brute_mcc(labels, scores, t) >= brute_mcc(labels, scores, c) - 1e-12


def test_pearson_examples():
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
    assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0, abs=1e-12)
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)
    with pytest.raises(ValueError, match="constant"):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(ValueError):
        pearson([1], [1])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.1, 10), st.floats(-5, 5))
def test_pearson_affine_and_scipy(seed, a, b):
    rng = np.random.default_rng(seed)
    x, y = rng.standard_normal((2, 20))
    r = pearson(x, y)
    assert r == pytest.approx(scipy.stats.pearsonr(x, y)[0], abs=1e-9)
    assert pearson(a * x + b, y) == pytest.approx(r, abs=1e-9)
    assert pearson(-a * x, y) == pytest.approx(-r, abs=1e-9)


def test_evaluate_measure_examples():
    recs = [record("m", v, d) for v, d in [(0.1, 0.0), (0.5, 0.1), (0.9, 0.2)]]
    s = evaluate_measure(recs)
    assert s.per_model_r["m"] == pytest.approx(1.0, abs=1e-12)
    assert s.mean_r == pytest.approx(1.0, abs=1e-12) and s.std_r == pytest.approx(0.0, abs=1e-12)

    two = [record("a", v, v) for v in (1.0, 2.0, 3.0)] + [record("b", v, -v) for v in (1.0, 2.0, 3.0)]
    s = evaluate_measure(two, pooled=True)
    assert s.mean_r == pytest.approx(0.0, abs=1e-12)
    assert s.std_r == pytest.approx(1.0, abs=1e-12)
    assert s.pooled_r == pytest.approx(0.0, abs=1e-12)
    assert "pooled_r" in s.as_dict()

    flat = [record("good", v, v) for v in (1.0, 2.0)] + [record("flat", 1.0, d) for d in (0.1, 0.2)]
    with pytest.raises(ValueError, match="'flat'"):
        evaluate_measure(flat)


def test_record_drop_and_csv():
    r = record("m", 0.3, 0.25)
    assert r.mcc_drop == r.mcc_ref - r.mcc_target
    lines = records_to_csv([r]).splitlines()
    assert lines[0].split(",")[:6] == ["model_id", "reference_id", "target_id", "measure",
                                       "config", "value"]
    assert lines[1].startswith("m,ref,t0.3,fdd,,0.3,")
