"""Classification metrics and the shift-measure correlation harness.

The harness pairs each shift-measure value with the MCC drop it should
predict, ``mcc_ref - mcc_target``. For each model it computes the Pearson
correlation across that model's (reference, target) pairs. It reports the
per-model coefficients, their mean, and their population standard
deviation.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .baselines import ShiftMeasureResult
from .store import Dataset

__all__ = [
    "ConfusionCounts",
    "EvaluationRecord",
    "CorrelationSummary",
    "confusion_counts",
    "mcc",
    "roc_auc",
    "select_threshold",
    "pearson",
    "evaluate_measure",
    "dataset_performance",
    "records_to_csv",
    "RECORD_COLUMNS",
]


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise ValueError(f"negative count in {self}")
        if self.tp + self.fp + self.tn + self.fn < 1:
            raise ValueError("confusion matrix is empty")


def confusion_counts(labels, scores, threshold: float) -> ConfusionCounts:
    """Counts for the rule ``score >= threshold -> class 1``."""
    y = np.asarray(labels).astype(bool)
    pred = np.asarray(scores, dtype=np.float64) >= threshold
    return ConfusionCounts(int(np.sum(pred & y)), int(np.sum(pred & ~y)),
                           int(np.sum(~pred & ~y)), int(np.sum(~pred & y)))


def _mcc_arrays(tp, fp, tn, fn):
    tp, fp, tn, fn = (np.asarray(v, dtype=np.float64) for v in (tp, fp, tn, fn))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    num = tp * tn - fp * fn
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / np.sqrt(denom)
    return np.where(denom > 0, out, 0.0)


def mcc(c: ConfusionCounts) -> float:
    """Matthews correlation coefficient; 0 when any marginal is empty.

    >>> round(mcc(ConfusionCounts(tp=3, fp=1, tn=4, fn=2)), 4)
    0.4082
    """
    return float(_mcc_arrays(c.tp, c.fp, c.tn, c.fn))


def _check_binary(labels, scores):
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ValueError(f"labels and scores must be equal-length vectors, "
                         f"got {y.shape} and {s.shape}")
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be 0 or 1")
    y = y.astype(bool)
    if y.all() or not y.any():
        raise ValueError("both classes must be present")
    return y, s


def roc_auc(labels, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count 1/2)."""
    y, s = _check_binary(labels, scores)
    ranks = rankdata(s)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def threshold_candidates(scores) -> np.ndarray:
    """Midpoints of consecutive distinct scores plus one sentinel on each side."""
    u = np.unique(np.asarray(scores, dtype=np.float64))
    mids = 0.5 * (u[1:] + u[:-1])
    return np.concatenate([[u[0] - 1.0], mids, [u[-1] + 1.0]])


def select_threshold(labels, scores) -> float:
    """Threshold maximizing MCC of ``score >= t``; the smallest wins ties.

    Candidates are midpoints between consecutive distinct scores, plus
    ``min - 1`` (everything positive) and ``max + 1`` (everything negative).
    """
    y, s = _check_binary(labels, scores)
    cand = threshold_candidates(s)
    pos = np.sort(s[y])
    neg = np.sort(s[~y])
    tp = pos.size - np.searchsorted(pos, cand, side="left")
    fp = neg.size - np.searchsorted(neg, cand, side="left")
    fn = pos.size - tp
    tn = neg.size - fp
    vals = _mcc_arrays(tp, fp, tn, fn)
    return float(cand[int(np.argmax(vals))])


def pearson(xs, ys) -> float:
    """Sample Pearson correlation coefficient.

    >>> pearson([1, 2, 3], [1, 3, 2])
    0.5
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"need equal-length vectors, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 points")
    dx = x - x.mean()
    dy = y - y.mean()
    sxx = float(np.dot(dx, dx))
    syy = float(np.dot(dy, dy))
    if sxx == 0.0 or syy == 0.0:
        raise ValueError("correlation is undefined for a constant input")
    r = float(np.dot(dx, dy)) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


@dataclass(frozen=True)
class EvaluationRecord:
    model_id: str
    reference_id: str
    target_id: str
    measure: ShiftMeasureResult
    mcc_ref: float
    mcc_target: float
    auc_ref: float
    auc_target: float
    mcc_drop: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mcc_drop", self.mcc_ref - self.mcc_target)


@dataclass(frozen=True)
class CorrelationSummary:
    measure: str
    config: Optional[str]
    per_model_r: dict
    mean_r: float
    std_r: float
    pooled_r: Optional[float] = None

    def as_dict(self) -> dict:
        d = {"measure": self.measure, "config": self.config,
             "per_model_r": dict(self.per_model_r), "mean_r": self.mean_r,
             "std_r": self.std_r}
        if self.pooled_r is not None:
            d["pooled_r"] = self.pooled_r
        return d


def evaluate_measure(records: Sequence[EvaluationRecord], pooled: bool = False
                     ) -> CorrelationSummary:
    """Per-model Pearson r between measure value and MCC drop.

    ``std_r`` is the population standard deviation over models. With
    ``pooled=True`` the correlation over all records together is added.

    Raises ``ValueError`` naming the model whose records are degenerate
    (fewer than two, or constant measure values or drops).
    """
    if not records:
        raise ValueError("no records to evaluate")
    kinds = {(r.measure.measure, _config_label(r.measure)) for r in records}
    if len(kinds) > 1:
        raise ValueError(f"records mix several measures: {sorted(kinds)}")
    by_model: dict = {}
    for r in records:
        by_model.setdefault(r.model_id, []).append(r)
    per_model = {}
    for model_id, recs in by_model.items():
        xs = [r.measure.value for r in recs]
        ys = [r.mcc_drop for r in recs]
        try:
            per_model[model_id] = pearson(xs, ys)
        except ValueError as exc:
            raise ValueError(f"model {model_id!r}: {exc}") from None
    rs = np.array(list(per_model.values()))
    pooled_r = None
    if pooled:
        pooled_r = pearson([r.measure.value for r in records], [r.mcc_drop for r in records])
    measure, config = kinds.pop()
    return CorrelationSummary(measure, config, per_model, float(rs.mean()),
                              float(rs.std(ddof=0)), pooled_r)


def _scores_labels(d: Dataset):
    bags = d.labeled()
    labels = np.array([b.label for b in bags], dtype=int)
    scores = np.array([float(b.softmax[1]) for b in bags])
    return labels, scores


def dataset_performance(d: Dataset, threshold: float) -> tuple:
    """(MCC, ROC-AUC) on the labeled slides of ``d`` using P(class 1) as score.

    Unlabeled slides are skipped.
    """
    labels, scores = _scores_labels(d)
    if labels.size == 0:
        raise ValueError(f"dataset {d.dataset_id!r} has no labeled slides")
    m = mcc(confusion_counts(labels, scores, threshold))
    auc = roc_auc(labels, scores)
    return m, auc


def validation_threshold(d: Dataset) -> float:
    labels, scores = _scores_labels(d)
    try:
        return select_threshold(labels, scores)
    except ValueError as exc:
        raise ValueError(f"validation dataset {d.dataset_id!r}: {exc}") from None


def _config_label(m: ShiftMeasureResult) -> str:
    return m.config.label() if m.config is not None else ""


RECORD_COLUMNS = ("model_id", "reference_id", "target_id", "measure", "config", "value",
                  "signed_value", "mcc_ref", "mcc_target", "mcc_drop", "auc_ref", "auc_target")


def records_to_csv(records: Iterable[EvaluationRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_COLUMNS)
    for r in records:
        w.writerow([r.model_id, r.reference_id, r.target_id, r.measure.measure,
                    _config_label(r.measure)]
                   + [repr(float(v)) for v in (r.measure.value, r.measure.signed_value,
                                               r.mcc_ref, r.mcc_target, r.mcc_drop,
                                               r.auc_ref, r.auc_target)])
    return buf.getvalue()


def make_record(ref: Dataset, tgt: Dataset, result: ShiftMeasureResult,
                threshold: float) -> EvaluationRecord:
    mcc_ref, auc_ref = dataset_performance(ref, threshold)
    mcc_tgt, auc_tgt = dataset_performance(tgt, threshold)
    return EvaluationRecord(tgt.model_id, ref.dataset_id, tgt.dataset_id, result,
                            mcc_ref, mcc_tgt, auc_ref, auc_tgt)
