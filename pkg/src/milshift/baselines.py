"""Comparison shift measures and a common result type.

Sign conventions (``signed_value``):

* ``doc_softmax``: reference mean max-softmax minus target mean. A drop in
  confidence is positive.
* ``doc_entropy`` and ``de_entropy``: target mean entropy minus reference
  mean. A rise in uncertainty is positive.

``value`` is ``abs(signed_value)`` for these. ``fdd`` and ``rs`` are
distances, so ``value == signed_value >= 0``.

Entropy is measured in nats.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .evidence import FeatureConfig, build_feature_matrix
from .frechet import fdd
from .store import Dataset

__all__ = [
    "MEASURES",
    "ShiftMeasureResult",
    "entropy",
    "doc_softmax",
    "doc_entropy",
    "de_entropy",
    "wasserstein1",
    "representation_shift",
    "shift_measure",
    "parse_measure",
]

MEASURES = ("fdd", "rs", "doc_softmax", "doc_entropy", "de_entropy")


def parse_measure(name: str) -> str:
    key = name.strip().lower().replace("-", "_")
    if key not in MEASURES:
        raise ValueError(f"unknown measure {name!r}; choose from "
                         + ", ".join(m.replace("_", "-") for m in MEASURES))
    return key


@dataclass(frozen=True)
class ShiftMeasureResult:
    measure: str
    value: float
    signed_value: float
    reference_id: str
    target_id: str
    model_id: str
    config: Optional[FeatureConfig] = None

    def as_dict(self) -> dict:
        return {
            "measure": self.measure,
            "config": self.config.as_dict() if self.config is not None else None,
            "value": self.value,
            "signed_value": self.signed_value,
            "reference_id": self.reference_id,
            "target_id": self.target_id,
            "model_id": self.model_id,
        }


def entropy(p) -> float:
    """Shannon entropy in nats, with 0 log 0 = 0.

    >>> round(entropy([0.9, 0.1]), 4)
    0.3251
    """
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0):
        raise ValueError(f"negative probability in {p.tolist()}")
    if abs(p.sum() - 1.0) > 1e-5:
        raise ValueError(f"probabilities do not sum to 1: {p.tolist()}")
    nz = p[p > 0]
    return float(-np.sum(nz * np.log(nz)))


def _entropies(probs: np.ndarray) -> np.ndarray:
    safe = np.where(probs > 0, probs, 1.0)
    return -np.sum(probs * np.log(safe), axis=-1)


def _softmax_matrix(d: Dataset) -> np.ndarray:
    if not d.bags:
        raise ValueError(f"dataset {d.dataset_id!r} is empty")
    return np.stack([np.asarray(b.softmax, dtype=np.float64) for b in d.bags])


def _result(measure, signed, ref, tgt, config=None, distance=False):
    signed = float(signed)
    value = signed if distance else abs(signed)
    return ShiftMeasureResult(measure, value, signed, ref.dataset_id, tgt.dataset_id,
                              ref.model_id if ref.model_id == tgt.model_id
                              else f"{ref.model_id}|{tgt.model_id}", config)


def doc_softmax(ref: Dataset, tgt: Dataset) -> ShiftMeasureResult:
    """Difference of mean max-softmax confidence, reference minus target."""
    conf_ref = _softmax_matrix(ref).max(axis=1).mean()
    conf_tgt = _softmax_matrix(tgt).max(axis=1).mean()
    return _result("doc_softmax", conf_ref - conf_tgt, ref, tgt)


def doc_entropy(ref: Dataset, tgt: Dataset) -> ShiftMeasureResult:
    """Difference of mean predictive entropy, target minus reference."""
    h_ref = _entropies(_softmax_matrix(ref)).mean()
    h_tgt = _entropies(_softmax_matrix(tgt)).mean()
    return _result("doc_entropy", h_tgt - h_ref, ref, tgt)


def _ensemble_entropies(d: Dataset, size: Optional[int]) -> tuple:
    if not d.bags:
        raise ValueError(f"dataset {d.dataset_id!r} is empty")
    out = []
    for b in d.bags:
        if b.ensemble_softmax is None:
            raise ValueError(f"slide {b.slide_id!r} in {d.dataset_id!r} has no ensemble outputs")
        ens = np.asarray(b.ensemble_softmax, dtype=np.float64)
        if ens.ndim != 2 or ens.shape[1] != 2:
            raise ValueError(f"slide {b.slide_id!r}: ensemble outputs have shape {ens.shape}")
        if size is None:
            size = ens.shape[0]
        if ens.shape[0] != size:
            raise ValueError(f"slide {b.slide_id!r}: ragged ensemble "
                             f"({ens.shape[0]} members, expected {size})")
        out.append(ens.mean(axis=0))
    if size < 2:
        raise ValueError(f"deep ensemble needs >= 2 members, got {size}")
    return _entropies(np.stack(out)), size


def de_entropy(ref: Dataset, tgt: Dataset) -> ShiftMeasureResult:
    """Entropy of the ensemble-averaged softmax, target mean minus reference mean."""
    h_ref, size = _ensemble_entropies(ref, None)
    h_tgt, _ = _ensemble_entropies(tgt, size)
    return _result("de_entropy", h_tgt.mean() - h_ref.mean(), ref, tgt)


def _w1_sorted(a: np.ndarray, b: np.ndarray) -> float:
    n, m = a.shape[0], b.shape[0]
    if n == m:
        return float(np.mean(np.abs(a - b)))
    # both quantile functions are step functions; integrate |Qa - Qb| exactly
    # over the merged breakpoints i/n and j/m
    grid = np.union1d(np.arange(n + 1) / n, np.arange(m + 1) / m)
    mid = 0.5 * (grid[1:] + grid[:-1])
    qa = a[np.minimum((mid * n).astype(np.intp), n - 1)]
    qb = b[np.minimum((mid * m).astype(np.intp), m - 1)]
    return float(np.sum(np.diff(grid) * np.abs(qa - qb)))


def wasserstein1(a, b) -> float:
    """1-D Wasserstein-1 distance between two empirical samples.

    >>> wasserstein1([0, 1], [1, 2])
    1.0
    """
    a = np.sort(np.asarray(a, dtype=np.float64).ravel())
    b = np.sort(np.asarray(b, dtype=np.float64).ravel())
    if a.size == 0 or b.size == 0:
        raise ValueError("wasserstein1 needs non-empty samples")
    return _w1_sorted(a, b)


def representation_shift(ref: Dataset, tgt: Dataset,
                         config: FeatureConfig = FeatureConfig()) -> ShiftMeasureResult:
    """Mean over descriptor dimensions of the per-dimension Wasserstein-1 distance."""
    r = build_feature_matrix(ref, config).rows
    t = r if tgt is ref else build_feature_matrix(tgt, config).rows
    if r.shape[1] != t.shape[1]:
        raise ValueError(f"descriptor dimension mismatch: {r.shape[1]} vs {t.shape[1]}")
    rs = np.sort(r, axis=0)
    ts = np.sort(t, axis=0)
    if rs.shape[0] == ts.shape[0]:
        per_dim = np.mean(np.abs(rs - ts), axis=0)
    else:
        per_dim = np.array([_w1_sorted(rs[:, j], ts[:, j]) for j in range(rs.shape[1])])
    return _result("rs", per_dim.mean(), ref, tgt, config, distance=True)


def shift_measure(measure: str, ref: Dataset, tgt: Dataset,
                  config: Optional[FeatureConfig] = None, **fdd_kwargs) -> ShiftMeasureResult:
    """Compute any supported measure by name (``fdd``, ``rs``, ``doc-softmax``, ...)."""
    measure = parse_measure(measure)
    if measure == "fdd":
        config = config or FeatureConfig()
        return _result("fdd", fdd(ref, tgt, config, **fdd_kwargs), ref, tgt, config,
                       distance=True)
    if measure == "rs":
        return representation_shift(ref, tgt, config or FeatureConfig())
    if measure == "doc_softmax":
        return doc_softmax(ref, tgt)
    if measure == "doc_entropy":
        return doc_entropy(ref, tgt)
    return de_entropy(ref, tgt)
