"""Synthetic attention-MIL datasets with a controllable domain shift.

Slides
    Every patch gets a standard-normal embedding. A positive slide also
    holds a random minority of evidence patches, whose ``evidence_dims`` are
    raised by ``evidence_signal``.

Shift
    ``shift_level`` moves every patch along one fixed random unit direction
    by that amount. With ``noise_scale > 0`` it also adds independent noise
    of standard deviation ``shift_level * noise_scale`` per dimension, which
    widens the covariance. The added noise draws false evidence on negative
    slides, so the classifier degrades as the shift grows.

Model
    A fixed analytic scorer. The attention for a patch is a weighted sum of
    its features, concentrated on the evidence dimensions, plus a little
    noise. P(tumor) is a logistic function of the mean weighted score of
    the top attended patches. The penultimate vector is the
    attention-softmax-weighted mean embedding. Ensemble members reuse the
    scorer with perturbed weights, gain and bias. ``model_seed`` picks one
    model variant.

Random streams come from ``numpy.random.default_rng`` with fixed integer
keys. Slide content depends only on ``seed``. The model's parameters depend
only on ``model_seed``. The noise draws are identical at every shift level,
so datasets from one seed lineage differ only by the shift itself.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .baselines import shift_measure
from .evidence import FeatureConfig
from .metrics import make_record, validation_threshold
from .store import Dataset, PatchBag

__all__ = ["SynthConfig", "SyntheticModel", "generate_dataset", "benchmark_datasets",
           "run_benchmark", "DEFAULT_SHIFT_GRID"]

DEFAULT_SHIFT_GRID = (0.0, 0.5, 1.0, 2.0, 4.0)
VALIDATION_SEED_OFFSET = 1000


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 0
    num_slides: int = 200
    patches_per_slide: tuple = (50, 150)
    feature_dim: int = 64
    evidence_dims: tuple = tuple(range(8))
    shift_level: float = 0.0
    label_noise: float = 0.0
    tumor_fraction: float = 0.4
    ensemble_size: int = 4
    model_seed: int = 0
    noise_scale: float = 1.0
    evidence_signal: float = 3.0
    evidence_fraction: tuple = (0.1, 0.3)
    dataset_id: Optional[str] = None

    def __post_init__(self):
        lo, hi = self.patches_per_slide
        if not 1 <= lo <= hi:
            raise ValueError(f"invalid patches_per_slide {self.patches_per_slide}")
        if self.num_slides < 2:
            raise ValueError("num_slides must be >= 2")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if not self.evidence_dims or any(not 0 <= j < self.feature_dim
                                         for j in self.evidence_dims):
            raise ValueError(f"evidence_dims must be a non-empty subset of 0..{self.feature_dim - 1}")
        for name in ("label_noise", "tumor_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be a probability, got {v}")
        f_lo, f_hi = self.evidence_fraction
        if not 0.0 < f_lo <= f_hi <= 1.0:
            raise ValueError(f"invalid evidence_fraction {self.evidence_fraction}")
        if self.shift_level < 0 or self.noise_scale < 0:
            raise ValueError("shift_level and noise_scale must be >= 0")
        if self.ensemble_size < 0:
            raise ValueError("ensemble_size must be >= 0")

    @property
    def name(self) -> str:
        if self.dataset_id is not None:
            return self.dataset_id
        return f"synth-seed{self.seed}-shift{self.shift_level:g}"


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class SyntheticModel:
    """Analytic stand-in for a trained attention-MIL classifier."""

    top_k = 4
    attention_noise = 0.1

    def __init__(self, cfg: SynthConfig):
        rng = np.random.default_rng([cfg.model_seed, 7])
        j = cfg.feature_dim
        ev = np.asarray(cfg.evidence_dims)
        self.model_seed = cfg.model_seed
        self.weights = self._weights(rng, j, ev)
        self.gain = 3.0 * (1.0 + 0.1 * rng.standard_normal())
        self.bias = 0.5 * cfg.evidence_signal * (1.0 + 0.1 * rng.standard_normal())
        self.members = []
        for _ in range(cfg.ensemble_size):
            w = self._weights(rng, j, ev)
            gain = self.gain * (1.0 + 0.2 * rng.standard_normal())
            bias = self.bias * (1.0 + 0.2 * rng.standard_normal())
            self.members.append((w, gain, bias))

    @staticmethod
    def _weights(rng, j, ev):
        w = 0.02 * rng.standard_normal(j)
        w[ev] = (1.0 + 0.2 * rng.standard_normal(ev.size)) / ev.size
        return w

    def _prob(self, x, order, w, gain, bias):
        score = (x[order[: self.top_k]] @ w).mean()
        return float(_sigmoid(gain * (score - bias)))

    def score(self, x: np.ndarray, att_noise: np.ndarray):
        """Attention, softmax, penultimate and ensemble outputs for one bag."""
        attention = x @ self.weights + self.attention_noise * att_noise
        order = np.argsort(-attention, kind="stable")
        p1 = self._prob(x, order, self.weights, self.gain, self.bias)
        a = np.exp(attention - attention.max())
        penultimate = (a / a.sum()) @ x
        ens = None
        if self.members:
            ens = np.array([[1.0 - p, p] for p in
                            (self._prob(x, order, *m) for m in self.members)])
        return attention, np.array([1.0 - p1, p1]), penultimate, ens


def _slides(cfg: SynthConfig):
    """Yield (slide_id, label, features, attention noise) for the seed lineage."""
    rng = np.random.default_rng([cfg.seed, 1])
    j = cfg.feature_dim
    direction = np.random.default_rng([cfg.seed, 2]).standard_normal(j)
    direction /= np.linalg.norm(direction)
    ev = np.asarray(cfg.evidence_dims)
    lo, hi = cfg.patches_per_slide
    f_lo, f_hi = cfg.evidence_fraction
    for i in range(cfg.num_slides):
        tumor = rng.random() < cfg.tumor_fraction
        flip = rng.random() < cfg.label_noise
        n = int(rng.integers(lo, hi + 1))
        x = rng.standard_normal((n, j))
        extra = rng.standard_normal((n, j))
        att_noise = rng.standard_normal(n)
        frac = rng.uniform(f_lo, f_hi)
        evidence = rng.permutation(n)[: max(1, int(round(frac * n)))]
        if tumor:
            x[np.ix_(evidence, ev)] += cfg.evidence_signal
        x += cfg.shift_level * direction
        if cfg.noise_scale:
            x += cfg.shift_level * cfg.noise_scale * extra
        yield f"slide{i:05d}", int(tumor) ^ int(flip), x, att_noise


def generate_dataset(cfg: SynthConfig) -> Dataset:
    """Generate one fully deterministic synthetic dataset.

    Patch features, attention and penultimate vectors are rounded to
    binary32, as they would be on disk, so writing the dataset and loading
    it back is bit-exact.
    """
    model = SyntheticModel(cfg)
    bags = []
    for sid, label, x, att_noise in _slides(cfg):
        x32 = x.astype(np.float32)
        attention, softmax, pen, ens = model.score(x32.astype(np.float64), att_noise)
        bags.append(PatchBag(
            slide_id=sid,
            patch_features=x32,
            attention=attention.astype(np.float32),
            softmax=softmax,
            label=label,
            penultimate=pen.astype(np.float32),
            ensemble_softmax=ens,
        ))
    return Dataset(cfg.name, f"synth-model{cfg.model_seed}", cfg.feature_dim, tuple(bags))


def benchmark_datasets(models: int = 10, shift_grid: Sequence[float] = DEFAULT_SHIFT_GRID,
                       base_cfg: SynthConfig = SynthConfig()):
    """Yield ``(validation, reference, targets)`` for each synthetic model variant.

    Variant ``m`` uses ``model_seed = base_cfg.model_seed + m``. The
    validation set is unshifted and drawn from a separate seed.
    ``shift_grid[0]`` is the reference; every later level is a target.
    """
    if models < 2:
        raise ValueError("need >= 2 models")
    if len(shift_grid) < 3:
        raise ValueError("shift grid needs >= 3 levels")
    for m in range(models):
        mcfg = replace(base_cfg, model_seed=base_cfg.model_seed + m, dataset_id=None)
        val = generate_dataset(replace(mcfg, seed=mcfg.seed + VALIDATION_SEED_OFFSET,
                                       shift_level=0.0, dataset_id="validation"))
        ref = generate_dataset(replace(mcfg, shift_level=shift_grid[0], dataset_id="shift-ref"))
        targets = [generate_dataset(replace(mcfg, shift_level=level,
                                            dataset_id=f"shift-{level:g}"))
                   for level in shift_grid[1:]]
        yield val, ref, targets


def run_benchmark(models: int = 10, shift_grid: Sequence[float] = DEFAULT_SHIFT_GRID,
                  base_cfg: SynthConfig = SynthConfig(), measure: str = "fdd",
                  config: Optional[FeatureConfig] = None) -> list:
    """Score a shift measure against MCC drop over synthetic model variants.

    The threshold for each variant comes from its validation set. One
    :class:`EvaluationRecord` is produced per (variant, non-reference shift
    level), ready for :func:`milshift.metrics.evaluate_measure`. ``fdd`` and
    ``rs`` default to positive evidence, K=64, mean aggregation.
    """
    if measure in ("fdd", "rs") and config is None:
        config = FeatureConfig("positive_evidence", 64, "mean")
    records = []
    for val, ref, targets in benchmark_datasets(models, shift_grid, base_cfg):
        threshold = validation_threshold(val)
        for tgt in targets:
            result = shift_measure(measure, ref, tgt, config)
            records.append(make_record(ref, tgt, result, threshold))
    return records
