"""Slide-level descriptors from attention-MIL outputs.

Each slide is reduced to one vector per :class:`FeatureConfig`:

* ``positive_evidence`` / ``negative_evidence``: the K patches with the
  highest / lowest attention
* ``combined_evidence``: K/2 highest plus K/2 lowest
* ``random``: K patches drawn without replacement
* ``mean_patch``: plain mean over all patches, attention ignored
* ``penultimate``: the stored slide-level penultimate vector

Selected evidence is aggregated by ``mean`` (length J) or ``concat``
(length K*J).

Conventions the source method leaves open:

* Ties in attention go to the lower patch index.
* A bag with fewer than K patches uses K' = min(K, N). Concat pads the
  selection by repeating its last row up to K rows.
* Combined evidence with an odd K' takes ceil(K'/2) from the top and
  floor(K'/2) from the bottom. The bottom half never reuses a top pick.
* Concat row order is descending attention for positive, ascending for
  negative, top block then bottom block for combined, draw order for random.
  This order is a convention of this package.

Random selection
----------------
The draw for a slide depends only on ``(seed, slide_id)``:

1. key = BLAKE2b (8-byte digest) of the UTF-8 string ``f"{seed}:{slide_id}"``,
   read as an unsigned little-endian integer;
2. a PCG64 generator is seeded with ``numpy.random.PCG64(key)``;
3. a partial Fisher-Yates shuffle of ``range(N)`` takes K' steps. Step i
   swaps position i with i + r, where r is uniform on [0, N - i) and comes
   from raw 64-bit outputs with rejection sampling. The first K' positions
   are the draw, in order.

Only PCG64's raw output stream is used, and numpy keeps that stream stable
across releases.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .store import Dataset, PatchBag

__all__ = [
    "SELECTORS",
    "EVIDENCE_SELECTORS",
    "FeatureConfig",
    "FeatureMatrix",
    "select_evidence",
    "selection_indices",
    "aggregate",
    "build_feature_matrix",
    "slide_generator",
    "parse_selector",
]

EVIDENCE_SELECTORS = ("positive_evidence", "negative_evidence", "combined_evidence", "random")
SELECTORS = EVIDENCE_SELECTORS + ("mean_patch", "penultimate")
AGGREGATIONS = ("mean", "concat")
MAX_K = 1_000_000

_ALIASES = {
    "positive": "positive_evidence",
    "negative": "negative_evidence",
    "combined": "combined_evidence",
    "mean-patch": "mean_patch",
    "mean_patch": "mean_patch",
    "penultimate": "penultimate",
    "random": "random",
}


def parse_selector(name: str) -> str:
    """Canonical selector name; accepts short CLI aliases such as ``positive``."""
    key = name.strip().lower().replace("-evidence", "_evidence")
    key = _ALIASES.get(key, key)
    if key not in SELECTORS:
        raise ValueError(f"unknown selector {name!r}; choose from {', '.join(SELECTORS)}")
    return key


@dataclass(frozen=True)
class FeatureConfig:
    """How to turn a bag into a slide descriptor.

    ``k`` and ``aggregation`` are ignored by ``mean_patch`` and
    ``penultimate``; ``seed`` is only read by ``random``.
    """

    selector: str = "positive_evidence"
    k: int = 64
    aggregation: str = "mean"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "selector", parse_selector(self.selector))
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.is_evidence:
            if not isinstance(self.k, (int, np.integer)) or self.k < 1:
                raise ValueError(f"K must be a positive integer, got {self.k!r}")
            if self.k > MAX_K:
                raise ValueError(f"K={self.k} exceeds the guard of {MAX_K}")
            if self.selector == "combined_evidence" and self.k % 2:
                raise ValueError(f"combined_evidence needs an even K, got {self.k}")

    @property
    def is_evidence(self) -> bool:
        return self.selector in EVIDENCE_SELECTORS

    def as_dict(self) -> dict:
        d = {"selector": self.selector}
        if self.is_evidence:
            d["k"] = int(self.k)
            d["aggregation"] = self.aggregation
        if self.selector == "random":
            d["seed"] = int(self.seed)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureConfig":
        return cls(selector=d["selector"], k=int(d.get("k", 64)),
                   aggregation=d.get("aggregation", "mean"), seed=int(d.get("seed", 0)))

    def label(self) -> str:
        """Compact one-token description, e.g. ``positive_evidence:k=64:mean``."""
        if not self.is_evidence:
            return self.selector
        s = f"{self.selector}:k={self.k}:{self.aggregation}"
        if self.selector == "random":
            s += f":seed={self.seed}"
        return s


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    dataset_id: str
    model_id: str
    config: FeatureConfig
    rows: np.ndarray  # (W, J') float64
    slide_ids: tuple = field(default_factory=tuple)

    @property
    def shape(self):
        return self.rows.shape


def slide_generator(seed: int, slide_id: str) -> np.random.PCG64:
    digest = hashlib.blake2b(f"{seed}:{slide_id}".encode("utf-8"), digest_size=8).digest()
    return np.random.PCG64(int.from_bytes(digest, "little"))


def _bounded(bitgen: np.random.PCG64, n: int) -> int:
    # uniform on [0, n) from raw 64-bit draws, rejecting the biased tail
    limit = (1 << 64) - ((1 << 64) % n)
    while True:
        r = int(bitgen.random_raw())
        if r < limit:
            return r % n


def _random_indices(n: int, k: int, seed: int, slide_id: str) -> np.ndarray:
    bitgen = slide_generator(seed, slide_id)
    perm = list(range(n))
    for i in range(k):
        j = i + _bounded(bitgen, n - i)
        perm[i], perm[j] = perm[j], perm[i]
    return np.asarray(perm[:k], dtype=np.intp)


def selection_indices(attention: np.ndarray, config: FeatureConfig,
                      slide_id: str = "") -> np.ndarray:
    """Patch indices picked by an evidence selector, in concatenation order."""
    if not config.is_evidence:
        raise ValueError(f"{config.selector!r} is not an evidence selector")
    att = np.asarray(attention, dtype=np.float64)
    n = att.shape[0]
    k = min(int(config.k), n)
    sel = config.selector
    if sel == "positive_evidence":
        return np.argsort(-att, kind="stable")[:k]
    if sel == "negative_evidence":
        return np.argsort(att, kind="stable")[:k]
    if sel == "combined_evidence":
        n_top = (k + 1) // 2
        top = np.argsort(-att, kind="stable")[:n_top]
        taken = np.zeros(n, dtype=bool)
        taken[top] = True
        ascending = np.argsort(att, kind="stable")
        bottom = ascending[~taken[ascending]][: k - n_top]
        return np.concatenate([top, bottom])
    return _random_indices(n, k, config.seed, slide_id)


def select_evidence(bag: PatchBag, config: FeatureConfig) -> np.ndarray:
    """Rows of ``bag.patch_features`` chosen by ``config``, as float64 (K' x J)."""
    idx = selection_indices(bag.attention, config, bag.slide_id)
    return np.asarray(bag.patch_features, dtype=np.float64)[idx]


def aggregate(evidence: np.ndarray, mode: str) -> np.ndarray:
    """Collapse K' selected rows into one descriptor.

    >>> aggregate(np.array([[1., 2.], [3., 4.]]), "mean")
    array([2., 3.])
    >>> aggregate(np.array([[1., 2.], [3., 4.]]), "concat")
    array([1., 2., 3., 4.])
    """
    ev = np.asarray(evidence, dtype=np.float64)
    if ev.ndim != 2 or ev.shape[0] < 1:
        raise ValueError(f"evidence must be a non-empty K x J matrix, got shape {ev.shape}")
    if mode == "mean":
        return ev.mean(axis=0)
    if mode == "concat":
        return ev.reshape(-1).copy()
    raise ValueError(f"unknown aggregation {mode!r}")


def _descriptor(bag: PatchBag, config: FeatureConfig) -> np.ndarray:
    if config.selector == "mean_patch":
        return np.asarray(bag.patch_features, dtype=np.float64).mean(axis=0)
    if config.selector == "penultimate":
        if bag.penultimate is None:
            raise ValueError(f"slide {bag.slide_id!r} has no penultimate features")
        return np.asarray(bag.penultimate, dtype=np.float64)
    ev = select_evidence(bag, config)
    if config.aggregation == "concat" and ev.shape[0] < config.k:
        pad = np.repeat(ev[-1:], config.k - ev.shape[0], axis=0)
        ev = np.vstack([ev, pad])
    return aggregate(ev, config.aggregation)


def build_feature_matrix(d: Dataset, config: FeatureConfig) -> FeatureMatrix:
    """One descriptor row per slide of ``d``, in dataset order."""
    if not d.bags:
        raise ValueError(f"dataset {d.dataset_id!r} has no slides")
    rows = np.stack([_descriptor(b, config) for b in d.bags])
    if not np.all(np.isfinite(rows)):
        raise ValueError(f"non-finite descriptor in dataset {d.dataset_id!r}")
    return FeatureMatrix(d.dataset_id, d.model_id, config, rows,
                         tuple(b.slide_id for b in d.bags))


def descriptor_dim(d: Dataset, config: FeatureConfig) -> Optional[int]:
    if config.selector == "penultimate":
        return d.penultimate_dim
    if config.is_evidence and config.aggregation == "concat":
        return config.k * d.feature_dim
    return d.feature_dim
