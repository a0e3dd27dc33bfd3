"""Gaussian summaries and the Fréchet distance between them.

For two Gaussians (mu1, C1) and (mu2, C2)::

    FD = |mu1 - mu2|^2 + Tr(C1) + Tr(C2) - 2 Tr((C1 C2)^{1/2})

``(C1 C2)^{1/2}`` is never formed. Its trace equals the trace of
``(C2^{1/2} C1 C2^{1/2})^{1/2}``, which is the sum of the singular values of
``C1^{1/2} C2^{1/2}``, and that sum is what gets computed. Both square roots
are symmetric PSD roots from a clamped eigendecomposition. With identical
covariances the singular values reproduce the eigenvalues of C exactly, so
FD(a, a) comes out at rounding level rather than sqrt(eps).

The Fréchet Domain Distance of two datasets is the FD of Gaussians fit to
their slide descriptors (see :mod:`milshift.evidence`). When the descriptor
dimension exceeds the combined slide count, the same trace is taken from
the W1 x W2 cross-Gram matrix of centered descriptors. The D x D covariances
are never built on that path, so concat descriptors with K*J in the
thousands stay cheap.

Covariances use the unbiased ``W - 1`` denominator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .evidence import FeatureConfig, FeatureMatrix, build_feature_matrix
from .store import Dataset

__all__ = [
    "GaussianSummary",
    "gaussian_fit",
    "sqrtm_psd",
    "frechet_distance",
    "fdd",
    "save_summary",
    "load_summary",
]

SYMMETRY_RTOL = 1e-10
NEG_EIG_RTOL = 1e-6
CLAMP_RTOL = 1e-8


@dataclass(frozen=True, eq=False)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray
    sample_count: int
    config: Optional[FeatureConfig] = None
    dataset_id: str = ""
    model_id: str = ""

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])


def _centered(rows: np.ndarray):
    x = np.asarray(rows, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a W x D matrix, got shape {x.shape}")
    if x.shape[0] < 2:
        raise ValueError(f"need >= 2 slides to fit a Gaussian, got {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite value in feature matrix")
    mu = x.mean(axis=0)
    return mu, x - mu


def gaussian_fit(m, ridge: float = 0.0) -> GaussianSummary:
    """Sample mean and unbiased covariance of a feature matrix.

    Parameters
    ----------
    m : FeatureMatrix or array_like, shape (W, D)
    ridge : float
        Added to the covariance diagonal. Zero by default; only useful when
        W is much smaller than D.
    """
    if isinstance(m, FeatureMatrix):
        rows, meta = m.rows, (m.config, m.dataset_id, m.model_id)
    else:
        rows, meta = m, (None, "", "")
    mu, xc = _centered(rows)
    cov = xc.T @ xc / (xc.shape[0] - 1)
    cov = 0.5 * (cov + cov.T)
    if ridge:
        cov[np.diag_indices_from(cov)] += ridge
    return GaussianSummary(mu, cov, int(xc.shape[0]), *meta)


def _psd_eigh(c: np.ndarray):
    c = np.asarray(c, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {c.shape}")
    if not np.all(np.isfinite(c)):
        raise ValueError("non-finite value in matrix")
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    asym = float(np.max(np.abs(c - c.T))) if c.size else 0.0
    if asym > SYMMETRY_RTOL * max(scale, 1.0):
        raise ValueError(f"matrix is not symmetric (max |C - C^T| = {asym:.3g})")
    lam, vec = np.linalg.eigh(0.5 * (c + c.T))
    lam_max = float(lam[-1]) if lam.size else 0.0
    floor = -NEG_EIG_RTOL * max(lam_max, 0.0) - 64 * np.finfo(float).eps * scale
    if lam.size and lam[0] < floor:
        raise ValueError(
            f"matrix is not positive semidefinite: eigenvalue {lam[0]:.3g} "
            f"vs largest {lam_max:.3g}")
    # eigenvalues within round-off of zero are zero; their square roots
    # would otherwise inject sqrt(eps)-sized noise
    noise = lam.size * np.finfo(float).eps * max(lam_max, 0.0)
    return np.where(lam > noise, lam, 0.0), vec


def sqrtm_psd(c: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via a clamped eigendecomposition.

    Eigenvalues at or below ``n * eps * lambda_max`` are round-off and are
    set to zero before the square root. An eigenvalue below
    ``-1e-6 * lambda_max`` marks an invalid covariance and raises
    ``ValueError``.

    >>> sqrtm_psd(np.diag([4.0, 9.0]))
    array([[2., 0.],
           [0., 3.]])
    """
    lam, vec = _psd_eigh(c)
    s = (vec * np.sqrt(lam)) @ vec.T
    return 0.5 * (s + s.T)


def _clamp(fd: float, scale: float) -> float:
    if fd < 0.0:
        if fd < -CLAMP_RTOL * scale:
            raise FloatingPointError(
                f"Fréchet distance {fd:.6g} is negative beyond round-off (scale {scale:.6g})")
        return 0.0
    return fd


def _pairwise_sum(x: np.ndarray) -> float:
    # np.add.reduce on a contiguous 1-d array uses pairwise summation
    return float(np.add.reduce(np.ascontiguousarray(x, dtype=np.float64).ravel()))


def frechet_distance(g1: GaussianSummary, g2: GaussianSummary) -> float:
    """Fréchet distance between two Gaussian summaries.

    Raises ``ValueError`` on a dimension mismatch and ``FloatingPointError``
    when the result is negative beyond ``1e-8 * (Tr C1 + Tr C2 + 1)``.
    """
    mu1, mu2 = np.asarray(g1.mean, np.float64), np.asarray(g2.mean, np.float64)
    c1, c2 = np.asarray(g1.covariance, np.float64), np.asarray(g2.covariance, np.float64)
    if mu1.shape != mu2.shape or c1.shape != c2.shape or c1.shape != mu1.shape * 2:
        raise ValueError(f"dimension mismatch: {mu1.shape[0]} vs {mu2.shape[0]}")
    diff = mu1 - mu2
    mean_term = _pairwise_sum(diff * diff)
    tr1 = _pairwise_sum(np.diagonal(c1))
    tr2 = _pairwise_sum(np.diagonal(c2))
    s1 = sqrtm_psd(c1)
    s2 = s1 if c2 is c1 or np.array_equal(c1, c2) else sqrtm_psd(c2)
    cross = _pairwise_sum(np.linalg.svd(s1 @ s2, compute_uv=False))
    return _clamp(mean_term + tr1 + tr2 - 2.0 * cross, tr1 + tr2 + 1.0)


def _frechet_from_rows(x1: np.ndarray, x2: np.ndarray) -> float:
    # Tr((C1 C2)^{1/2}) = nuclear norm of Z1 Z2^T, with Z = centered / sqrt(W - 1)
    mu1, z1 = _centered(x1)
    mu2, z2 = _centered(x2)
    z1 /= np.sqrt(z1.shape[0] - 1)
    z2 /= np.sqrt(z2.shape[0] - 1)
    diff = mu1 - mu2
    mean_term = _pairwise_sum(diff * diff)
    tr1 = _pairwise_sum(z1 * z1)
    tr2 = _pairwise_sum(z2 * z2)
    cross = _pairwise_sum(np.linalg.svd(z1 @ z2.T, compute_uv=False))
    return _clamp(mean_term + tr1 + tr2 - 2.0 * cross, tr1 + tr2 + 1.0)


def fdd(d1: Dataset, d2: Dataset, config: FeatureConfig = FeatureConfig(),
        ridge: float = 0.0, method: str = "auto") -> float:
    """Fréchet Domain Distance between two datasets under one descriptor config.

    With the default config (positive evidence, K=64, mean aggregation) this
    is FDD_64.

    Parameters
    ----------
    method : {"auto", "covariance", "gram"}
        ``covariance`` fits both Gaussians explicitly. ``gram`` works from
        the cross-Gram matrix of centered rows and cannot apply a ridge.
        ``auto`` picks ``gram`` when the descriptor dimension exceeds the
        total slide count and no ridge is set.
    """
    m1 = build_feature_matrix(d1, config)
    m2 = m1 if d2 is d1 else build_feature_matrix(d2, config)
    return fdd_from_matrices(m1, m2, ridge=ridge, method=method)


def fdd_from_matrices(m1, m2, ridge: float = 0.0, method: str = "auto") -> float:
    r1 = m1.rows if isinstance(m1, FeatureMatrix) else np.asarray(m1, np.float64)
    r2 = m2.rows if isinstance(m2, FeatureMatrix) else np.asarray(m2, np.float64)
    if r1.shape[1] != r2.shape[1]:
        raise ValueError(f"descriptor dimension mismatch: {r1.shape[1]} vs {r2.shape[1]}")
    if method == "auto":
        method = "gram" if not ridge and r1.shape[1] > r1.shape[0] + r2.shape[0] else "covariance"
    if method == "gram":
        if ridge:
            raise ValueError("the gram method does not support a ridge")
        return _frechet_from_rows(r1, r2)
    if method != "covariance":
        raise ValueError(f"unknown method {method!r}")
    return frechet_distance(gaussian_fit(r1, ridge), gaussian_fit(r2, ridge))


def save_summary(g: GaussianSummary, path) -> Path:
    """Write ``g`` as ``<path>`` (JSON header) plus ``<path>.f64``.

    The binary sidecar is little-endian binary64: the D means followed by the
    D x D covariance in row-major order.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    blob = path.with_name(path.name + ".f64")
    np.concatenate([g.mean.astype("<f8"), g.covariance.astype("<f8").ravel()]).tofile(blob)
    doc = {
        "kind": "gaussian_summary",
        "dataset_id": g.dataset_id,
        "model_id": g.model_id,
        "dim": g.dim,
        "sample_count": g.sample_count,
        "config": g.config.as_dict() if g.config is not None else None,
        "data": blob.name,
        "dtype": "<f8",
        "layout": "mean[dim] then covariance[dim, dim] row-major",
    }
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def load_summary(path) -> GaussianSummary:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("kind") != "gaussian_summary":
        raise ValueError(f"{path} is not a Gaussian summary")
    dim = int(doc["dim"])
    blob = path.parent / doc["data"]
    if not blob.is_file():
        raise FileNotFoundError(f"missing summary data file {blob}")
    expected = 8 * (dim + dim * dim)
    if blob.stat().st_size != expected:
        raise ValueError(f"{blob}: byte count {blob.stat().st_size} != expected {expected}")
    flat = np.fromfile(blob, dtype="<f8")
    cfg = FeatureConfig.from_dict(doc["config"]) if doc.get("config") else None
    return GaussianSummary(flat[:dim].copy(), flat[dim:].reshape(dim, dim).copy(),
                           int(doc["sample_count"]), cfg, doc.get("dataset_id", ""),
                           doc.get("model_id", ""))


def is_summary_file(path) -> bool:
    try:
        return json.loads(Path(path).read_text()).get("kind") == "gaussian_summary"
    except (OSError, ValueError, AttributeError):
        return False
