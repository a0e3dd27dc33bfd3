"""On-disk format for exported MIL features and its in-memory model.

A dataset lives in a directory holding one JSON manifest plus raw binary
files. Every binary file is little-endian IEEE-754 binary32, row-major, with
no header; its shape comes from the manifest:

* ``features``: ``num_patches x feature_dim`` patch embeddings
* ``attention``: ``num_patches`` unnormalized attention scores
* ``penultimate`` (optional): ``penultimate_dim`` slide-level features

Manifest layout::

    {
      "dataset_id": "camelyon", "model_id": "fold0",
      "feature_dim": 64, "penultimate_dim": 64, "ensemble_size": 4,
      "wsis": [
        {"id": "s0", "label": 1, "num_patches": 120,
         "features": "s0.features.f32", "attention": "s0.attention.f32",
         "softmax": [0.2, 0.8], "penultimate": "s0.penultimate.f32",
         "ensemble_softmax": [[0.3, 0.7], ...]},
        ...
      ]
    }

``label`` may be omitted for unlabeled slides. Paths are relative to the
manifest's directory.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "ManifestError",
    "PatchBag",
    "Dataset",
    "Violation",
    "load_manifest",
    "write_dataset",
    "validate_dataset",
    "validate_bag",
]

STORAGE_DTYPE = np.dtype("<f4")
SOFTMAX_ATOL = 1e-5


class ManifestError(ValueError):
    """A manifest or one of its binary files is malformed.

    ``slide_id`` and ``field`` name the offending entry when known.
    """

    def __init__(self, message: str, slide_id: Optional[str] = None,
                 field: Optional[str] = None, path: Optional[str] = None):
        self.slide_id = slide_id
        self.field = field
        self.path = path
        where = []
        if path is not None:
            where.append(f"file {path}")
        if slide_id is not None:
            where.append(f"slide {slide_id!r}")
        if field is not None:
            where.append(f"field {field!r}")
        prefix = f"[{', '.join(where)}] " if where else ""
        super().__init__(prefix + message)


@dataclass(frozen=True, eq=False)
class PatchBag:
    """Patch embeddings, attention and model outputs for one slide."""

    slide_id: str
    patch_features: np.ndarray  # (N, J)
    attention: np.ndarray  # (N,)
    softmax: np.ndarray  # (2,)
    label: Optional[int] = None
    penultimate: Optional[np.ndarray] = None  # (P,)
    ensemble_softmax: Optional[np.ndarray] = None  # (E, 2)

    @property
    def num_patches(self) -> int:
        return int(self.patch_features.shape[0])

    @property
    def feature_dim(self) -> int:
        return int(self.patch_features.shape[1])


@dataclass(frozen=True, eq=False)
class Dataset:
    """Ordered collection of slides scored by one model."""

    dataset_id: str
    model_id: str
    feature_dim: int
    bags: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if not isinstance(self.bags, tuple):
            object.__setattr__(self, "bags", tuple(self.bags))

    def __len__(self) -> int:
        return len(self.bags)

    @property
    def penultimate_dim(self) -> Optional[int]:
        dims = {b.penultimate.shape[0] for b in self.bags if b.penultimate is not None}
        return dims.pop() if len(dims) == 1 else None

    @property
    def ensemble_size(self) -> Optional[int]:
        sizes = {b.ensemble_softmax.shape[0] for b in self.bags
                 if b.ensemble_softmax is not None}
        return sizes.pop() if len(sizes) == 1 else None

    def labeled(self) -> list:
        return [b for b in self.bags if b.label is not None]


@dataclass(frozen=True)
class Violation:
    slide_id: Optional[str]
    field: str
    message: str

    def __str__(self) -> str:
        who = f"slide {self.slide_id!r}" if self.slide_id is not None else "dataset"
        return f"{who}, field {self.field!r}: {self.message}"


def _check_probabilities(p: np.ndarray) -> Optional[str]:
    if not np.all(np.isfinite(p)):
        return "non-finite probability"
    if np.any(p < 0.0) or np.any(p > 1.0):
        return f"probabilities outside [0, 1]: {p.tolist()}"
    if abs(float(np.sum(p)) - 1.0) > SOFTMAX_ATOL:
        return f"probabilities do not sum to 1: {p.tolist()}"
    return None


def validate_bag(bag: PatchBag) -> list:
    """Return the invariant violations of a single bag."""
    out = []
    sid = bag.slide_id
    feats = np.asarray(bag.patch_features)
    if feats.ndim != 2 or feats.shape[0] < 1 or feats.shape[1] < 1:
        out.append(Violation(sid, "patch_features",
                             f"expected a non-empty N x J matrix, got shape {feats.shape}"))
    elif not np.all(np.isfinite(feats)):
        out.append(Violation(sid, "patch_features", "non-finite value"))
    att = np.asarray(bag.attention)
    n = feats.shape[0] if feats.ndim == 2 else None
    if att.ndim != 1 or (n is not None and att.shape[0] != n):
        out.append(Violation(sid, "attention",
                             f"length {att.shape} does not match num_patches {n}"))
    elif not np.all(np.isfinite(att)):
        out.append(Violation(sid, "attention", "non-finite value"))
    sm = np.asarray(bag.softmax, dtype=np.float64)
    if sm.shape != (2,):
        out.append(Violation(sid, "softmax", f"expected 2 probabilities, got shape {sm.shape}"))
    else:
        msg = _check_probabilities(sm)
        if msg:
            out.append(Violation(sid, "softmax", msg))
    if bag.label is not None and bag.label not in (0, 1):
        out.append(Violation(sid, "label", f"label must be 0 or 1, got {bag.label!r}"))
    if bag.penultimate is not None:
        pen = np.asarray(bag.penultimate)
        if pen.ndim != 1 or pen.shape[0] < 1:
            out.append(Violation(sid, "penultimate", f"expected a vector, got shape {pen.shape}"))
        elif not np.all(np.isfinite(pen)):
            out.append(Violation(sid, "penultimate", "non-finite value"))
    if bag.ensemble_softmax is not None:
        ens = np.asarray(bag.ensemble_softmax, dtype=np.float64)
        if ens.ndim != 2 or ens.shape[1] != 2 or ens.shape[0] < 1:
            out.append(Violation(sid, "ensemble_softmax",
                                 f"expected an E x 2 matrix, got shape {ens.shape}"))
        else:
            for i, row in enumerate(ens):
                msg = _check_probabilities(row)
                if msg:
                    out.append(Violation(sid, "ensemble_softmax", f"member {i}: {msg}"))
    return out


def validate_dataset(d: Dataset) -> list:
    """List every invariant violation in ``d``; empty iff the dataset is valid."""
    out = []
    if len(d.bags) < 2:
        out.append(Violation(None, "wsis", f"need >= 2 slides, got {len(d.bags)}"))
    pen_dims = set()
    ens_sizes = set()
    for bag in d.bags:
        out.extend(validate_bag(bag))
        feats = np.asarray(bag.patch_features)
        if feats.ndim == 2 and feats.shape[1] != d.feature_dim:
            out.append(Violation(bag.slide_id, "features",
                                 f"feature_dim {feats.shape[1]} != dataset feature_dim {d.feature_dim}"))
        if bag.penultimate is not None:
            pen_dims.add(np.asarray(bag.penultimate).shape[0])
            if len(pen_dims) > 1:
                out.append(Violation(bag.slide_id, "penultimate",
                                     f"inconsistent penultimate_dim {sorted(pen_dims)}"))
                pen_dims = {np.asarray(bag.penultimate).shape[0]}
        if bag.ensemble_softmax is not None:
            ens_sizes.add(np.asarray(bag.ensemble_softmax).shape[0])
            if len(ens_sizes) > 1:
                out.append(Violation(bag.slide_id, "ensemble_softmax",
                                     f"inconsistent ensemble_size {sorted(ens_sizes)}"))
                ens_sizes = {np.asarray(bag.ensemble_softmax).shape[0]}
    return out


def _read_f32(path: Path, expected: int, slide_id: str, name: str) -> np.ndarray:
    if not path.is_file():
        raise ManifestError("missing file", slide_id, name, str(path))
    nbytes = path.stat().st_size
    if nbytes != 4 * expected:
        raise ManifestError(
            f"byte count {nbytes} != expected {4 * expected}", slide_id, name, str(path))
    arr = np.fromfile(path, dtype=STORAGE_DTYPE)
    if not np.all(np.isfinite(arr)):
        raise ManifestError("non-finite value", slide_id, name, str(path))
    return arr


def _require(entry: dict, key: str, slide_id: Optional[str]):
    if key not in entry:
        raise ManifestError("required field missing", slide_id, key)
    return entry[key]


def _load_bag(entry: dict, root: Path, feature_dim: int, penultimate_dim: Optional[int],
              ensemble_size: Optional[int]) -> PatchBag:
    sid = str(_require(entry, "id", None))
    n = _require(entry, "num_patches", sid)
    if not isinstance(n, int) or isinstance(n, bool) or n < 1:
        raise ManifestError(f"num_patches must be a positive integer, got {n!r}", sid, "num_patches")

    label = entry.get("label")
    if label is not None and label not in (0, 1):
        raise ManifestError(f"label must be 0 or 1, got {label!r}", sid, "label")

    softmax = np.asarray(_require(entry, "softmax", sid), dtype=np.float64)
    if softmax.shape != (2,):
        raise ManifestError(f"expected [p0, p1], got {softmax.tolist()}", sid, "softmax")
    msg = _check_probabilities(softmax)
    if msg:
        raise ManifestError(msg, sid, "softmax")

    feats = _read_f32(root / _require(entry, "features", sid), n * feature_dim, sid, "features")
    att = _read_f32(root / _require(entry, "attention", sid), n, sid, "attention")

    pen = None
    if entry.get("penultimate") is not None:
        if penultimate_dim is None:
            raise ManifestError("penultimate file given but manifest has no penultimate_dim",
                                sid, "penultimate")
        pen = _read_f32(root / entry["penultimate"], penultimate_dim, sid, "penultimate")

    ens = None
    if entry.get("ensemble_softmax") is not None:
        ens = np.asarray(entry["ensemble_softmax"], dtype=np.float64)
        if ens.ndim != 2 or ens.shape[1] != 2:
            raise ManifestError(f"expected a list of [p0, p1] pairs, got shape {ens.shape}",
                                sid, "ensemble_softmax")
        if ensemble_size is not None and ens.shape[0] != ensemble_size:
            raise ManifestError(f"{ens.shape[0]} members != ensemble_size {ensemble_size}",
                                sid, "ensemble_softmax")
        for i, row in enumerate(ens):
            msg = _check_probabilities(row)
            if msg:
                raise ManifestError(f"member {i}: {msg}", sid, "ensemble_softmax")

    return PatchBag(
        slide_id=sid,
        patch_features=feats.reshape(n, feature_dim),
        attention=att,
        softmax=softmax,
        label=label,
        penultimate=pen,
        ensemble_softmax=ens,
    )


def load_manifest(path, threads: int = 1) -> Dataset:
    """Load and validate a dataset manifest.

    Parameters
    ----------
    path : str or Path
        Manifest JSON file.
    threads : int
        Number of worker threads used to read slide files.

    Returns
    -------
    Dataset
        Patch features and attention stay binary32 as stored; downstream
        numerics promote to binary64.

    Raises
    ------
    ManifestError
        On a missing file, byte-count mismatch, non-finite value, bad
        softmax, or inconsistent dimensions. The message names the slide and
        field.
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError("manifest not found", path=str(path))
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"invalid JSON: {exc}", path=str(path)) from None
    root = path.parent

    for key in ("dataset_id", "model_id", "feature_dim", "wsis"):
        if key not in doc:
            raise ManifestError("required field missing", field=key, path=str(path))
    feature_dim = doc["feature_dim"]
    if not isinstance(feature_dim, int) or feature_dim < 1:
        raise ManifestError(f"feature_dim must be a positive integer, got {feature_dim!r}",
                            field="feature_dim", path=str(path))
    penultimate_dim = doc.get("penultimate_dim")
    ensemble_size = doc.get("ensemble_size")
    entries = doc["wsis"]

    def load(entry):
        return _load_bag(entry, root, feature_dim, penultimate_dim, ensemble_size)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            bags = list(pool.map(load, entries))
    else:
        bags = [load(e) for e in entries]

    seen = set()
    for bag in bags:
        if bag.slide_id in seen:
            raise ManifestError("duplicate slide id", bag.slide_id, "id")
        seen.add(bag.slide_id)

    d = Dataset(str(doc["dataset_id"]), str(doc["model_id"]), feature_dim, tuple(bags))
    problems = validate_dataset(d)
    if problems:
        v = problems[0]
        raise ManifestError(v.message, v.slide_id, v.field, str(path))
    return d


def _safe_name(slide_id: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in slide_id)


def write_dataset(d: Dataset, directory, manifest_name: str = "manifest.json") -> Path:
    """Write ``d`` as a manifest plus binary32 files; returns the manifest path.

    Values already stored as binary32 round-trip bit-exactly.
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    pen_dim = d.penultimate_dim
    ens_size = d.ensemble_size
    wsis = []
    for i, bag in enumerate(d.bags):
        stem = f"{i:05d}_{_safe_name(bag.slide_id)}"
        entry = {"id": bag.slide_id}
        if bag.label is not None:
            entry["label"] = int(bag.label)
        entry["num_patches"] = bag.num_patches
        entry["features"] = f"{stem}.features.f32"
        entry["attention"] = f"{stem}.attention.f32"
        np.ascontiguousarray(bag.patch_features, dtype=STORAGE_DTYPE).tofile(
            directory / entry["features"])
        np.ascontiguousarray(bag.attention, dtype=STORAGE_DTYPE).tofile(
            directory / entry["attention"])
        entry["softmax"] = [float(x) for x in bag.softmax]
        if bag.penultimate is not None:
            entry["penultimate"] = f"{stem}.penultimate.f32"
            np.ascontiguousarray(bag.penultimate, dtype=STORAGE_DTYPE).tofile(
                directory / entry["penultimate"])
        if bag.ensemble_softmax is not None:
            entry["ensemble_softmax"] = [[float(x) for x in row] for row in bag.ensemble_softmax]
        wsis.append(entry)

    doc = {"dataset_id": d.dataset_id, "model_id": d.model_id, "feature_dim": d.feature_dim}
    if pen_dim is not None:
        doc["penultimate_dim"] = pen_dim
    if ens_size is not None:
        doc["ensemble_size"] = ens_size
    doc["wsis"] = wsis
    out = directory / manifest_name
    out.write_text(json.dumps(doc, indent=1) + "\n")
    return out


def datasets_equal(a: Dataset, b: Dataset) -> bool:
    """Bit-exact comparison of two datasets (array contents and metadata)."""
    if (a.dataset_id, a.model_id, a.feature_dim, len(a.bags)) != \
            (b.dataset_id, b.model_id, b.feature_dim, len(b.bags)):
        return False

    def same(x, y):
        if x is None or y is None:
            return x is None and y is None
        x, y = np.asarray(x), np.asarray(y)
        return x.shape == y.shape and x.dtype == y.dtype and x.tobytes() == y.tobytes()

    for p, q in zip(a.bags, b.bags):
        if p.slide_id != q.slide_id or p.label != q.label:
            return False
        for name in ("patch_features", "attention", "softmax", "penultimate", "ensemble_softmax"):
            if not same(getattr(p, name), getattr(q, name)):
                return False
    return True


def as_f32(x: Sequence) -> np.ndarray:
    return np.asarray(x, dtype=STORAGE_DTYPE)


__all__ += ["datasets_equal", "as_f32"]
