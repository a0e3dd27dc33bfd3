import numpy as np
import pytest

from milshift.store import Dataset, PatchBag


def make_bag(slide_id="s0", features=None, attention=None, softmax=(0.5, 0.5), label=None,
             penultimate=None, ensemble=None, n=3, j=4, rng=None):
    rng = rng if rng is not None else np.random.default_rng(0)
    if features is None:
        features = rng.standard_normal((n, j))
    features = np.asarray(features, dtype=np.float32)
    if attention is None:
        attention = rng.standard_normal(features.shape[0])
    return PatchBag(
        slide_id=slide_id,
        patch_features=features,
        attention=np.asarray(attention, dtype=np.float32),
        softmax=np.asarray(softmax, dtype=np.float64),
        label=label,
        penultimate=None if penultimate is None else np.asarray(penultimate, dtype=np.float32),
        ensemble_softmax=None if ensemble is None else np.asarray(ensemble, dtype=np.float64),
    )


def make_dataset(bags, dataset_id="d", model_id="m"):
    bags = tuple(bags)
    return Dataset(dataset_id, model_id, bags[0].feature_dim, bags)


def random_dataset(rng, w=20, n_range=(3, 12), j=4, dataset_id="d", shift=0.0, scale=1.0,
                   model_id="m"):
    bags = []
    for i in range(w):
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        p = float(rng.uniform(0.05, 0.95))
        bags.append(make_bag(
            f"slide{i}",
            features=shift + scale * rng.standard_normal((n, j)),
            attention=rng.standard_normal(n),
            softmax=(1.0 - p, p),
            label=int(rng.integers(0, 2)),
            penultimate=shift + rng.standard_normal(j),
            ensemble=[[1.0 - q, q] for q in rng.uniform(0.05, 0.95, 3)],
            rng=rng,
        ))
    return make_dataset(bags, dataset_id, model_id)


def descriptor_dataset(rows, dataset_id="g", model_id="m"):
    """Dataset whose mean_patch descriptors are exactly ``rows`` (one patch per slide)."""
    rows = np.asarray(rows, dtype=np.float32)
    bags = tuple(
        PatchBag(f"s{i}", rows[i:i + 1], np.zeros(1, np.float32), np.array([0.5, 0.5]))
        for i in range(rows.shape[0]))
    return Dataset(dataset_id, model_id, rows.shape[1], bags)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
