import json

import numpy as np
import pytest

from milshift.store import (ManifestError, datasets_equal, load_manifest, validate_dataset,
                            write_dataset)
from milshift.synth import SynthConfig, generate_dataset

from conftest import make_bag, make_dataset, random_dataset


def _write_raw(tmp_path, softmax=(0.4, 0.6), n_declared=3, n_written=3, j=4, extra=None):
    rng = np.random.default_rng(1)
    wsis = []
    for i in range(2):
        sid = f"slide{i}"
        rng.standard_normal((n_written, j)).astype("<f4").tofile(tmp_path / f"{sid}.feat")
        rng.standard_normal(n_declared).astype("<f4").tofile(tmp_path / f"{sid}.att")
        wsis.append({"id": sid, "label": i % 2, "num_patches": n_declared,
                     "features": f"{sid}.feat", "attention": f"{sid}.att",
                     "softmax": list(softmax)})
    doc = {"dataset_id": "toy", "model_id": "m", "feature_dim": j, "wsis": wsis}
    if extra:
        extra(doc, tmp_path)
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(doc))
    return path


def test_load_valid_manifest(tmp_path):
    d = load_manifest(_write_raw(tmp_path))
    assert len(d) == 2
    assert d.feature_dim == 4
    assert d.bags[0].patch_features.shape == (3, 4)
    assert d.bags[1].label == 1


def test_byte_count_mismatch_names_slide(tmp_path):
    path = _write_raw(tmp_path, n_declared=3, n_written=2)
    with pytest.raises(ManifestError) as err:
        load_manifest(path)
    assert err.value.slide_id == "slide0"
    assert err.value.field == "features"
    assert "byte count" in str(err.value)


def test_softmax_not_normalized(tmp_path):
    with pytest.raises(ManifestError, match="sum to 1") as err:
        load_manifest(_write_raw(tmp_path, softmax=(0.6, 0.6)))
    assert err.value.field == "softmax"


def test_missing_file(tmp_path):
    path = _write_raw(tmp_path)
    (tmp_path / "slide1.att").unlink()
    with pytest.raises(ManifestError, match="missing file") as err:
        load_manifest(path)
    assert err.value.slide_id == "slide1"


def test_non_finite_value(tmp_path):
    path = _write_raw(tmp_path)
    arr = np.fromfile(tmp_path / "slide0.feat", dtype="<f4")
    arr[5] = np.nan
    arr.tofile(tmp_path / "slide0.feat")
    with pytest.raises(ManifestError, match="non-finite") as err:
        load_manifest(path)
    assert err.value.slide_id == "slide0"


def test_inconsistent_ensemble_size(tmp_path):
    def extra(doc, _):
        doc["wsis"][0]["ensemble_softmax"] = [[0.5, 0.5], [0.2, 0.8]]
        doc["wsis"][1]["ensemble_softmax"] = [[0.5, 0.5]]
    with pytest.raises(ManifestError, match="inconsistent ensemble_size") as err:
        load_manifest(_write_raw(tmp_path, extra=extra))
    assert err.value.slide_id == "slide1"


def test_penultimate_size_checked(tmp_path):
    def extra(doc, root):
        doc["penultimate_dim"] = 5
        for i, w in enumerate(doc["wsis"]):
            np.zeros(5 if i == 0 else 4, "<f4").tofile(root / f"p{i}")
            w["penultimate"] = f"p{i}"
    with pytest.raises(ManifestError) as err:
        load_manifest(_write_raw(tmp_path, extra=extra))
    assert (err.value.slide_id, err.value.field) == ("slide1", "penultimate")


def test_single_slide_rejected(tmp_path):
    def extra(doc, _):
        doc["wsis"] = doc["wsis"][:1]
    with pytest.raises(ManifestError, match=">= 2 slides"):
        load_manifest(_write_raw(tmp_path, extra=extra))


def test_round_trip_bit_exact(tmp_path, rng):
    d = random_dataset(rng, w=7)
    d2 = load_manifest(write_dataset(d, tmp_path / "out"))
    assert datasets_equal(d, d2)
    # deterministic reload
    assert datasets_equal(d2, load_manifest(tmp_path / "out" / "manifest.json", threads=4))


def test_round_trip_synthetic(tmp_path):
    d = generate_dataset(SynthConfig(num_slides=12, patches_per_slide=(5, 9), feature_dim=6,
                                     evidence_dims=(0, 1), label_noise=0.2))
    d2 = load_manifest(write_dataset(d, tmp_path))
    assert datasets_equal(d, d2)


def test_unlabeled_bags_allowed(tmp_path):
    bags = [make_bag("a", n=2), make_bag("b", n=3)]
    d = load_manifest(write_dataset(make_dataset(bags), tmp_path))
    assert [b.label for b in d.bags] == [None, None]
    assert "label" not in json.loads((tmp_path / "manifest.json").read_text())["wsis"][0]


def test_validate_dataset_reports_violations():
    good = make_dataset([make_bag("a"), make_bag("b")])
    assert validate_dataset(good) == []

    short = make_bag("b")
    short = type(short)(short.slide_id, short.patch_features, short.attention[:-1], short.softmax)
    v = validate_dataset(make_dataset([make_bag("a"), short]))
    assert len(v) == 1 and v[0].slide_id == "b" and v[0].field == "attention"

    feats = np.ones((3, 4), np.float32)
    feats[1, 2] = np.nan
    v = validate_dataset(make_dataset([make_bag("a", features=feats), make_bag("b")]))
    assert len(v) == 1 and v[0].slide_id == "a" and v[0].field == "patch_features"
