import json

import numpy as np
import pytest

from diffseg.phantom import (
    LABEL_NEG,
    LABEL_POS,
    DatasetManifest,
    PhantomConfig,
    build_dataset,
    generate_phantom,
    load_slice,
)
from scipy import ndimage


def test_negative_has_no_gt_and_two_lung_components():
    s = generate_phantom(seed=7, size=64, fibrotic=False, severity=0)
    assert s.gt_mask is None
    assert s.label == LABEL_NEG
    _, n = ndimage.label(s.lung_mask)
    assert n == 2


def test_determinism_bit_identical():
    a = generate_phantom(7, 64, True, 0.5)
    b = generate_phantom(7, 64, True, 0.5)
    assert np.array_equal(a.pixels, b.pixels)
    assert np.array_equal(a.gt_mask, b.gt_mask)


def test_severity_monotone_lesion_area():
    # oracle: count gt pixels from the generator itself
    hi = generate_phantom(7, 64, True, 0.8).gt_mask.sum()
    lo = generate_phantom(7, 64, True, 0.2).gt_mask.sum()
    assert hi > lo


@pytest.mark.parametrize("seed", range(10))
def test_invariants_random_seeds(seed):
    fib = seed % 2 == 0
    s = generate_phantom(seed, 64, fib, 0.5 if fib else 0.0)
    assert s.pixels.min() >= -1.0 and s.pixels.max() <= 1.0
    if s.gt_mask is not None:
        assert not (s.gt_mask.astype(bool) & ~s.lung_mask.astype(bool)).any()
        assert s.gt_mask.sum() >= 1
        assert s.label == LABEL_POS


def test_size_and_severity_validation():
    with pytest.raises(ValueError):
        generate_phantom(1, 31, False, 0)
    with pytest.raises(ValueError):
        generate_phantom(1, 64, True, 1.5)
    with pytest.raises(ValueError):
        generate_phantom(1, 64, True, 0.0)


def test_twins_share_anatomy():
    neg = generate_phantom(3, 64, False, 0)
    pos = generate_phantom(3, 64, True, 0.5)
    assert np.array_equal(neg.lung_mask, pos.lung_mask)
    outside = ~pos.gt_mask.astype(bool)
    assert np.allclose(neg.pixels[outside], pos.pixels[outside])


@pytest.fixture(scope="module")
def small_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("phantoms")
    cfg = PhantomConfig(n_positive=20, n_negative=20, size=64, seed=11)
    manifest = build_dataset(cfg, out)
    return cfg, manifest, out


def test_build_dataset_test_fraction(small_dataset):
    _, manifest, _ = small_dataset
    # 20% of positives held out for test
    assert len(manifest.select(split="test", label=LABEL_POS)) == 4


def test_build_dataset_splits_partition(small_dataset):
    _, manifest, _ = small_dataset
    ids_by_split = [set(manifest.ids(split=s)) for s in ("train", "val", "test")]
    assert not (ids_by_split[0] & ids_by_split[1])
    assert not (ids_by_split[0] & ids_by_split[2])
    assert not (ids_by_split[1] & ids_by_split[2])
    assert sum(len(s) for s in ids_by_split) == len(manifest.entries) == 40


def test_build_dataset_counts_sum(small_dataset):
    _, manifest, _ = small_dataset
    assert sum(v for k, v in manifest.counts.items() if k != "total") == manifest.counts["total"]


def test_build_dataset_deterministic(small_dataset, tmp_path):
    cfg, manifest, _ = small_dataset
    again = build_dataset(cfg, tmp_path)
    assert manifest.entries == again.entries


def test_roundtrip_through_png(small_dataset):
    _, manifest, out = small_dataset
    entry = manifest.select(label=LABEL_POS)[0]
    sl = load_slice(entry, out, with_gt=True)
    regen = generate_phantom(entry["seed"], 64, True, entry["severity"])
    # 16-bit quantization bound
    assert np.max(np.abs(sl.pixels - regen.pixels)) <= 2.0 / 65535.0 + 1e-12
    assert np.array_equal(sl.gt_mask, regen.gt_mask)


def test_build_dataset_rejects_tiny_class(tmp_path):
    with pytest.raises(ValueError):
        build_dataset(PhantomConfig(n_positive=0, n_negative=20), tmp_path)


def test_manifest_json_roundtrip(small_dataset, tmp_path):
    _, manifest, out = small_dataset
    loaded = DatasetManifest.load(out / "manifest.json")
    assert loaded.entries == manifest.entries
    assert loaded.split_ratios == manifest.split_ratios
