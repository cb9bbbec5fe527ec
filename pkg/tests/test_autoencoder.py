import dataclasses

import numpy as np
import pytest
import torch

from diffseg.autoencoder import (
    DiffAECheckpoint,
    DiffAEConfig,
    encode,
    encode_batch,
    psnr,
    reconstruct,
    train_diffae,
)
from diffseg.phantom import PhantomConfig, build_dataset, load_slice

torch.set_num_threads(1)

TINY = DiffAEConfig(base_channels=8, steps=60, batch_size=4, val_every=30,
                    substeps=10, seed=3)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    manifest = build_dataset(PhantomConfig(n_positive=10, n_negative=10, size=64, seed=1), root)
    return manifest, root


@pytest.fixture(scope="module")
def trained(tiny_data):
    manifest, root = tiny_data
    return train_diffae(manifest, root, TINY)


def test_checkpoint_roundtrip_is_byte_identical(trained, tmp_path):
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    trained.save(p1)
    DiffAECheckpoint.load(p1).save(p2)
    with np.load(p1) as a, np.load(p2) as b:
        assert sorted(a.files) == sorted(b.files)
        for k in a.files:
            assert a[k].tobytes() == b[k].tobytes(), k


def test_checkpoint_header_survives_roundtrip(trained, tmp_path):
    p = tmp_path / "c.npz"
    trained.save(p)
    again = DiffAECheckpoint.load(p)
    assert again.config == trained.config
    assert again.step == trained.step
    assert again.config_hash() == trained.config_hash()


def test_encode_shape_and_determinism(trained):
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, size=(64, 64))
    z1, z2 = encode(x, trained), encode(x, trained)
    assert z1.shape == (TINY.latent_dim,)
    assert np.array_equal(z1, z2)
    zb = encode_batch(np.stack([x, x]), trained)
    assert zb.shape == (2, TINY.latent_dim)
    # batched conv may differ from the single-image path by a few ulp
    assert np.allclose(zb[0], z1, atol=1e-5)
    assert np.array_equal(zb[0], zb[1])


def test_encode_rejects_wrong_size(trained):
    with pytest.raises(ValueError, match="64x64"):
        encode(np.zeros((32, 32)), trained)


def test_training_loss_decreases(trained):
    tr = [r["train_loss"] for r in trained.loss_records if "train_loss" in r]
    assert len(tr) >= 2
    assert np.mean(tr[-2:]) < tr[0]


def test_loss_records_cover_training(trained):
    vals = [r for r in trained.loss_records if "val_loss" in r]
    assert vals and vals[-1]["step"] == TINY.steps
    assert trained.step == TINY.steps


def test_training_is_seed_deterministic(tiny_data, tmp_path):
    manifest, root = tiny_data
    cfg = dataclasses.replace(TINY, steps=20, val_every=20)
    a = train_diffae(manifest, root, cfg)
    b = train_diffae(manifest, root, cfg)
    pa, pb = tmp_path / "a.npz", tmp_path / "b.npz"
    a.save(pa)
    b.save(pb)
    with np.load(pa) as na, np.load(pb) as nb:
        for k in na.files:
            assert na[k].tobytes() == nb[k].tobytes(), k


def test_reconstruction_psnr_after_short_training(tiny_data):
    # the deterministic invert/decode round trip cancels most model error,
    # so even a briefly trained model should clear 30 dB
    manifest, root = tiny_data
    cfg = dataclasses.replace(TINY, steps=200, batch_size=8, val_every=100)
    ck = train_diffae(manifest, root, cfg)
    e = manifest.select(split="train")[0]
    x = load_slice(e, root).pixels
    assert psnr(reconstruct(x, ck), x) >= 30.0


def test_train_requires_two_slices(tmp_path):
    manifest = build_dataset(PhantomConfig(n_positive=10, n_negative=10, size=64, seed=2),
                             tmp_path)
    # drop the train split down to one entry
    keep = manifest.select(split="train")[0]["id"]
    for e in manifest.entries:
        if e["split"] == "train" and e["id"] != keep:
            e["split"] = "test"
    with pytest.raises(ValueError, match="2 training slices"):
        train_diffae(manifest, tmp_path, TINY)


def test_psnr_basic_properties():
    x = np.zeros((8, 8))
    assert psnr(x, x) == float("inf")
    y = x + 0.2  # mse 0.04, range 2 -> 10*log10(4/0.04) = 20 dB
    assert abs(psnr(x, y) - 20.0) < 1e-9
