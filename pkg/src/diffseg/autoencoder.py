"""Diffusion autoencoder: training, checkpointing, encoding, reconstruction.

The checkpoint file is a single ``.npz`` container holding a JSON header
(version, config hash, latent dim, schedule) plus the named parameter arrays
of both networks; loading then saving reproduces identical bytes per array.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import ddim
from .io_utils import sha256_json
from .nets import NoiseUNet, SemanticEncoder
from .phantom import DatasetManifest, load_slice
from .schedule import NoiseSchedule, make_schedule

CHECKPOINT_VERSION = "1"


@dataclass
class DiffAEConfig:
    latent_dim: int = 64
    base_channels: int = 16
    time_dim: int = 64
    image_size: int = 64
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.02
    steps: int = 8000
    batch_size: int = 16
    lr: float = 2e-4
    seed: int = 0
    val_every: int = 250
    substeps: int = 20


class DiffAECheckpoint:
    """Trained encoder/decoder pair plus its schedule and provenance."""

    def __init__(self, config: DiffAEConfig, encoder: SemanticEncoder,
                 decoder: NoiseUNet, step: int = 0,
                 loss_records: list | None = None):
        self.config = config
        self.encoder = encoder
        self.decoder = decoder
        self.step = step
        self.loss_records = loss_records or []
        self.schedule: NoiseSchedule = make_schedule(config.T, config.beta_start, config.beta_end)

    @property
    def latent_dim(self) -> int:
        return self.config.latent_dim

    def config_hash(self) -> str:
        return sha256_json(asdict(self.config))

    def save(self, path: str | Path) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "config": asdict(self.config),
            "config_hash": self.config_hash(),
            "d": self.config.latent_dim,
            "T": self.config.T,
            "step": self.step,
        }
        arrays = {"__header_json__": np.frombuffer(
            json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)}
        for prefix, net in (("enc", self.encoder), ("dec", self.decoder)):
            for k, v in net.state_dict().items():
                arrays[f"{prefix}.{k}"] = v.detach().cpu().numpy()
        np.savez(Path(path), **arrays)

    @classmethod
    def load(cls, path: str | Path) -> "DiffAECheckpoint":
        with np.load(Path(path)) as npz:
            header = json.loads(bytes(npz["__header_json__"]).decode())
            config = DiffAEConfig(**header["config"])
            ck = cls(config, *_build_nets(config), step=header["step"])
            for prefix, net in (("enc", ck.encoder), ("dec", ck.decoder)):
                state = {k[len(prefix) + 1:]: torch.from_numpy(npz[k].copy())
                         for k in npz.files if k.startswith(prefix + ".")}
                net.load_state_dict(state)
        ck.encoder.eval()
        ck.decoder.eval()
        return ck


def _build_nets(config: DiffAEConfig):
    enc = SemanticEncoder(latent_dim=config.latent_dim, base=16)
    dec = NoiseUNet(latent_dim=config.latent_dim, base=config.base_channels,
                    time_dim=config.time_dim)
    return enc, dec


def _to_batch(x: np.ndarray) -> torch.Tensor:
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[None]
    return torch.from_numpy(arr)[:, None]


def encode(x0: np.ndarray, ckpt: DiffAECheckpoint) -> np.ndarray:
    """Map one slice to its semantic latent vector (inference, deterministic)."""
    z = encode_batch(np.asarray(x0)[None], ckpt)
    return z[0]


def encode_batch(x0: np.ndarray, ckpt: DiffAECheckpoint) -> np.ndarray:
    x0 = np.asarray(x0)
    if x0.shape[-2:] != (ckpt.config.image_size, ckpt.config.image_size):
        raise ValueError(f"expected {ckpt.config.image_size}x{ckpt.config.image_size} "
                         f"slices, got {x0.shape[-2:]}")
    ckpt.encoder.eval()
    with torch.no_grad():
        z = ckpt.encoder(_to_batch(x0))
    return z.numpy().astype(np.float64)


def decoder_eps_fn(ckpt: DiffAECheckpoint, z: np.ndarray):
    """eps_fn(x, t) closure binding the decoder to latent codes z (B, d)."""
    zt = torch.from_numpy(np.asarray(z, dtype=np.float32))
    if zt.ndim == 1:
        zt = zt[None]
    ckpt.decoder.eval()

    def eps_fn(x: torch.Tensor, t: int) -> torch.Tensor:
        tt = torch.full((x.shape[0],), int(t), dtype=torch.long)
        with torch.no_grad():
            return ckpt.decoder(x, tt, zt)

    return eps_fn


def sample_batch(x_T: np.ndarray, z: np.ndarray, ckpt: DiffAECheckpoint,
                 substeps: int | None = None) -> np.ndarray:
    """Deterministic DDIM decode of a batch (B, H, W) given latents (B, d)."""
    substeps = substeps or ckpt.config.substeps
    x = ddim.ddim_sample(_to_batch(x_T), decoder_eps_fn(ckpt, z), ckpt.schedule, substeps)
    return x[:, 0].numpy().astype(np.float64)


def invert_batch(x0: np.ndarray, z: np.ndarray, ckpt: DiffAECheckpoint,
                 substeps: int | None = None) -> np.ndarray:
    """Deterministic DDIM inversion to the noise endpoint x_T."""
    substeps = substeps or ckpt.config.substeps
    x = ddim.ddim_invert(_to_batch(x0), decoder_eps_fn(ckpt, z), ckpt.schedule, substeps)
    return x[:, 0].numpy().astype(np.float64)


def reconstruct(x0: np.ndarray, ckpt: DiffAECheckpoint,
                substeps: int | None = None) -> np.ndarray:
    """Round trip: encode, invert to x_T, decode back."""
    z = encode_batch(np.asarray(x0)[None], ckpt)
    x_T = invert_batch(np.asarray(x0)[None], z, ckpt, substeps)
    return sample_batch(x_T, z, ckpt, substeps)[0]


def psnr(a: np.ndarray, b: np.ndarray, data_range: float = 2.0) -> float:
    mse = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * np.log10(data_range ** 2 / mse)


def train_diffae(manifest: DatasetManifest, data_root: str | Path,
                 config: DiffAEConfig) -> DiffAECheckpoint:
    """Joint encoder/decoder training with the L1 noise-prediction loss.

    Timesteps are sampled uniformly in [1, T]; validation loss on the val
    split (fixed noise draws) selects the returned parameters.
    """
    train_entries = manifest.select(split="train")
    if len(train_entries) < 2:
        raise ValueError("need at least 2 training slices")
    val_entries = manifest.select(split="val") or train_entries[: min(16, len(train_entries))]

    train_x = np.stack([load_slice(e, data_root).pixels for e in train_entries]).astype(np.float32)
    val_x = np.stack([load_slice(e, data_root).pixels for e in val_entries]).astype(np.float32)

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    enc, dec = _build_nets(config)
    sched = make_schedule(config.T, config.beta_start, config.beta_end)
    ab = torch.from_numpy(sched.alpha_bar.astype(np.float32))

    opt = torch.optim.Adam(list(enc.parameters()) + list(dec.parameters()), lr=config.lr)

    # fixed validation corruption so val losses are comparable across steps
    vrng = np.random.default_rng(config.seed + 1)
    val_t = torch.from_numpy(vrng.integers(1, config.T + 1, size=len(val_x)))
    val_eps = torch.from_numpy(vrng.standard_normal((len(val_x), 1, *val_x.shape[1:])).astype(np.float32))
    val_x0 = torch.from_numpy(val_x)[:, None]

    def batch_loss(x0, t, eps):
        a = ab[t].view(-1, 1, 1, 1)
        x_t = torch.sqrt(a) * x0 + torch.sqrt(1 - a) * eps
        z = enc(x0)
        pred = dec(x_t, t, z)
        return (eps - pred).abs().mean()

    def val_loss() -> float:
        enc.eval(); dec.eval()
        with torch.no_grad():
            total, n = 0.0, 0
            for i in range(0, len(val_x), 32):
                sl = slice(i, i + 32)
                b = len(val_x0[sl])
                total += float(batch_loss(val_x0[sl], val_t[sl], val_eps[sl])) * b
                n += b
        enc.train(); dec.train()
        return total / n

    records = []
    best = (float("inf"), None, None)
    enc.train(); dec.train()
    for step in range(1, config.steps + 1):
        idx = rng.integers(0, len(train_x), size=config.batch_size)
        x0 = torch.from_numpy(train_x[idx])[:, None]
        t = torch.from_numpy(rng.integers(1, config.T + 1, size=config.batch_size))
        eps = torch.randn_like(x0)
        loss = batch_loss(x0, t, eps)
        opt.zero_grad()
        loss.backward()
        opt.step()
        if step % 50 == 0 or step == 1:
            records.append({"step": step, "train_loss": float(loss.detach())})
        if step % config.val_every == 0 or step == config.steps:
            vl = val_loss()
            records.append({"step": step, "val_loss": vl})
            if vl < best[0]:
                best = (vl, {k: v.detach().clone() for k, v in enc.state_dict().items()},
                        {k: v.detach().clone() for k, v in dec.state_dict().items()})

    if best[1] is not None:
        enc.load_state_dict(best[1])
        dec.load_state_dict(best[2])
    enc.eval(); dec.eval()
    return DiffAECheckpoint(config, enc, dec, step=config.steps, loss_records=records)
