"""Small torch networks: semantic encoder, conditional noise predictor, seg U-Net.

Everything is sized for 64x64 single-channel slices on CPU.
"""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


def timestep_embedding(t: torch.Tensor, dim: int) -> torch.Tensor:
    """Sinusoidal embedding of integer timesteps, shape (B, dim)."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=torch.float32) / half)
    args = t.float()[:, None] * freqs[None, :]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)


class SemanticEncoder(nn.Module):
    """4-stage strided conv encoder, global average pool, linear head to d."""

    def __init__(self, latent_dim: int = 64, base: int = 16):
        super().__init__()
        chs = [base, base * 2, base * 4, base * 8]
        layers = []
        prev = 1
        for c in chs:
            layers += [nn.Conv2d(prev, c, 3, stride=2, padding=1),
                       nn.GroupNorm(min(8, c), c),
                       nn.SiLU()]
            prev = c
        self.body = nn.Sequential(*layers)
        self.head = nn.Linear(chs[-1], latent_dim)
        self.latent_dim = latent_dim

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.body(x)
        h = h.mean(dim=(2, 3))
        return self.head(h)


class _CondBlock(nn.Module):
    """Two 3x3 convs with an additive (t, z) conditioning bias per channel."""

    def __init__(self, in_ch: int, out_ch: int, cond_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(in_ch, out_ch, 3, padding=1)
        self.conv2 = nn.Conv2d(out_ch, out_ch, 3, padding=1)
        self.norm1 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.norm2 = nn.GroupNorm(min(8, out_ch), out_ch)
        self.cond = nn.Linear(cond_dim, out_ch)

    def forward(self, x, cond):
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.cond(cond)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class NoiseUNet(nn.Module):
    """Noise predictor conditioned on timestep (sinusoidal) and latent z.

    Three resolutions (64/32/16 for 64x64 inputs) with skip connections.
    """

    def __init__(self, latent_dim: int = 64, base: int = 32, time_dim: int = 64):
        super().__init__()
        self.time_dim = time_dim
        cond_dim = base * 4
        self.cond_mlp = nn.Sequential(
            nn.Linear(time_dim + latent_dim, cond_dim), nn.SiLU(),
            nn.Linear(cond_dim, cond_dim),
        )
        self.enc1 = _CondBlock(1, base, cond_dim)
        self.enc2 = _CondBlock(base, base * 2, cond_dim)
        self.mid = _CondBlock(base * 2, base * 4, cond_dim)
        self.dec2 = _CondBlock(base * 4 + base * 2, base * 2, cond_dim)
        self.dec1 = _CondBlock(base * 2 + base, base, cond_dim)
        self.out = nn.Conv2d(base, 1, 1)

    def forward(self, x: torch.Tensor, t: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        cond = self.cond_mlp(torch.cat([timestep_embedding(t, self.time_dim), z], dim=1))
        e1 = self.enc1(x, cond)
        e2 = self.enc2(F.avg_pool2d(e1, 2), cond)
        m = self.mid(F.avg_pool2d(e2, 2), cond)
        u2 = F.interpolate(m, scale_factor=2, mode="nearest")
        d2 = self.dec2(torch.cat([u2, e2], dim=1), cond)
        u1 = F.interpolate(d2, scale_factor=2, mode="nearest")
        d1 = self.dec1(torch.cat([u1, e1], dim=1), cond)
        return self.out(d1)


class _SegBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(in_ch, out_ch, 3, padding=1),
            nn.GroupNorm(min(8, out_ch), out_ch), nn.SiLU(),
            nn.Conv2d(out_ch, out_ch, 3, padding=1),
            nn.GroupNorm(min(8, out_ch), out_ch), nn.SiLU(),
        )

    def forward(self, x):
        return self.net(x)


class SegUNet(nn.Module):
    """Depth-3 U-Net emitting one logit map."""

    def __init__(self, base: int = 16):
        super().__init__()
        self.enc1 = _SegBlock(1, base)
        self.enc2 = _SegBlock(base, base * 2)
        self.enc3 = _SegBlock(base * 2, base * 4)
        self.mid = _SegBlock(base * 4, base * 8)
        self.dec3 = _SegBlock(base * 8 + base * 4, base * 4)
        self.dec2 = _SegBlock(base * 4 + base * 2, base * 2)
        self.dec1 = _SegBlock(base * 2 + base, base)
        self.out = nn.Conv2d(base, 1, 1)

    def forward(self, x):
        e1 = self.enc1(x)
        e2 = self.enc2(F.avg_pool2d(e1, 2))
        e3 = self.enc3(F.avg_pool2d(e2, 2))
        m = self.mid(F.avg_pool2d(e3, 2))
        d3 = self.dec3(torch.cat([F.interpolate(m, scale_factor=2, mode="nearest"), e3], dim=1))
        d2 = self.dec2(torch.cat([F.interpolate(d3, scale_factor=2, mode="nearest"), e2], dim=1))
        d1 = self.dec1(torch.cat([F.interpolate(d2, scale_factor=2, mode="nearest"), e1], dim=1))
        return self.out(d1)
