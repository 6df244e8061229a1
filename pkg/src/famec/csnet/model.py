"""Block compressed sensing encoder, importance generator and two-stage decoder."""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

KAPPA_MAX = 1.0 - 1e-6
VAR_FLOOR = 1e-12


class SensingNetwork(nn.Module):
    """y = W_s * g: n_B kernels of size B x B, stride B, no bias."""

    def __init__(self, block, n_measurements):
        super().__init__()
        self.block = block
        self.conv = nn.Conv2d(1, n_measurements, block, stride=block, bias=False)

    def forward(self, g):
        return self.conv(g)


def blur(v):
    """Length-3 moving average over the last axis with edge replication."""
    shape = v.shape
    flat = v.reshape(-1, 1, shape[-1])
    flat = F.pad(flat, (1, 1), mode="replicate")
    return F.avg_pool1d(flat, 3, stride=1).reshape(shape)


class ImportanceGenerator(nn.Module):
    """kappa = blur(sigmoid(FC2(relu(FC1(y))))) per block measurement vector."""

    def __init__(self, n_measurements, hidden=0):
        super().__init__()
        hidden = hidden or n_measurements
        self.fc1 = nn.Linear(n_measurements, hidden)
        self.fc2 = nn.Linear(hidden, n_measurements)

    def forward(self, y):
        v = y.permute(0, 2, 3, 1)          # measurements last
        v = torch.sigmoid(self.fc2(F.relu(self.fc1(v))))
        return blur(v).permute(0, 3, 1, 2)


class ResidualBlock(nn.Module):
    def __init__(self, features, kernel):
        super().__init__()
        self.m1 = nn.Conv2d(features, features, kernel, padding=kernel // 2)
        self.m2 = nn.Conv2d(features, features, kernel, padding=kernel // 2)

    def forward(self, x):
        x = F.relu(x + self.m1(x))
        return F.relu(self.m2(x))


class Decoder(nn.Module):
    """Learned linear initial reconstruction followed by a residual refiner."""

    def __init__(self, block, n_measurements, features=64, kernel=3, n_res=5):
        super().__init__()
        self.block = block
        self.initial = nn.Conv2d(n_measurements, block * block, 1, bias=False)
        self.extract = nn.Conv2d(1, features, kernel, padding=kernel // 2)
        self.blocks = nn.ModuleList(ResidualBlock(features, kernel) for _ in range(n_res))
        self.aggregate = nn.Conv2d(features, 1, kernel, padding=kernel // 2)

    def initial_reconstruction(self, y):
        # 1x1xB^2 per block -> BxB block at its original location
        return F.pixel_shuffle(self.initial(y), self.block)

    def deep(self, g0):
        x = F.relu(self.extract(g0))
        for blk in self.blocks:
            x = blk(x)
        return self.aggregate(x)

    def forward(self, y):
        g0 = self.initial_reconstruction(y)
        return g0 + self.deep(g0)


class CSNet(nn.Module):
    def __init__(self, params):
        super().__init__()
        n_b = params.n_measurements
        self.block = params.block
        self.sensing = SensingNetwork(params.block, n_b)
        self.decoder = Decoder(params.block, n_b, params.features, params.kernel, params.n_res)
        self.importance = (ImportanceGenerator(n_b, params.ig_hidden)
                           if params.use_importance else None)

    def measure(self, g):
        return self.sensing(g)

    def decoder_input(self, y):
        if self.importance is None:
            return y
        return self.importance(y) * y

    def forward(self, g):
        return self.decoder(self.decoder_input(self.measure(g)))


def measurement_stats(y):
    """Per-measurement mean and variance over batch and block positions."""
    mu = y.mean(dim=(0, 2, 3), keepdim=True)
    var = y.var(dim=(0, 2, 3), unbiased=False, keepdim=True).clamp_min(VAR_FLOOR)
    return mu, var


def bottleneck_interpolate(y, kappa, eps):
    """Z = kappa * y + (1 - kappa) * eps."""
    return kappa * y + (1.0 - kappa) * eps


def kl_upper_bound(kappa, y, mu, var, reduction="mean"):
    """Closed-form KL[N(kappa y + (1-kappa) mu, (1-kappa)^2 var) || N(mu, var)].

    ``reduction`` is "mean" over all elements, "sum" per sample then batch
    mean, or "none".
    """
    k = kappa.clamp(0.0, KAPPA_MAX)
    var = var.clamp_min(VAR_FLOOR) if torch.is_tensor(var) else max(var, VAR_FLOOR)
    kl = (-torch.log1p(-k) + ((1.0 - k) ** 2 - 1.0) / 2.0
          + k ** 2 * (y - mu) ** 2 / (2.0 * var))
    if reduction == "mean":
        return kl.mean()
    if reduction == "sum":
        return kl.reshape(kl.shape[0], -1).sum(dim=1).mean()
    return kl
