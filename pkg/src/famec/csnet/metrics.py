"""PSNR and SSIM for images with dynamic range 1."""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_CAP = 100.0
K1, K2 = 0.01, 0.03
SIGMA = 1.5
WIN = 11


def _check(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b


def psnr(g, g_hat):
    g, g_hat = _check(g, g_hat)
    mse = float(np.mean((g - g_hat) ** 2))
    if mse < 1e-10:
        return PSNR_CAP
    return 10.0 * np.log10(1.0 / mse)


def ssim(g, g_hat):
    """Gaussian-window SSIM (11x11, sigma 1.5), averaged away from the borders."""
    g, g_hat = _check(g, g_hat)
    radius = (WIN - 1) // 2
    blur = lambda x: gaussian_filter(x, SIGMA, mode="reflect", truncate=radius / SIGMA)  # noqa: E731
    c1, c2 = K1 ** 2, K2 ** 2
    mx, my = blur(g), blur(g_hat)
    vx = blur(g * g) - mx * mx
    vy = blur(g_hat * g_hat) - my * my
    cxy = blur(g * g_hat) - mx * my
    smap = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    if min(g.shape) > 2 * radius:
        smap = smap[radius:-radius, radius:-radius]
    return float(smap.mean())


def quality_metrics(g, g_hat):
    return psnr(g, g_hat), ssim(g, g_hat)


def batch_quality(truth, recon):
    """Per-image mean PSNR/SSIM plus the pooled-MSE PSNR over the whole set."""
    truth = np.asarray(truth, dtype=float)
    recon = np.asarray(recon, dtype=float)
    scores = np.array([quality_metrics(a, b) for a, b in zip(truth, recon)])
    pooled = psnr(truth, recon)
    return {"psnr": float(scores[:, 0].mean()), "ssim": float(scores[:, 1].mean()),
            "psnr_pooled": pooled}
