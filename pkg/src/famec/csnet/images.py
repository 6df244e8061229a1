"""Channel grids <-> normalised grayscale images and block partitioning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..config import ConfigError


@dataclass(frozen=True)
class ChannelImage:
    pixels: np.ndarray     # (H, W) in [0, 1]
    vmin: float
    vmax: float
    part: str              # "real" or "imag"
    user: int = 0
    degenerate: bool = False

    def denormalize(self, pixels=None):
        return denormalize(self.pixels if pixels is None else pixels,
                           self.vmin, self.vmax, self.degenerate)


def normalize(x):
    """Min-max scale to [0, 1].  A constant input maps to 0.5 and is flagged."""
    x = np.asarray(x, dtype=float)
    lo, hi = float(x.min()), float(x.max())
    if hi - lo <= 1e-12 * max(1.0, abs(hi), abs(lo)):
        return np.full(x.shape, 0.5), lo, hi, True
    return (x - lo) / (hi - lo), lo, hi, False


def denormalize(pixels, vmin, vmax, degenerate=False):
    pixels = np.asarray(pixels, dtype=float)
    if degenerate:
        return np.full(pixels.shape, vmin)
    return pixels * (vmax - vmin) + vmin


def port_snapshot_matrix(realizations, user):
    """M x T matrix: column t is user's small-scale grid at snapshot t."""
    return np.stack([r.small_scale_grid[user] for r in realizations], axis=1)


def channels_to_images(realizations, block, users=None):
    """Real and imaginary port-by-snapshot images, cropped to multiples of ``block``."""
    realizations = list(realizations)
    n_ports = realizations[0].small_scale_grid.shape[1]
    if n_ports < block:
        raise ConfigError(f"M = {n_ports} ports is smaller than the block size {block}",
                          field="n_ports")
    if len(realizations) < block:
        raise ConfigError(f"need at least {block} snapshots, got {len(realizations)}",
                          field="csnet.snapshots")
    rows = (n_ports // block) * block
    cols = (len(realizations) // block) * block
    users = range(realizations[0].n_users) if users is None else users
    out = []
    for n in users:
        mat = port_snapshot_matrix(realizations[:cols], n)[:rows]
        for part, values in (("real", mat.real), ("imag", mat.imag)):
            pix, lo, hi, deg = normalize(values)
            out.append(ChannelImage(pix, lo, hi, part, n, deg))
    return out


def pad_to_blocks(x, block):
    """Edge-replicate rows/columns up to the next multiple of ``block``."""
    h, w = x.shape
    ph = (-h) % block
    pw = (-w) % block
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, ph), (0, pw)), mode="edge")


def partition_blocks(image, block):
    """(H, W) -> (H/B * W/B, B, B) in row-major block order."""
    h, w = image.shape
    if h % block or w % block:
        raise ValueError(f"image {image.shape} not divisible by block {block}")
    return (image.reshape(h // block, block, w // block, block)
            .transpose(0, 2, 1, 3).reshape(-1, block, block))


def assemble_blocks(blocks, shape):
    h, w = shape
    b = blocks.shape[-1]
    if blocks.shape[0] != (h // b) * (w // b):
        raise ValueError("block count does not cover the image")
    return (blocks.reshape(h // b, w // b, b, b).transpose(0, 2, 1, 3).reshape(h, w))


def stack_pixels(images):
    return np.stack([im.pixels for im in images]).astype(np.float32)
