"""Alternating IBM-CCS training, dataset synthesis and channel estimation."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import torch

from ..config import CSParams
from ..sysmodel import as_rng, evolve_channel, synthesize_channel
from .images import channels_to_images, denormalize, normalize, pad_to_blocks, port_snapshot_matrix
from .metrics import batch_quality
from .model import CSNet, bottleneck_interpolate, kl_upper_bound, measurement_stats

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


class UntrainedEstimator(RuntimeError):
    pass


def synthesize_sequence(cfg, rng, length):
    """``length`` consecutive slots sharing geometry (one image's worth of snapshots)."""
    rng = as_rng(rng)
    real = synthesize_channel(cfg, rng)
    seq = [real]
    for _ in range(length - 1):
        real = evolve_channel(real, cfg, rng)
        seq.append(real)
    return seq


def make_dataset(cfg, n_images, rng):
    """At least ``n_images`` channel images (2 per user per drawn sequence)."""
    rng = as_rng(rng)
    images = []
    while len(images) < n_images:
        seq = synthesize_sequence(cfg, rng, cfg.cs.snapshots)
        images.extend(channels_to_images(seq, cfg.cs.block))
    return images[:n_images]


@dataclass
class EstimatorBundle:
    net: CSNet = None
    params: CSParams = field(default_factory=CSParams)
    loss_trace: list = field(default_factory=list)
    trained: bool = False
    identity: bool = False

    @classmethod
    def perfect(cls):
        return cls(identity=True, trained=True)

    def reconstruct(self, pixels):
        """Decode a stack of normalised images (K, H, W) through the inference path."""
        if self.identity:
            return np.asarray(pixels, dtype=float)
        if not self.trained or self.net is None:
            raise UntrainedEstimator("estimator bundle has not been trained")
        self.net.eval()
        with torch.no_grad():
            x = torch.as_tensor(np.asarray(pixels, dtype=np.float32))[:, None]
            out = self.net(x)[:, 0].double().numpy()
        return out

    def state_arrays(self):
        return {k: v.detach().cpu().numpy().astype(np.float32)
                for k, v in self.net.state_dict().items()}

    @classmethod
    def from_arrays(cls, params, arrays, loss_trace=()):
        net = CSNet(params)
        net.load_state_dict({k: torch.as_tensor(np.asarray(v)) for k, v in arrays.items()})
        return cls(net, params, list(loss_trace), trained=True)


def _sq_err(g, g_hat):
    return ((g - g_hat) ** 2).reshape(g.shape[0], -1).sum(dim=1).mean()


def _set_grad(module, flag):
    for p in module.parameters():
        p.requires_grad_(flag)


def train_estimator(images, params, seed=0, epochs=None, max_steps=None, log_every=0):
    """Alternating updates: per batch an importance-generator step on the noisy
    bottleneck Z, then a sensing+decoder step on kappa * y.

    With ``params.use_importance`` False this is the plain CCS ablation
    (one reconstruction step per batch, decoder fed y).
    ``loss_trace`` records L_R of every sensing+decoder step.
    """
    torch.manual_seed(seed)
    gen = torch.Generator().manual_seed(seed)
    data = torch.as_tensor(np.stack([getattr(im, "pixels", im) for im in images]).astype(np.float32))[:, None]
    if data.shape[0] == 0:
        raise ValueError("empty dataset")
    net = CSNet(params)
    sd = list(net.sensing.parameters()) + list(net.decoder.parameters())
    opt_n = torch.optim.Adam(sd, lr=params.lr)
    opt_ig = (torch.optim.Adam(net.importance.parameters(), lr=params.lr)
              if net.importance is not None else None)
    epochs = params.epochs if epochs is None else epochs
    trace = []
    step = 0
    net.train()
    for epoch in range(epochs):
        order = torch.randperm(data.shape[0], generator=gen)
        for start in range(0, data.shape[0], params.batch_size):
            g = data[order[start:start + params.batch_size]]
            if net.importance is not None:
                # importance-generator step, sensing/decoder frozen
                _set_grad(net.sensing, False)
                _set_grad(net.decoder, False)
                with torch.no_grad():
                    y = net.measure(g)
                mu, var = measurement_stats(y)
                eps = mu + var.sqrt() * torch.randn(y.shape, generator=gen)
                kappa = net.importance(y)
                z = bottleneck_interpolate(y, kappa, eps)
                loss_ig = _sq_err(g, net.decoder(z)) + params.eta * kl_upper_bound(
                    kappa, y, mu, var, reduction="mean")
                opt_ig.zero_grad()
                loss_ig.backward()
                opt_ig.step()
                _set_grad(net.sensing, True)
                _set_grad(net.decoder, True)
                _set_grad(net.importance, False)

            y = net.measure(g)
            if net.importance is not None:
                kappa = net.importance(y)
                l_r = _sq_err(g, net.decoder(kappa * y))
                loss = l_r + params.gamma * ((1.0 - kappa) ** 2).reshape(g.shape[0], -1).sum(dim=1).mean()
            else:
                l_r = _sq_err(g, net.decoder(y))
                loss = l_r
            opt_n.zero_grad()
            loss.backward()
            opt_n.step()
            if net.importance is not None:
                _set_grad(net.importance, True)

            value = float(l_r.detach())
            if not np.isfinite(value):
                raise TrainingDiverged(f"reconstruction loss became {value} at step {step} "
                                       f"(epoch {epoch}); lower csnet.lr")
            trace.append(value)
            step += 1
            if log_every and step % log_every == 0:
                log.info("csnet step %d  L_R %.5f", step, value)
            if max_steps is not None and step >= max_steps:
                return EstimatorBundle(net.eval(), params, trace, trained=True)
    return EstimatorBundle(net.eval(), params, trace, trained=True)


def mean_importance(bundle, images):
    if bundle.net.importance is None:
        return 1.0
    with torch.no_grad():
        x = torch.as_tensor(np.stack([im.pixels for im in images]).astype(np.float32))[:, None]
        return float(bundle.net.importance(bundle.net.measure(x)).mean())


def evaluate_estimator(bundle, images):
    truth = np.stack([im.pixels for im in images])
    recon = np.clip(bundle.reconstruct(truth), 0.0, 1.0)
    return batch_quality(truth, recon)


def estimate_channel(history, bundle, cfg):
    """Estimated N x M small-scale grid for the newest slot of ``history``.

    ``history`` is one ChannelRealization or a sequence ending with the
    current slot; the window is edge-padded to whole blocks, decoded, and
    the newest column read back out.
    """
    if not isinstance(history, (list, tuple)):
        history = [history]
    current = history[-1]
    if bundle is None or bundle.identity:
        return current.small_scale_grid.copy()
    if not bundle.trained:
        raise UntrainedEstimator("estimator bundle has not been trained")
    block = bundle.params.block
    width = max(block, (bundle.params.snapshots // block) * block)
    window = list(history)[-width:]
    n_users, n_ports = current.small_scale_grid.shape
    t_last = len(window) - 1
    pix, meta = [], []
    for n in range(n_users):
        mat = port_snapshot_matrix(window, n)
        for values in (mat.real, mat.imag):
            p, lo, hi, deg = normalize(pad_to_blocks(values, block))
            pix.append(p)
            meta.append((lo, hi, deg))
    recon = bundle.reconstruct(np.stack(pix))
    est = np.empty((n_users, n_ports), dtype=complex)
    for n in range(n_users):
        parts = []
        for j in (2 * n, 2 * n + 1):
            lo, hi, deg = meta[j]
            parts.append(denormalize(recon[j], lo, hi, deg)[:n_ports, t_last])
        est[n] = parts[0] + 1j * parts[1]
    return est
