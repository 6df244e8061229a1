import dataclasses

import numpy as np
import pytest
import torch

from famec.config import CSParams, ConfigError, ScenarioConfig
from famec.csnet import images as imgs
from famec.csnet.metrics import psnr, ssim, batch_quality
from famec.csnet.model import (CSNet, Decoder, ImportanceGenerator, SensingNetwork, blur,
                               bottleneck_interpolate, kl_upper_bound)
from famec.csnet.training import (EstimatorBundle, UntrainedEstimator, estimate_channel,
                                  make_dataset, mean_importance, synthesize_sequence,
                                  train_estimator)
from famec.utils import deterministic_mode

TINY = CSParams(block=8, features=8, n_res=1, batch_size=10, lr=1e-3, snapshots=16)


def tiny_cfg():
    return ScenarioConfig(n_users=2, n_ports=16, fa_length=3.75, time_corr=0.98, cs=TINY)


@pytest.fixture(scope="module")
def tiny_images():
    return make_dataset(tiny_cfg(), 50, 0)


# --- images ---------------------------------------------------------------

def test_constant_matrix_is_degenerate():
    pix, lo, hi, deg = imgs.normalize(np.full((4, 4), 3.0))
    assert deg and np.all(pix == 0.5)
    np.testing.assert_array_equal(imgs.denormalize(pix, lo, hi, deg), np.full((4, 4), 3.0))


def test_normalize_round_trip():
    x = np.random.default_rng(0).normal(size=(32, 32)) * 1e-3
    pix, lo, hi, deg = imgs.normalize(x)
    assert pix.min() == 0 and pix.max() == 1
    assert np.max(np.abs(imgs.denormalize(pix, lo, hi, deg) - x)) < 1e-6


def test_block_count_and_partition_inverse():
    img = np.random.default_rng(1).random((256, 256))
    blocks = imgs.partition_blocks(img, 32)
    assert blocks.shape == (64, 32, 32)
    np.testing.assert_array_equal(imgs.assemble_blocks(blocks, img.shape), img)


def test_channels_to_images():
    cfg = tiny_cfg()
    seq = synthesize_sequence(cfg, 3, 20)
    out = imgs.channels_to_images(seq, 8)
    assert len(out) == 4 and {im.part for im in out} == {"real", "imag"}
    assert out[0].pixels.shape == (16, 16)
    for im in out:
        assert 0 <= im.pixels.min() and im.pixels.max() <= 1
    np.testing.assert_allclose(out[1].denormalize(), imgs.port_snapshot_matrix(seq[:16], 0).imag,
                               atol=1e-12)
    with pytest.raises(ConfigError):
        imgs.channels_to_images(seq, 32)


# --- sensing & importance ------------------------------------------------

def test_measurement_count():
    assert CSParams().n_measurements == 102


def test_sensing_linear_and_bias_free():
    torch.manual_seed(0)
    s = SensingNetwork(32, 102).double()
    g1, g2 = torch.rand(2, 1, 64, 64, dtype=torch.float64)
    a, b = 0.7, -1.3
    lhs = s((a * g1 + b * g2)[None])
    rhs = a * s(g1[None]) + b * s(g2[None])
    assert torch.max(torch.abs(lhs - rhs)) < 1e-6
    assert torch.all(s(torch.zeros(1, 1, 32, 32, dtype=torch.float64)) == 0)
    with pytest.raises(RuntimeError):
        s(torch.zeros(1, 1, 16, 16, dtype=torch.float64))


def test_importance_range_and_shape():
    torch.manual_seed(0)
    ig = ImportanceGenerator(102)
    y = 50 * torch.randn(4, 102, 2, 3)
    k = ig(y)
    assert k.shape == y.shape and k.min() >= 0 and k.max() <= 1
    c = torch.full((2, 7), 0.3)
    assert torch.allclose(blur(c), c)


def test_bottleneck_examples():
    y, e = torch.tensor([2.0]), torch.tensor([5.0])
    assert bottleneck_interpolate(y, torch.tensor([1.0]), e) == y
    assert bottleneck_interpolate(y, torch.tensor([0.0]), e) == e
    assert bottleneck_interpolate(y, torch.tensor([0.5]), torch.tensor([0.0])) == 1.0


def test_kl_examples_and_monotone():
    y = torch.tensor([1.5, -0.3, 2.0])
    mu, var = torch.tensor(0.2), torch.tensor(0.8)
    assert kl_upper_bound(torch.zeros(3), y, mu, var) == 0
    ks = torch.linspace(0.0, 0.99, 50)
    vals = torch.stack([kl_upper_bound(torch.full((3,), float(k)), y, mu, var) for k in ks])
    assert torch.all(vals[1:] > vals[:-1]) and torch.all(vals >= 0)
    assert torch.isfinite(kl_upper_bound(torch.ones(3), y, mu, var))


def mc_kl(kappa, y, mu, var, n, rng):
    # KL[q || p], q = N(k y + (1 - k) mu, (1 - k)^2 var), p = N(mu, var), by sampling q
    m_q, s_q = kappa * y + (1 - kappa) * mu, (1 - kappa) * np.sqrt(var)
    z = rng.normal(m_q, s_q, n)
    log_q = -0.5 * ((z - m_q) / s_q) ** 2 - np.log(s_q)
    log_p = -0.5 * (z - mu) ** 2 / var - 0.5 * np.log(var)
    return float(np.mean(log_q - log_p))


@pytest.mark.parametrize("kappa", [0.1, 0.5, 0.9])
def test_kl_matches_monte_carlo(kappa):
    rng = np.random.default_rng(int(kappa * 10))
    y, mu, var = 1.7, 0.4, 0.6
    closed = float(kl_upper_bound(torch.tensor([kappa], dtype=torch.float64),
                                  torch.tensor([y], dtype=torch.float64), mu, var))
    est = mc_kl(kappa, y, mu, var, 10 ** 5, rng)
    assert abs(est - closed) / closed < 0.02


def test_kl_matches_quadrature():
    from scipy import integrate, stats
    y, mu, var = 1.3, -0.2, 0.7
    p = stats.norm(mu, np.sqrt(var))
    for kappa in (0.1, 0.5, 0.9):
        q = stats.norm(kappa * y + (1 - kappa) * mu, (1 - kappa) * np.sqrt(var))
        ref = integrate.quad(lambda z: q.pdf(z) * (q.logpdf(z) - p.logpdf(z)), -np.inf, np.inf)[0]
        closed = float(kl_upper_bound(torch.tensor([kappa], dtype=torch.float64),
                                      torch.tensor([y], dtype=torch.float64), mu, var))
        assert abs(closed - ref) < 1e-9 * max(1.0, ref)


# --- decoder ----------------------------------------------------------------

def test_decoder_long_skip_and_shape():
    torch.manual_seed(0)
    dec = Decoder(32, 102, features=8, n_res=2)
    y = torch.randn(2, 102, 3, 3)
    with torch.no_grad():
        g0 = dec.initial_reconstruction(y)
        out = dec(y)
        assert out.shape == (2, 1, 96, 96)
        assert torch.equal(out - dec.deep(g0), g0) or torch.allclose(out - dec.deep(g0), g0, atol=1e-6)
        for p in dec.aggregate.parameters():
            p.zero_()
        assert torch.equal(dec(y), g0)


def test_identity_initial_layer_reassembles_blocks():
    b = 4
    dec = Decoder(b, b * b, features=2, n_res=1)
    with torch.no_grad():
        dec.initial.weight.copy_(torch.eye(b * b)[:, :, None, None])
    img = torch.rand(1, 1, 12, 8)
    # block vectors in the pixel_shuffle (row-major within block) layout
    y = img.reshape(1, 3, b, 2, b).permute(0, 2, 4, 1, 3).reshape(1, b * b, 3, 2)
    assert torch.equal(dec.initial_reconstruction(y), img)


# --- metrics ---------------------------------------------------------------------

def test_psnr_examples():
    a = np.random.default_rng(0).random((16, 16))
    assert psnr(a, a) == 100.0
    assert np.isclose(psnr(np.zeros((4, 4)), np.full((4, 4), 0.1)), 20.0)
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_ssim_identical_and_constant():
    a = np.random.default_rng(1).random((32, 32))
    assert np.isclose(ssim(a, a), 1.0)
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    expect = (2 * 0.4 * 0.6 + c1) / (0.4 ** 2 + 0.6 ** 2 + c1)
    assert np.isclose(ssim(np.full((32, 32), 0.4), np.full((32, 32), 0.6)), expect)


def test_ssim_matches_reference_implementation():
    from skimage.metrics import structural_similarity
    rng = np.random.default_rng(2)
    a = rng.random((48, 64))
    b = np.clip(a + 0.1 * rng.normal(size=a.shape), 0, 1)
    ref = structural_similarity(a, b, data_range=1.0, gaussian_weights=True, sigma=1.5,
                                use_sample_covariance=False)
    assert abs(ssim(a, b) - ref) < 1e-6


def test_batch_quality_reports_both():
    rng = np.random.default_rng(3)
    a = rng.random((3, 16, 16))
    q = batch_quality(a, a * 0.9)
    assert set(q) == {"psnr", "ssim", "psnr_pooled"}


# --- training ------------------------------------------------------------------

def test_training_reduces_loss(tiny_images):
    with deterministic_mode():
        b = train_estimator(tiny_images, TINY, seed=0, epochs=1000, max_steps=200)
    tr = b.loss_trace
    assert len(tr) == 200
    assert np.mean(tr[-10:]) <= 0.8 * np.mean(tr[:10])


def test_training_deterministic(tiny_images):
    with deterministic_mode():
        a = train_estimator(tiny_images, TINY, seed=3, epochs=1000, max_steps=30)
        b = train_estimator(tiny_images, TINY, seed=3, epochs=1000, max_steps=30)
    assert a.loss_trace == b.loss_trace


def test_gamma_pressure_raises_importance(tiny_images):
    with deterministic_mode():
        lo = train_estimator(tiny_images, TINY, seed=1, epochs=1000, max_steps=100)
        hi = train_estimator(tiny_images, dataclasses.replace(TINY, gamma=TINY.gamma * 100),
                             seed=1, epochs=1000, max_steps=100)
    assert mean_importance(hi, tiny_images) > mean_importance(lo, tiny_images)


def test_ablation_has_no_importance_generator(tiny_images):
    b = train_estimator(tiny_images, dataclasses.replace(TINY, use_importance=False), max_steps=3)
    assert b.net.importance is None and len(b.loss_trace) == 3


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train_estimator([], TINY)


# --- estimation ----------------------------------------------------------------

def test_perfect_bypass_is_exact():
    cfg = tiny_cfg()
    real = synthesize_sequence(cfg, 0, 1)[0]
    est = estimate_channel(real, EstimatorBundle.perfect(), cfg)
    assert np.array_equal(est, real.small_scale_grid)
    assert np.array_equal(estimate_channel(real, None, cfg), real.small_scale_grid)


def test_untrained_bundle_rejected():
    cfg = tiny_cfg()
    real = synthesize_sequence(cfg, 0, 1)[0]
    with pytest.raises(UntrainedEstimator):
        estimate_channel(real, EstimatorBundle(CSNet(TINY), TINY), cfg)


def test_estimate_shape_and_consistency(tiny_images):
    cfg = tiny_cfg()
    b = train_estimator(tiny_images, TINY, seed=0, epochs=1000, max_steps=60)
    seq = synthesize_sequence(cfg, 9, 16)
    est = estimate_channel(seq, b, cfg)
    assert est.shape == (cfg.n_users, cfg.n_ports)
    # the newest column of the decoded images, denormalised, is the estimate
    ims = imgs.channels_to_images(seq, 8)
    rec = b.reconstruct(np.stack([im.pixels for im in ims]))
    col = np.array([im.denormalize(r)[:, -1] for im, r in zip(ims, rec)])
    np.testing.assert_allclose(est.real, col[0::2], atol=1e-9)
    np.testing.assert_allclose(est.imag, col[1::2], atol=1e-9)
    # error on the underlying image agrees with the PSNR of that image
    g = ims[0].pixels[:, -1]
    r = rec[0][:, -1]
    mse = np.mean((g - r) ** 2)
    span = ims[0].vmax - ims[0].vmin
    assert np.isclose(np.mean((est.real[0] - seq[-1].small_scale_grid[0].real) ** 2),
                      mse * span ** 2)
    one = estimate_channel(seq[-1], b, cfg)
    assert one.shape == est.shape and np.all(np.isfinite(one))
