import numpy as np
import pytest

from famec.game import (LN2, GameTerms, best_response_power, game_terms, gamma_factor,
                        net_utility, power_update, price_bounds, price_from_lambda,
                        run_power_game, utility_slope)

from .helpers import random_terms


def simple_terms(phi=1.0, a=1.0, p0=1.0):
    return GameTerms(np.array([phi]), np.zeros((1, 1)), np.array([a]), np.array([p0]))


def test_price_bounds_examples():
    lo, hi = price_bounds(simple_terms(), 0)
    assert np.isclose(lo, 1 / (2 * LN2)) and np.isclose(hi, 1 / LN2)
    lo, hi = price_bounds(simple_terms(p0=1e-12), 0)
    assert np.isclose(lo, hi)
    assert np.isclose(price_bounds(simple_terms(phi=2.0), 0)[1], 2 * price_bounds(simple_terms(), 0)[1])


def test_gamma_factor_examples():
    assert np.isclose(gamma_factor(1e-12, 1.0, 1.0), 1.0)
    assert np.isclose(gamma_factor(np.log(2), 1.0, 1.0), 0.5)
    assert gamma_factor(1e3, 1.0, 1.0) < 1e-300
    with pytest.raises(ValueError):
        gamma_factor(0.0, 1.0, 1.0)


def test_gamma_monotone():
    phi = np.linspace(0.1, 1, 10)
    g = gamma_factor(0.7, phi, 5.0)
    assert np.all(np.diff(g) < 0)
    assert np.all(np.diff(gamma_factor(np.linspace(0.1, 3, 10), 0.5, 5.0)) < 0)


def test_best_response_examples():
    t = simple_terms()
    assert np.isclose(best_response_power(1 / (2 * LN2), t, 0), 1.0)
    lo, hi = price_bounds(t, 0)
    assert abs(best_response_power(hi, t, 0)) < 1e-12
    assert np.isclose(best_response_power(lo, t, 0), 1.0)


def test_best_response_grid_search():
    rng = np.random.default_rng(0)
    for _ in range(20):
        t = random_terms(rng, 3)
        n = int(rng.integers(3))
        lo, hi = price_bounds(t, n)
        xi = rng.uniform(lo, hi)
        p = np.clip(best_response_power(xi, t, n), 0, t.p0[n])
        grid = np.linspace(0, t.p0[n], 10_000)
        f = net_utility(grid, xi, t, n)
        k = int(np.argmax(f))
        assert abs(p - grid[k]) <= grid[1] - grid[0]
        assert net_utility(p, xi, t, n) >= f[k] - 1e-6
        if 0 < p < t.p0[n]:
            assert abs(utility_slope(p, xi, t, n)) < 1e-8


def test_game_terms_conventions():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    H = rng.normal(size=(2, 3)) + 1j * rng.normal(size=(2, 3))
    pr = game_terms(W, H, 0.05, 1e-3)
    co = game_terms(W, H, 0.05, 1e-3, convention="conventional")
    assert np.isclose(pr.vartheta * pr.phi.max(), pr.nu)
    p = np.array([0.01, 0.02, 0.03])
    G = np.abs(W.conj().T @ H) ** 2
    np.testing.assert_allclose(pr.interference(p), (np.diag(G) * p).sum() - np.diag(G) * p)
    np.testing.assert_allclose(co.interference(p), G @ p - np.diag(G) * p)


def test_symmetric_fixed_point():
    t = GameTerms(np.array([1.0, 1.0]), np.array([[0, 1.0], [1.0, 0]]), np.array([0.5, 0.5]),
                  np.array([1.0, 1.0]))
    res = run_power_game(0.3, t)
    assert res.converged and np.isclose(res.powers[0], res.powers[1])


def test_large_lambda_full_power():
    rng = np.random.default_rng(2)
    for _ in range(20):
        t = random_terms(rng, 3)
        assert np.all(run_power_game(1e3, t).powers >= 0.999 * t.p0)


def test_fixed_point_self_consistency():
    rng = np.random.default_rng(3)
    for _ in range(20):
        t = random_terms(rng, 3)
        lam = float(np.exp(rng.uniform(-3, 3)))
        res = run_power_game(lam, t, tol=1e-10, max_iter=10_000)
        assert res.converged
        assert np.max(np.abs(power_update(lam, t, res.powers) - res.powers)) < 1e-10
        xi = price_from_lambda(lam, t, res.powers)
        for n in range(3):
            br = np.clip(best_response_power(xi[n], t, n, res.powers), 0, t.p0[n])
            assert abs(br - res.powers[n]) < 1e-8 * t.p0[n]
            lo, hi = price_bounds(t, n, res.powers)
            assert lo - 1e-12 <= res.price_factors[n] <= hi + 1e-12


def test_iterates_stay_in_box():
    rng = np.random.default_rng(4)
    for _ in range(50):
        t = random_terms(rng, 4)
        res = run_power_game(float(np.exp(rng.uniform(-6, 6))), t, keep_trace=True)
        for p in res.trace:
            assert np.all(p >= 0) and np.all(p <= t.p0)


def test_price_position_decreases_with_phi():
    # (xi - xi_min)/(xi_max - xi_min) = Gamma, decreasing in phi
    rng = np.random.default_rng(5)
    t = random_terms(rng, 5)
    order = np.argsort(t.phi)
    xi = price_from_lambda(0.5, t)
    b = np.array([price_bounds(t, n) for n in range(5)])
    pos = (xi - b[:, 0]) / (b[:, 1] - b[:, 0])
    assert np.all(np.diff(pos[order]) < 0)


def test_lambda_monotone_on_scenarios():
    rng = np.random.default_rng(6)
    lams = np.exp(np.linspace(-6, 6, 25))
    for _ in range(10):
        t = random_terms(rng, 3)
        ps = np.array([run_power_game(l, t, tol=1e-12, max_iter=5000).powers for l in lams])
        assert np.all(np.diff(ps, axis=0) >= -1e-9)


def test_nonconvergence_flag_is_honest():
    rng = np.random.default_rng(7)
    t = random_terms(rng, 3)
    res = run_power_game(1.0, t, tol=0.0, max_iter=3)
    assert not res.converged and res.iterations == 3
