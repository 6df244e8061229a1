"""Non-cooperative power-pricing game.

Each user maximises R_n - xi_n * p_n.  A single scalar price factor lambda
maps to per-user prices through the gamma factor, and the closed-form best
responses are iterated (Jacobi) to a fixed point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LN2 = np.log(2.0)


@dataclass(frozen=True)
class GameTerms:
    phi: np.ndarray        # |w_n^H h_n|^2
    cross: np.ndarray      # (N, N) interference gains, zero diagonal: I = cross @ p
    noise: np.ndarray      # ||w_n||^2 sigma^2
    p0: np.ndarray         # initial (equal) powers
    nu: float = 5.0
    phi_c: float = 1.0

    @property
    def vartheta(self):
        return self.nu / np.max(self.phi)

    def interference(self, p=None):
        return self.cross @ (self.p0 if p is None else np.asarray(p, dtype=float))


def game_terms(W, H, p0, sigma2, nu=5.0, phi_c=1.0, convention="printed"):
    """Collect the game coefficients for beamformer W and channel matrix H.

    Under the printed SINR the interference seen by user n is
    sum_{k != n} phi_k p_k; the conventional option uses |w_n^H h_k|^2.
    """
    G = np.abs(np.asarray(W).conj().T @ np.asarray(H)) ** 2
    phi = np.diag(G).copy()
    n = phi.size
    if convention == "printed":
        cross = np.tile(phi, (n, 1))
    elif convention == "conventional":
        cross = G.copy()
    else:
        raise ValueError(f"unknown SINR convention {convention!r}")
    np.fill_diagonal(cross, 0.0)
    noise = np.sum(np.abs(np.asarray(W)) ** 2, axis=0) * sigma2
    p0 = np.broadcast_to(np.asarray(p0, dtype=float), phi.shape).copy()
    return GameTerms(phi, cross, noise, p0, nu, phi_c)


def net_utility(p, xi, terms, n, p_others=None):
    """f_c(p) = log2(1 + phi p / (I + delta^2)) - xi p  (rate per unit bandwidth)."""
    q = terms.p0 if p_others is None else np.asarray(p_others, dtype=float)
    a = terms.interference(q)[n] + terms.noise[n]
    p = np.asarray(p, dtype=float)
    return np.log2(1.0 + terms.phi[n] * p / a) - xi * p


def utility_slope(p, xi, terms, n, p_others=None):
    """d f_c / d p_n at bandwidth 1."""
    q = terms.p0 if p_others is None else np.asarray(p_others, dtype=float)
    a = terms.interference(q)[n] + terms.noise[n]
    return terms.phi[n] / (LN2 * (a + terms.phi[n] * p)) - xi


def price_bounds(terms, n, p=None):
    """(xi_min, xi_max): prices whose best responses are p0 and 0."""
    a = terms.interference(p)[n] + terms.noise[n]
    phi = terms.phi[n]
    xi_max = phi / (LN2 * a)
    xi_min = phi / (LN2 * (terms.p0[n] * phi + a))
    return xi_min, xi_max


def gamma_factor(lam, phi_n, vartheta, phi_c=1.0):
    if not np.all(np.asarray(lam) > 0):
        raise ValueError(f"price factor lambda must be positive, got {lam}")
    return np.exp(-lam * (np.asarray(phi_n) * vartheta) ** phi_c)


def best_response_power(xi, terms, n, p=None):
    """Unclamped stationary point 1/(xi ln2) - (I + delta^2)/phi."""
    a = terms.interference(p)[n] + terms.noise[n]
    return 1.0 / (xi * LN2) - a / terms.phi[n]


def price_from_lambda(lam, terms, p=None):
    """Per-user xi_n = Gamma xi_max + (1 - Gamma) xi_min."""
    gam = gamma_factor(lam, terms.phi, terms.vartheta, terms.phi_c)
    bounds = np.array([price_bounds(terms, n, p) for n in range(terms.phi.size)])
    return gam * bounds[:, 1] + (1.0 - gam) * bounds[:, 0]


def power_update(lam, terms, p):
    """One synchronous step of the closed-form power iteration."""
    gam = gamma_factor(lam, terms.phi, terms.vartheta, terms.phi_c)
    a = terms.interference(p) + terms.noise
    num = (1.0 - gam) * a * terms.p0
    den = a + gam * terms.p0 * terms.phi
    return np.clip(num / den, 0.0, terms.p0)


@dataclass(frozen=True)
class GameResult:
    powers: np.ndarray
    iterations: int
    converged: bool
    price_factors: np.ndarray
    trace: tuple = ()


def run_power_game(lam, terms, tol=1e-6, max_iter=100, keep_trace=False):
    """Iterate the power update from the equal-power start until max|dp| < tol."""
    p = terms.p0.copy()
    trace = [p]
    best, best_step = p, np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p_new = power_update(lam, terms, p)
        if np.any(p_new < 0) or np.any(p_new > terms.p0):
            raise AssertionError("power iterate left [0, p0]")
        step = np.max(np.abs(p_new - p))
        p = p_new
        if keep_trace:
            trace.append(p)
        if step < best_step:
            best, best_step = p, step
        if step < tol:
            converged = True
            break
    if not converged:
        p = best
    return GameResult(p, it, converged, price_from_lambda(lam, terms, p), tuple(trace))
