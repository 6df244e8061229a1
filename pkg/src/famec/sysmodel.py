"""Ground-truth physics: FA channels, SINR, offloading rate and delays."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .config import ConfigError

SPACING_TOL = 1e-9


def as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def port_grid(cfg):
    """M uniformly spaced candidate port positions on [0, W*l] (meters)."""
    return np.linspace(0.0, cfg.fa_length * cfg.wavelength, cfg.n_ports)


def field_response(positions, theta, wavelength):
    """Per-port phase vector exp(j*2*pi/l * d_k * cos(theta))."""
    positions = np.asarray(positions, dtype=float)
    return np.exp(1j * (2.0 * np.pi / wavelength) * positions * np.cos(theta))


@dataclass(frozen=True)
class ChannelRealization:
    rho: np.ndarray              # (N,) large-scale amplitude
    aoa: np.ndarray              # (N, L) path angles in [0, pi)
    path_gains: np.ndarray       # (N, L) complex
    small_scale_grid: np.ndarray  # (N, M) complex, g~ over every candidate port
    user_positions: np.ndarray   # (N, 2) meters, BS at the origin

    @property
    def n_users(self):
        return self.small_scale_grid.shape[0]


def small_scale_grid(aoa, path_gains, ports, wavelength):
    # (N, L, M) plane waves summed over paths
    phase = (2.0 * np.pi / wavelength) * np.cos(aoa)[:, :, None] * ports[None, None, :]
    return np.einsum("nl,nlm->nm", path_gains, np.exp(1j * phase))


def large_scale_amplitude(cfg, positions):
    """Log-distance path loss with a 1 m free-space reference."""
    d2 = np.sum(np.asarray(positions) ** 2, axis=-1)
    dist = np.sqrt(d2 + cfg.bs_height ** 2)
    ref = cfg.wavelength / (4.0 * np.pi)
    return ref * dist ** (-cfg.pathloss_exp / 2.0)


def draw_positions(cfg, rng):
    rng = as_rng(rng)
    r = rng.uniform(cfg.min_distance, cfg.max_distance, size=cfg.n_users)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=cfg.n_users)
    return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)


def _complex_gauss(rng, shape, var):
    scale = np.sqrt(var / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def synthesize_channel(cfg, rng_seed, positions=None):
    """Draw one ChannelRealization.

    Path 0 arrives from the user's geometric direction, the remaining L-1
    paths from uniform angles.  Path gains are CN(0, 1/L) so that
    E|g~(d)|^2 = 1 at every port.
    """
    if cfg.n_paths < 1:
        raise ConfigError("need at least one propagation path", field="n_paths")
    rng = as_rng(rng_seed)
    if positions is None:
        positions = draw_positions(cfg, rng)
    positions = np.asarray(positions, dtype=float)
    n, n_paths = cfg.n_users, cfg.n_paths
    aoa = np.empty((n, n_paths))
    # angle between the array axis (x) and the user direction, folded into [0, pi]
    aoa[:, 0] = np.arccos(np.clip(positions[:, 0] / np.linalg.norm(positions, axis=1), -1, 1))
    if n_paths > 1:
        aoa[:, 1:] = rng.uniform(0.0, np.pi, size=(n, n_paths - 1))
    gains = _complex_gauss(rng, (n, n_paths), 1.0 / n_paths)
    return _assemble(cfg, positions, aoa, gains)


def _assemble(cfg, positions, aoa, gains):
    grid = small_scale_grid(aoa, gains, port_grid(cfg), cfg.wavelength)
    return ChannelRealization(
        rho=large_scale_amplitude(cfg, positions),
        aoa=aoa,
        path_gains=gains,
        small_scale_grid=grid,
        user_positions=positions,
    )


def evolve_channel(realization, cfg, rng):
    """Next-slot realization: Gauss-Markov path gains, geometry unchanged."""
    rng = as_rng(rng)
    a = cfg.time_corr
    fresh = _complex_gauss(rng, realization.path_gains.shape, 1.0 / cfg.n_paths)
    gains = a * realization.path_gains + np.sqrt(1.0 - a * a) * fresh
    return _assemble(cfg, realization.user_positions, realization.aoa, gains)


def with_grid(realization, grid):
    """Copy of ``realization`` with the small-scale grid replaced (e.g. by an estimate)."""
    return ChannelRealization(realization.rho, realization.aoa, realization.path_gains,
                              np.asarray(grid), realization.user_positions)


def build_channel(realization, n, apv):
    """h~_n = rho_n * g~_n restricted to the APV ports.

    The field-response factor of every path is already part of the grid, so
    for L = 1 this is exactly rho * gamma * alpha(d, theta).
    """
    apv = np.asarray(apv, dtype=int)
    grid = realization.small_scale_grid
    if apv.min(initial=0) < 0 or apv.max(initial=0) >= grid.shape[1]:
        raise IndexError(f"APV {apv.tolist()} outside the {grid.shape[1]}-port grid")
    return realization.rho[n] * grid[n, apv]


def channel_matrix(realization, apvs):
    """N_p x N matrix whose column n is user n's channel on its own APV."""
    return np.stack([build_channel(realization, n, apv) for n, apv in enumerate(apvs)], axis=1)


def compute_sinr(W, H, p, sigma2, convention="printed"):
    W = np.asarray(W, dtype=complex)
    H = np.asarray(H, dtype=complex)
    p = np.asarray(p, dtype=float)
    G = np.abs(W.conj().T @ H) ** 2          # G[n, k] = |w_n^H h_k|^2
    own = np.diag(G) * p
    if convention == "printed":
        interference = own.sum() - own
    elif convention == "conventional":
        interference = G @ p - own
    else:
        raise ValueError(f"unknown SINR convention {convention!r}")
    noise = np.sum(np.abs(W) ** 2, axis=0) * sigma2
    denom = interference + noise
    if np.any(denom <= 0):
        raise ZeroDivisionError("SINR denominator is zero: no interference and sigma^2 <= 0")
    return np.maximum(own / denom, 0.0)


def compute_rate(bandwidth, sinr):
    return bandwidth * np.log2(1.0 + np.asarray(sinr, dtype=float))


@dataclass(frozen=True)
class DelayReport:
    t_local: np.ndarray
    t_trans: np.ndarray      # np.inf marks an unreachable link
    t_exe: np.ndarray        # np.inf marks a user without MEC share
    t_total: np.ndarray
    system_delay: float
    sinr: Optional[np.ndarray] = None
    rate: Optional[np.ndarray] = None

    @property
    def offloaded(self):
        return self.t_trans + self.t_exe < self.t_local


def _safe_div(num, den):
    den = np.asarray(den, dtype=float)
    out = np.full(den.shape, np.inf)
    ok = den > 0
    with np.errstate(over="ignore"):     # vanishing rates saturate to unreachable
        out[ok] = num[ok] / den[ok]
    return out


def compute_delays(cfg, rates, beta, sinr=None):
    rates = np.asarray(rates, dtype=float)
    beta = np.asarray(beta, dtype=float)
    size = np.broadcast_to(np.asarray(cfg.task_size, dtype=float), rates.shape)
    t_local = size / cfg.local_cpu
    t_trans = _safe_div(size, rates)
    t_exe = _safe_div(size, beta * cfg.mec_cpu)
    t_total = np.minimum(t_trans + t_exe, t_local)
    return DelayReport(t_local, t_trans, t_exe, t_total, float(t_total.max()), sinr, rates)


@dataclass(frozen=True)
class ControlDecision:
    apvs: np.ndarray            # (N, N_p) port indices
    beamformer: np.ndarray      # (N_p, N) complex
    powers: np.ndarray          # (N,) Watts
    beta: np.ndarray            # (N,) MEC shares
    lam: Optional[float] = None  # price factor that produced ``powers``


class Violation(NamedTuple):
    constraint: str
    user: Optional[int]
    detail: str


def apv_violations(apv, cfg, user=None):
    apv = np.asarray(apv)
    out = []
    if apv.shape != (cfg.n_elements,):
        return [Violation("C1", user, f"APV has shape {apv.shape}, expected ({cfg.n_elements},)")]
    if apv.min() < 0 or apv.max() >= cfg.n_ports:
        out.append(Violation("C1", user, "port index outside the grid"))
        return out
    if np.any(np.diff(apv) <= 0):
        out.append(Violation("C1", user, "ports not strictly increasing"))
    gaps = np.diff(port_grid(cfg)[apv])
    if gaps.size and gaps.min() < cfg.wavelength / 2 - SPACING_TOL:
        out.append(Violation("C1", user, f"port separation {gaps.min():.4g} m below l/2"))
    return out


def validate_constraints(decision, cfg, tol=1e-9):
    """List every violated constraint of P1 (empty list = feasible)."""
    out = []
    for n, apv in enumerate(decision.apvs):
        out.extend(apv_violations(apv, cfg, n))
    norms = np.sum(np.abs(np.asarray(decision.beamformer)) ** 2, axis=0)
    for n, v in enumerate(norms):
        if v > 1.0 + tol:
            out.append(Violation("C2", n, f"||w||^2 = {v:.6g} > 1"))
    for n, p in enumerate(np.asarray(decision.powers, dtype=float)):
        if not (-tol <= p <= cfg.p_max * (1 + tol)):
            out.append(Violation("C3", n, f"p = {p:.6g} outside [0, {cfg.p_max:.6g}]"))
    beta = np.asarray(decision.beta, dtype=float)
    for n, b in enumerate(beta):
        if not (-tol <= b <= 1 + tol):
            out.append(Violation("C4", n, f"beta = {b:.6g} outside [0, 1]"))
    if beta.sum() > 1 + tol:
        out.append(Violation("C4", None, f"sum(beta) = {beta.sum():.6g} > 1"))
    if decision.lam is not None and not decision.lam > 0:
        out.append(Violation("C3'", None, f"lambda = {decision.lam} is not positive"))
    return out


def evaluate_decision(realization, decision, cfg):
    """SINR -> rate -> delays for one executed decision on the true channel."""
    H = channel_matrix(realization, decision.apvs)
    sinr = compute_sinr(decision.beamformer, H, decision.powers, cfg.noise_power,
                        cfg.sinr_convention)
    rate = compute_rate(cfg.bandwidth, sinr)
    return compute_delays(cfg, rate, decision.beta, sinr=sinr)
