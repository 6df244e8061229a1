"""Benchmark schemes and brute-force reference solutions."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .config import ConfigError
from .game import game_terms, run_power_game
from .sysmodel import ControlDecision, channel_matrix, evaluate_decision


class RankDeficientChannel(ValueError):
    pass


@dataclass(frozen=True)
class SchemeSpec:
    name: str
    learn_apv: bool = True                 # DUAs active
    fixed_apv: Optional[tuple] = None      # used when learn_apv is False
    fixed_power: Optional[float] = None    # None -> lambda head + pricing game
    beamformer: str = "learned"            # learned | zf | mf
    agent_class: str = "td3"               # td3 | ddpg
    sinr_convention: Optional[str] = None  # None -> scenario setting

    def convention(self, cfg):
        return self.sinr_convention or cfg.sinr_convention


def default_apv(cfg):
    """Maximally spread N_p ports, starting at the first port."""
    return tuple(int(round(x)) for x in np.linspace(0, cfg.n_ports - 1, cfg.n_elements))


def scheme_spec(name, cfg):
    if name in ("proposed", "ibm-ccs", "ccs"):
        return SchemeSpec(name)
    if name == "fpa":
        return SchemeSpec(name, learn_apv=False, fixed_apv=default_apv(cfg))
    if name == "fp":
        return SchemeSpec(name, fixed_power=cfg.p_max)
    if name == "zf":
        return SchemeSpec(name, beamformer="zf", sinr_convention="conventional")
    if name == "maddpg":
        return SchemeSpec(name, agent_class="ddpg")
    if name == "oracle":
        return SchemeSpec(name, learn_apv=False, beamformer="mf")
    raise ConfigError(f"unknown scheme {name!r}", field="experiment.schemes")


# --- beamformers ---------------------------------------------------------------

def _unit_columns(W):
    norms = np.linalg.norm(W, axis=0)
    scale = np.where(norms > 1.0, 1.0 / np.where(norms > 0, norms, 1.0), 1.0)
    return W * scale


def zf_beamformer(H, rcond=1e-10):
    """W = H (H^H H)^-1 with columns rescaled into the unit ball.

    Raises RankDeficientChannel when N > N_p or H^H H is singular.
    """
    H = np.asarray(H, dtype=complex)
    n_p, n = H.shape
    if n > n_p:
        raise RankDeficientChannel(f"zero forcing needs N <= N_p, got N = {n} users "
                                   f"for N_p = {n_p} elements")
    s = np.linalg.svd(H, compute_uv=False)
    if s.min() <= rcond * max(s.max(), 1e-300):
        raise RankDeficientChannel(f"channel matrix has rank {int(np.sum(s > rcond * s.max()))} < {n}")
    W = H @ np.linalg.inv(H.conj().T @ H)
    return _unit_columns(W / np.linalg.norm(W, axis=0).max())


def pinv_beamformer(H):
    """Least-squares zero-forcing fallback, W = pinv(H)^H, usable for any rank."""
    W = np.linalg.pinv(np.asarray(H, dtype=complex)).conj().T
    norms = np.linalg.norm(W, axis=0)
    if norms.max() == 0:
        return matched_filter(H)
    return _unit_columns(W / norms.max())


def zf_or_pinv(H):
    try:
        return zf_beamformer(H)
    except RankDeficientChannel:
        return pinv_beamformer(H)


def matched_filter(H):
    H = np.asarray(H, dtype=complex)
    norms = np.linalg.norm(H, axis=0)
    W = H / np.where(norms > 0, norms, 1.0)
    W[:, norms == 0] = 1.0 / np.sqrt(H.shape[0])
    return W


# --- MEC split -------------------------------------------------------------------

def waterfill_beta(cfg, t_trans, rounds=10, points=64):
    """MEC shares minimising max_n min(t_t + C/(beta F), t_l), sum(beta) = 1.

    Search on the common delay target T, refined on a vectorised grid
    (``points**rounds`` resolution); users better off local get no share.
    """
    t_trans = np.asarray(t_trans, dtype=float)
    n = t_trans.size
    c = np.broadcast_to(np.asarray(cfg.task_size, dtype=float), (n,))
    t_l = c / cfg.local_cpu

    def need(T):
        T = np.atleast_1d(T)[:, None]
        active = (t_l > T) & (t_trans < T)
        blocked = np.any((t_l > T) & ~(t_trans < T), axis=1)
        gap = np.where(active, T - t_trans, 1.0)
        b = np.where(active, c / (cfg.mec_cpu * gap), 0.0)
        return np.where(blocked, np.inf, b.sum(axis=1)), active

    lo = float(np.min(np.minimum(t_trans, t_l)))
    hi = float(np.max(t_l))
    if need(hi)[0][0] > 1:
        return np.full(n, 1.0 / n)
    for _ in range(rounds):
        grid = np.linspace(lo, hi, points + 1)
        k = int(np.argmax(need(grid)[0] <= 1.0))   # total need falls with T
        if k == 0:
            hi = lo = grid[0]
            break
        lo, hi = grid[k - 1], grid[k]
    _, active = need(hi)
    active = active[0]
    beta = np.zeros(n)
    beta[active] = c[active] / (cfg.mec_cpu * (hi - t_trans[active]))
    if beta.sum() == 0:
        return np.full(n, 1.0 / n)
    return beta / beta.sum()


# --- exhaustive reference ---------------------------------------------------------

def default_lambda_grid(cfg, size=25):
    s = cfg.drl.lambda_scale
    return tuple(np.exp(np.linspace(-s, s, size)))


BEAMFORMER_RULES = {"mf": matched_filter, "zf": zf_or_pinv}


def _mec_decision(realization, apvs, W, p, lam, cfg, convention):
    probe = ControlDecision(apvs, W, p, np.full(len(apvs), 1.0 / len(apvs)), lam)
    rep = evaluate_decision(realization, probe, replace(cfg, sinr_convention=convention))
    return ControlDecision(apvs, W, p, waterfill_beta(cfg, rep.t_trans), lam)


def oracle_decision(realization, apvs, lam, cfg, convention=None, rule="mf"):
    """Fixed beamformer rule on the chosen ports, game powers from lambda, waterfilled beta."""
    convention = convention or cfg.sinr_convention
    apvs = np.asarray(apvs, dtype=int)
    H = channel_matrix(realization, apvs)
    W = BEAMFORMER_RULES[rule](H)
    terms = game_terms(W, H, cfg.p_max, cfg.noise_power, cfg.game.nu, cfg.game.phi_c, convention)
    p = run_power_game(lam, terms, cfg.game.tol, cfg.game.max_iter).powers
    return _mec_decision(realization, apvs, W, p, lam, cfg, convention)


def exhaustive_apv_oracle(cfg, realization, apv_actions=None, lambda_grid=None,
                          max_evaluations=10 ** 6, convention=None, rules=("mf", "zf")):
    """Brute force over every APV combination, beamformer rule and lambda grid point."""
    from .hitdma import enumerate_apv_actions
    actions = enumerate_apv_actions(cfg) if apv_actions is None else apv_actions
    grid = default_lambda_grid(cfg) if lambda_grid is None else tuple(lambda_grid)
    if len(grid) > 1000:
        raise ConfigError("lambda grid larger than 10^3 points", field="lambda_grid")
    count = len(actions) ** realization.n_users * len(grid) * len(rules)
    if count > max_evaluations:
        raise ConfigError(f"oracle search space {count} exceeds {max_evaluations}",
                          field="n_ports")
    conv = convention or cfg.sinr_convention
    ecfg = replace(cfg, sinr_convention=conv)
    best, best_t = None, np.inf
    for combo in itertools.product(range(len(actions)), repeat=realization.n_users):
        apvs = np.array([actions[i] for i in combo])
        H = channel_matrix(realization, apvs)
        for rule in rules:
            W = BEAMFORMER_RULES[rule](H)
            terms = game_terms(W, H, cfg.p_max, cfg.noise_power, cfg.game.nu, cfg.game.phi_c,
                               conv)
            last = None
            for lam in grid:
                p = run_power_game(lam, terms, cfg.game.tol, cfg.game.max_iter).powers
                if last is not None and np.array_equal(p, last):
                    continue        # same powers, same decision
                last = p
                dec = _mec_decision(realization, apvs, W, p, lam, cfg, conv)
                t = evaluate_decision(realization, dec, ecfg).system_delay
                if t < best_t:
                    best, best_t = dec, t
    return best, best_t


def run_baseline(scheme, cfg, seed=0, estimator=None, scenarios=None, episodes=None):
    """Train (when the scheme learns) and evaluate one benchmark scheme.

    Returns (rows, train_result); rows follow the evaluation CSV schema.
    """
    from .hitdma import evaluate, evaluate_oracle, train
    spec = scheme if isinstance(scheme, SchemeSpec) else scheme_spec(scheme, cfg)
    if spec.name == "oracle":
        return evaluate_oracle(cfg, scenarios, spec), None
    result = train(cfg, spec, seed=seed, estimator=estimator, episodes=episodes)
    return evaluate(result, scenarios), result
