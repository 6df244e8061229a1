"""Offloading MDP and the hierarchical DUA -> TBA training loop.

Each slot the user agents pick APVs from the (estimated) channel, the
base-station agents observe those APVs and emit beamformer, price factor
and MEC shares; the price factor is expanded into powers by the pricing
game and the decision is executed on the true channel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from itertools import combinations

import numpy as np
import torch

from .agents import (ActorCriticTeam, D3QNAgent, ReplayBuffer, epsilon_at, linear_schedule,
                     select_discrete)
from .baselines import SchemeSpec, matched_filter, oracle_decision, scheme_spec, zf_or_pinv
from .config import ConfigError
from .csnet.training import EstimatorBundle, TrainingDiverged, estimate_channel
from .game import game_terms, run_power_game
from .sysmodel import (as_rng, channel_matrix, draw_positions, evaluate_decision,
                       evolve_channel, port_grid, synthesize_channel, validate_constraints,
                       with_grid, ControlDecision)
from .utils import deterministic_mode

log = logging.getLogger(__name__)

EVAL_FIELDS = ("scenario", "scheme", "user", "t_t", "t_exe", "t_l", "t_n", "T_s")
TRACE_FIELDS = ("episode", "reward", "eps", "loss_dua", "loss_tba")


class ConstraintViolation(RuntimeError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{v.constraint}@{v.user}: {v.detail}" for v in self.violations))


# --- reward -----------------------------------------------------------------------

@dataclass(frozen=True)
class RewardParams:
    delta: float
    t1: float
    t2: float

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError("reward scale must be positive", field="drl.reward_delta")
        if not self.t1 < self.t2:
            raise ConfigError(f"reward thresholds need t1 < t2, got {self.t1} >= {self.t2}",
                              field="reward")


def compute_reward(T_s, params):
    if T_s <= params.t1:
        return params.delta
    if T_s <= params.t2:
        return params.delta * (params.t2 - T_s) / (params.t2 - params.t1)
    return 0.0


# --- action spaces ---------------------------------------------------------------

def min_index_gap(cfg):
    """Smallest index distance whose physical separation reaches l/2."""
    return max(1, math.ceil((cfg.wavelength / 2 - 1e-9) / cfg.port_spacing - 1e-12))


def count_apv_actions(cfg):
    g = min_index_gap(cfg)
    free = cfg.n_ports - (g - 1) * (cfg.n_elements - 1)
    return math.comb(free, cfg.n_elements) if free >= cfg.n_elements else 0


def enumerate_apv_actions(cfg, cap=None):
    """All spacing-feasible N_p-subsets of the port grid, lexicographic."""
    cap = cfg.drl.action_cap if cap is None else cap
    count = count_apv_actions(cfg)
    if count > cap:
        raise ConfigError(f"{count} feasible APVs exceed the action cap {cap}; "
                          f"reduce n_elements or n_ports", field="n_ports")
    if count == 0:
        raise ConfigError("no APV satisfies the l/2 spacing rule", field="n_ports")
    pos = port_grid(cfg)
    half = cfg.wavelength / 2 - 1e-9
    out = [c for c in combinations(range(cfg.n_ports), cfg.n_elements)
           if all(pos[b] - pos[a] >= half for a, b in zip(c, c[1:]))]
    return out


@dataclass(frozen=True)
class BsAction:
    beamformer: np.ndarray
    lam: float
    beta: np.ndarray


def bs_action_dim(cfg):
    return 2 * cfg.n_elements * cfg.n_users + 1 + cfg.n_users


def project_beamformer(raw_w, cfg):
    """(2 N_p N,) -> N_p x N complex, columns projected onto the unit ball."""
    n_p, n = cfg.n_elements, cfg.n_users
    half = n_p * n
    W = (raw_w[:half] + 1j * raw_w[half:]).reshape(n, n_p).T
    norms = np.linalg.norm(W, axis=0)
    dead = norms < 1e-12
    W[:, dead] = 1.0 / np.sqrt(n_p)      # a zero column would silence the user
    norms[dead] = 1.0
    return W / np.maximum(norms, 1.0)


def lambda_from_raw(raw, cfg):
    return float(np.exp(cfg.drl.lambda_scale * raw))


def beta_from_raw(raw, cfg):
    z = cfg.drl.beta_scale * np.asarray(raw, dtype=float)
    e = np.exp(z - z.max())
    return e / e.sum()


def map_bs_action(raw, cfg):
    raw = np.asarray(raw, dtype=float)
    if raw.shape != (bs_action_dim(cfg),):
        raise ValueError(f"raw action has shape {raw.shape}, expected ({bs_action_dim(cfg)},)")
    k = 2 * cfg.n_elements * cfg.n_users
    return BsAction(project_beamformer(raw[:k], cfg), lambda_from_raw(raw[k], cfg),
                    beta_from_raw(raw[k + 1:], cfg))


def expand_powers(W, H, lam, cfg, convention=None):
    terms = game_terms(W, H, cfg.p_max, cfg.noise_power, cfg.game.nu, cfg.game.phi_c,
                       convention or cfg.sinr_convention)
    return run_power_game(lam, terms, cfg.game.tol, cfg.game.max_iter)


# --- states ------------------------------------------------------------------------

def build_user_state(est_grid, positions, prev_delays, cfg, delay_ref):
    """[Re g, Im g, |g|, positions, previous delays], users in canonical order."""
    g = np.asarray(est_grid)
    return np.concatenate([
        g.real.ravel(), g.imag.ravel(), np.abs(g).ravel(),
        (np.asarray(positions) / cfg.max_distance).ravel(),
        np.minimum(np.asarray(prev_delays) / delay_ref, 10.0),
    ]).astype(np.float32)


def user_state_dim(cfg):
    return 3 * cfg.n_users * cfg.n_ports + 2 * cfg.n_users + cfg.n_users


def egocentric(est_grid, positions, prev_delays, cfg, delay_ref, n):
    """User-n view for the shared DUA: user n rotated into the first slot."""
    roll = lambda x: np.roll(np.asarray(x), -n, axis=0)  # noqa: E731
    return build_user_state(roll(est_grid), roll(positions), roll(prev_delays), cfg, delay_ref)


def build_bs_state(user_state, apvs, cfg):
    apvs = np.asarray(apvs, dtype=float) / max(cfg.n_ports - 1, 1)
    return np.concatenate([user_state, apvs.ravel()]).astype(np.float32)


def build_states(realization, estimator, prev_delays, cfg, delay_ref, apvs=None, history=None):
    est = estimate_channel(history or [realization], estimator, cfg)
    us = build_user_state(est, realization.user_positions, prev_delays, cfg, delay_ref)
    if apvs is None:
        return us
    return build_bs_state(us, apvs, cfg)


# --- controller -----------------------------------------------------------------------

def action_layout(cfg, spec, n_actions):
    """Slices of the joint continuous action owned by each base-station head."""
    slices, dims = {}, []

    def add(name, d):
        slices[name] = (sum(dims), sum(dims) + d)
        dims.append(d)

    if spec.agent_class == "ddpg" and spec.learn_apv:
        add("apv", cfg.n_users * n_actions)     # relaxed port scores, argmax-decoded
    if spec.beamformer == "learned":
        add("beam", 2 * cfg.n_elements * cfg.n_users)
    if spec.fixed_power is None:
        add("lam", 1)
    add("beta", cfg.n_users)
    return slices, dims


class PerUserDUA:
    """One D3QN per user; row n of a state batch goes to agent n."""

    def __init__(self, state_dim, n_actions, params, n_users):
        self.agents = [D3QNAgent(state_dim, n_actions, params) for _ in range(n_users)]

    def q_values(self, states):
        return np.stack([ag.q_values(s) for ag, s in zip(self.agents, states)])


@dataclass
class Controller:
    """Agents of one scheme plus the fixed parts of its decision rule."""

    cfg: object
    spec: SchemeSpec
    actions: list
    dua: object = None
    team: object = None
    slices: dict = field(default_factory=dict)

    @classmethod
    def build(cls, cfg, spec):
        actions = enumerate_apv_actions(cfg)
        slices, dims = action_layout(cfg, spec, len(actions))
        us = user_state_dim(cfg)
        ddpg = spec.agent_class == "ddpg"
        dua = None
        if spec.learn_apv and not ddpg:
            dua = (D3QNAgent(us, len(actions), cfg.drl) if cfg.drl.shared_dua
                   else PerUserDUA(us, len(actions), cfg.drl, cfg.n_users))
        state_dim = us if ddpg else us + cfg.n_users * cfg.n_elements
        team = ActorCriticTeam(state_dim, dims, cfg.drl, twin=not ddpg)
        return cls(cfg, spec, actions, dua, team, slices)

    @property
    def uses_bs_state(self):
        return self.spec.agent_class != "ddpg"

    def modules(self):
        out = dict(self.team.modules("tba"))
        if isinstance(self.dua, PerUserDUA):
            out.update({f"dua{n}.online": ag.online for n, ag in enumerate(self.dua.agents)})
        elif self.dua is not None:
            out["dua.online"] = self.dua.online
        return out

    def fixed_apv_index(self):
        return self.actions.index(tuple(self.spec.fixed_apv))

    # -- decision pieces
    def pick_apvs(self, ego_states, eps, rng, random=False, team_raw=None):
        n = self.cfg.n_users
        if self.spec.learn_apv and self.dua is None:
            lo, hi = self.slices["apv"]
            scores = team_raw[lo:hi].reshape(n, len(self.actions))
            return [int(np.argmax(s)) for s in scores]
        if not self.spec.learn_apv:
            if self.spec.fixed_apv is None:
                raise ValueError("scheme without DUAs needs a fixed APV")
            return [self.fixed_apv_index()] * n
        if random:
            return [int(rng.integers(len(self.actions))) for _ in range(n)]
        q = self.dua.q_values(np.stack(ego_states))
        return [select_discrete(q[i], eps, rng) for i in range(n)]

    def team_action(self, state, noise, rng, random=False):
        if random:
            return rng.uniform(-1.0, 1.0, size=self.team.action_dim)
        return self.team.act(state, noise, rng)

    def decide(self, raw, apv_idx, est_real):
        cfg, spec = self.cfg, self.spec
        apvs = np.array([self.actions[i] for i in apv_idx])
        H = channel_matrix(est_real, apvs)
        if spec.beamformer == "learned":
            lo, hi = self.slices["beam"]
            W = project_beamformer(raw[lo:hi], cfg)
        elif spec.beamformer == "zf":
            W = zf_or_pinv(H)
        else:
            W = matched_filter(H)
        lo, hi = self.slices["beta"]
        beta = beta_from_raw(raw[lo:hi], cfg)
        if spec.fixed_power is None:
            lam = lambda_from_raw(raw[self.slices["lam"][0]], cfg)
            p = expand_powers(W, H, lam, cfg, spec.convention(cfg)).powers
        else:
            lam = None
            p = np.full(cfg.n_users, float(spec.fixed_power))
        return ControlDecision(apvs, W, p, beta, lam)


# --- environment -----------------------------------------------------------------------

class Environment:
    """One episode = fixed geometry, Gauss-Markov small-scale evolution per slot."""

    def __init__(self, cfg, spec, reward_params, estimator=None, rng=None, positions=None):
        self.cfg = cfg
        self.spec = spec
        self.exec_cfg = replace(cfg, sinr_convention=spec.convention(cfg))
        self.reward_params = reward_params
        self.estimator = estimator if estimator is not None else EstimatorBundle.perfect()
        self.rng = as_rng(rng)
        self.fixed_positions = positions
        self.history = []
        self.prev_delays = None
        self.steps_validated = 0

    @property
    def current(self):
        return self.history[-1]

    def reset(self, positions=None):
        pos = positions if positions is not None else self.fixed_positions
        real = synthesize_channel(self.cfg, self.rng, pos)
        self.history = [real]
        self.prev_delays = np.full(self.cfg.n_users, self.cfg.task_size / self.cfg.local_cpu)
        return real

    def estimate(self):
        window = self.history[-self.cfg.cs.snapshots:]
        return with_grid(self.current, estimate_channel(window, self.estimator, self.cfg))

    def step(self, decision):
        violations = validate_constraints(decision, self.cfg)
        if violations:
            raise ConstraintViolation(violations)
        self.steps_validated += 1
        report = evaluate_decision(self.current, decision, self.exec_cfg)
        reward = compute_reward(report.system_delay, self.reward_params)
        self.prev_delays = report.t_total.copy()
        self.history.append(evolve_channel(self.current, self.cfg, self.rng))
        self.history = self.history[-self.cfg.cs.snapshots:]
        return report, reward


def env_step(realization, decision, cfg, reward_params, rng):
    """Functional form: execute ``decision`` on ``realization`` and draw the next slot."""
    violations = validate_constraints(decision, cfg)
    if violations:
        raise ConstraintViolation(violations)
    report = evaluate_decision(realization, decision, cfg)
    return report, compute_reward(report.system_delay, reward_params), evolve_channel(
        realization, cfg, rng)


def calibrate_reward(cfg, seed=0, samples=None, positions=None):
    """t1/t2 = 25th/90th percentile of T_s under uniformly random decisions."""
    samples = cfg.drl.reward_samples if samples is None else samples
    rng = as_rng(np.random.SeedSequence([seed, 7]))
    spec = SchemeSpec("proposed")
    actions = enumerate_apv_actions(cfg)
    ctl = Controller(cfg, spec, actions, slices=action_layout(cfg, spec, len(actions))[0])
    ts = []
    for _ in range(samples):
        real = synthesize_channel(cfg, rng, positions)
        idx = [int(rng.integers(len(ctl.actions))) for _ in range(cfg.n_users)]
        dec = ctl.decide(rng.uniform(-1, 1, bs_action_dim(cfg)), idx, real)
        ts.append(evaluate_decision(real, dec, cfg).system_delay)
    t1, t2 = np.percentile(ts, [25, 90])
    if not t2 > t1:
        t2 = t1 * (1 + 1e-6) + 1e-12
    return RewardParams(cfg.drl.reward_delta, float(t1), float(t2))


# --- training -----------------------------------------------------------------------------

@dataclass
class TrainResult:
    controller: Controller
    trace: list
    reward_params: RewardParams
    positions: object
    seed: int
    steps_validated: int
    estimator: object = None


def _nanmean(xs):
    return float(np.mean(xs)) if xs else float("nan")


def train(cfg, spec=None, seed=0, estimator=None, episodes=None, slots=None,
          reward_params=None, deterministic=True):
    """Alternate DUA (APV) and TBA (continuous) decisions; store and learn every slot."""
    spec = spec or scheme_spec("proposed", cfg)
    if isinstance(spec, str):
        spec = scheme_spec(spec, cfg)
    d = cfg.drl
    episodes = d.episodes if episodes is None else episodes
    slots = d.slots if slots is None else slots
    with deterministic_mode(deterministic):
        torch.manual_seed(seed)
        ss = np.random.SeedSequence(seed)
        env_ss, act_ss, buf_ss, pos_ss = ss.spawn(4)
        positions = None if d.redraw_positions else draw_positions(cfg, pos_ss)
        reward_params = reward_params or calibrate_reward(cfg, seed, positions=positions)
        ctl = Controller.build(cfg, spec)
        env = Environment(cfg, spec, reward_params, estimator, env_ss, positions)
        rng = as_rng(act_ss)
        dua_ss, tba_ss = buf_ss.spawn(2)
        # one buffer shared by all users, or one per user agent
        dua_agents = ctl.dua.agents if isinstance(ctl.dua, PerUserDUA) else [ctl.dua]
        dua_bufs = [ReplayBuffer(d.buffer_size, np.random.default_rng(s))
                    for s in ([dua_ss] if len(dua_agents) == 1 else dua_ss.spawn(len(dua_agents)))]
        tba_buf = ReplayBuffer(d.buffer_size, np.random.default_rng(tba_ss))
        ref = reward_params.t2
        scale = 1.0 / reward_params.delta
        trace, step = [], 0

        def observe():
            est = env.estimate()
            us = build_user_state(est.small_scale_grid, est.user_positions, env.prev_delays, cfg, ref)
            ego = [egocentric(est.small_scale_grid, est.user_positions, env.prev_delays, cfg, ref, n)
                   for n in range(cfg.n_users)]
            return est, us, ego

        for ep in range(episodes):
            eps = epsilon_at(ep, d)
            noise = linear_schedule(ep, d.noise_start, d.noise_end, d.eps_decay_epochs)
            env.reset()
            est, us, ego = observe()
            warm = step < d.warmup_steps
            raw_pre = ctl.team_action(us, noise, rng, warm) if not ctl.uses_bs_state else None
            apv = ctl.pick_apvs(ego, eps, rng, warm, raw_pre)
            rewards, l_dua, l_tba = [], [], []
            for t in range(slots):
                warm = step < d.warmup_steps
                if ctl.uses_bs_state:
                    s_team = build_bs_state(us, [ctl.actions[i] for i in apv], cfg)
                    raw = ctl.team_action(s_team, noise, rng, warm)
                else:
                    s_team, raw = us, raw_pre
                decision = ctl.decide(raw, apv, est)
                _, r = env.step(decision)
                rewards.append(r)
                est2, us2, ego2 = observe()
                last = t == slots - 1
                nwarm = (step + 1) < d.warmup_steps
                if ctl.uses_bs_state:
                    apv2 = ctl.pick_apvs(ego2, 0.0 if last else eps, rng, nwarm and not last)
                    s_team2 = build_bs_state(us2, [ctl.actions[i] for i in apv2], cfg)
                    raw2 = None
                else:
                    raw2 = ctl.team_action(us2, 0.0 if last else noise, rng, nwarm and not last)
                    apv2 = ctl.pick_apvs(ego2, 0.0, rng, False, raw2)
                    s_team2 = us2
                if ctl.dua is not None:
                    for n in range(cfg.n_users):
                        dua_bufs[n % len(dua_bufs)].add(ego[n], apv[n], r, ego2[n], False)
                tba_buf.add(s_team, raw, r, s_team2, False)
                step += 1
                if step >= d.warmup_steps:
                    for _ in range(d.updates_per_step):
                        if ctl.dua is not None:
                            for ag, buf in zip(dua_agents, dua_bufs):
                                if len(buf) >= d.batch_size:
                                    l_dua.append(ag.update(buf.sample(d.batch_size), scale))
                        if len(tba_buf) >= d.batch_size:
                            l_tba.append(ctl.team.update(tba_buf.sample(d.batch_size), scale))
                    bad = [x for x in (l_dua[-1:] + l_tba[-1:]) if not np.isfinite(x)]
                    if bad:
                        err = TrainingDiverged(f"non-finite agent loss at episode {ep}, slot {t}")
                        err.last_state = {k: m.state_dict() for k, m in ctl.modules().items()}
                        raise err
                est, us, ego, apv, raw_pre = est2, us2, ego2, apv2, raw2
            trace.append({"episode": ep, "reward": float(np.mean(rewards)), "eps": eps,
                          "loss_dua": _nanmean(l_dua), "loss_tba": _nanmean(l_tba)})
            if ep % 50 == 0:
                log.info("%s ep %d reward %.2f eps %.3f", spec.name, ep, trace[-1]["reward"], eps)
        return TrainResult(ctl, trace, reward_params, positions, seed, env.steps_validated,
                           estimator)


# --- evaluation ------------------------------------------------------------------------

def make_scenarios(cfg, seed, n_episodes, slots, positions=None):
    """Held-out slot sequences; geometry fixed to ``positions`` when given."""
    rng = as_rng(np.random.SeedSequence([seed, 1009]))
    out = []
    for _ in range(n_episodes):
        real = synthesize_channel(cfg, rng, positions)
        seq = [real]
        for _ in range(slots - 1):
            real = evolve_channel(real, cfg, rng)
            seq.append(real)
        out.append(seq)
    return out


def _rows(scenario, scheme, report):
    return [{"scenario": scenario, "scheme": scheme, "user": n,
             "t_t": float(report.t_trans[n]), "t_exe": float(report.t_exe[n]),
             "t_l": float(report.t_local[n]), "t_n": float(report.t_total[n]),
             "T_s": float(report.system_delay)} for n in range(report.t_total.size)]


def evaluate(result, scenarios, record=None):
    """Greedy, noise-free rollouts over ``scenarios`` (lists of slot realizations).

    Returns evaluation rows; ``record`` (a list) collects the executed decisions.
    """
    ctl = result.controller
    cfg, spec = ctl.cfg, ctl.spec
    exec_cfg = replace(cfg, sinr_convention=spec.convention(cfg))
    estimator = result.estimator if result.estimator is not None else EstimatorBundle.perfect()
    ref = result.reward_params.t2
    rng = np.random.default_rng(0)      # unused at eps = noise = 0
    rows, sid = [], 0
    for seq in scenarios:
        prev = np.full(cfg.n_users, cfg.task_size / cfg.local_cpu)
        for k, real in enumerate(seq):
            window = seq[max(0, k + 1 - cfg.cs.snapshots):k + 1]
            est = with_grid(real, estimate_channel(window, estimator, cfg))
            g = est.small_scale_grid
            us = build_user_state(g, real.user_positions, prev, cfg, ref)
            if ctl.uses_bs_state:
                ego = [egocentric(g, real.user_positions, prev, cfg, ref, n) for n in range(cfg.n_users)]
                apv = ctl.pick_apvs(ego, 0.0, rng)
                raw = ctl.team_action(build_bs_state(us, [ctl.actions[i] for i in apv], cfg), 0.0, rng)
            else:
                raw = ctl.team_action(us, 0.0, rng)
                apv = ctl.pick_apvs(None, 0.0, rng, False, raw)
            dec = ctl.decide(raw, apv, est)
            violations = validate_constraints(dec, cfg)
            if violations:
                raise ConstraintViolation(violations)
            if record is not None:
                record.append(dec)
            rep = evaluate_decision(real, dec, exec_cfg)
            rows.extend(_rows(sid, spec.name, rep))
            prev = rep.t_total.copy()
            sid += 1
    return rows


def evaluate_oracle(cfg, scenarios, spec=None, lambda_grid=None):
    from .baselines import exhaustive_apv_oracle
    name = spec.name if spec is not None else "oracle"
    rows, sid = [], 0
    actions = enumerate_apv_actions(cfg)
    for seq in scenarios:
        for real in seq:
            dec, _ = exhaustive_apv_oracle(cfg, real, actions, lambda_grid)
            rows.extend(_rows(sid, name, evaluate_decision(real, dec, cfg)))
            sid += 1
    return rows


def system_delays(rows):
    """Per-scenario T_s from evaluation rows."""
    seen = {}
    for r in rows:
        seen.setdefault(r["scenario"], r["T_s"])
    return np.array([seen[k] for k in sorted(seen)])
