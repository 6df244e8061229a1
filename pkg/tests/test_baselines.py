import numpy as np
import pytest

from famec.baselines import (RankDeficientChannel, default_lambda_grid, exhaustive_apv_oracle,
                             matched_filter, oracle_decision, pinv_beamformer, scheme_spec,
                             waterfill_beta, zf_beamformer)
from famec.config import ScenarioConfig
from famec.hitdma import enumerate_apv_actions
from famec.sysmodel import ControlDecision, compute_delays, evaluate_decision, synthesize_channel


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def test_zf_orthogonal_columns_is_matched_filter():
    H = np.array([[2.0, 0], [0, 1j], [0, 0]])
    W = zf_beamformer(H)
    for n in range(2):
        cos = abs(np.vdot(W[:, n], H[:, n])) / (np.linalg.norm(W[:, n]) * np.linalg.norm(H[:, n]))
        assert np.isclose(cos, 1.0)


def test_zf_nulls_interference():
    rng = np.random.default_rng(0)
    for _ in range(20):
        H = crandn(rng, 4, 2)
        W = zf_beamformer(H)
        assert abs(np.vdot(W[:, 0], H[:, 1])) < 1e-8 * np.linalg.norm(H[:, 1])
        assert abs(np.vdot(W[:, 1], H[:, 0])) < 1e-8 * np.linalg.norm(H[:, 0])
        assert np.all(np.linalg.norm(W, axis=0) <= 1 + 1e-12)
        # rescaling keeps the direction of H (H^H H)^-1
        raw = H @ np.linalg.inv(H.conj().T @ H)
        cos = abs(np.vdot(W[:, 0], raw[:, 0])) / (np.linalg.norm(W[:, 0]) * np.linalg.norm(raw[:, 0]))
        assert abs(cos - 1) < 1e-10


def test_zf_errors():
    rng = np.random.default_rng(1)
    with pytest.raises(RankDeficientChannel, match="N <= N_p"):
        zf_beamformer(crandn(rng, 2, 3))
    h = crandn(rng, 3, 1)
    with pytest.raises(RankDeficientChannel, match="rank"):
        zf_beamformer(np.hstack([h, 2 * h]))
    W = pinv_beamformer(crandn(rng, 2, 3))
    assert W.shape == (2, 3) and np.all(np.linalg.norm(W, axis=0) <= 1 + 1e-12)


def test_waterfill_balances_offloaded_users():
    cfg = ScenarioConfig(task_size=1e6, mec_cpu=1e8, local_cpu=1e6)
    t_t = np.array([0.01, 0.02, 0.05])
    b = waterfill_beta(cfg, t_t)
    assert np.isclose(b.sum(), 1)
    rep = compute_delays(cfg, cfg.task_size / t_t, b)
    assert np.ptp(rep.t_total) < 1e-6
    # any other split is no better
    rng = np.random.default_rng(2)
    for _ in range(200):
        other = rng.dirichlet(np.ones(3))
        assert compute_delays(cfg, cfg.task_size / t_t, other).system_delay >= rep.system_delay - 1e-9


def test_oracle_single_port_picks_strongest():
    cfg = ScenarioConfig(n_users=1, n_ports=4, n_elements=1, fa_length=1.5)
    for s in range(5):
        real = synthesize_channel(cfg, s)
        dec, _ = exhaustive_apv_oracle(cfg, real)
        assert dec.apvs[0, 0] == int(np.argmax(np.abs(real.small_scale_grid[0])))


def tiny_cfg():
    return ScenarioConfig(n_users=2, n_ports=5, n_elements=2, fa_length=2.0, bandwidth=1e8)


def test_oracle_dominates_random_decisions():
    cfg = tiny_cfg()
    real = synthesize_channel(cfg, 3)
    _, best = exhaustive_apv_oracle(cfg, real)
    actions = enumerate_apv_actions(cfg)
    rng = np.random.default_rng(0)
    for _ in range(1000):
        apvs = np.array([actions[rng.integers(len(actions))] for _ in range(2)])
        W = crandn(rng, 2, 2)
        W /= np.maximum(np.linalg.norm(W, axis=0), 1)
        p = rng.uniform(0, cfg.p_max, 2)
        beta = rng.dirichlet(np.ones(2))
        t = evaluate_decision(real, ControlDecision(apvs, W, p, beta), cfg).system_delay
        assert t >= best - 1e-12


def test_oracle_lambda_grid_subset_monotone():
    cfg = tiny_cfg()
    real = synthesize_channel(cfg, 4)
    grid = default_lambda_grid(cfg, 9)
    _, full = exhaustive_apv_oracle(cfg, real, lambda_grid=grid)
    _, sub = exhaustive_apv_oracle(cfg, real, lambda_grid=grid[::2])
    assert sub >= full


def test_oracle_space_limits():
    cfg = tiny_cfg()
    real = synthesize_channel(cfg, 0)
    with pytest.raises(Exception):
        exhaustive_apv_oracle(cfg, real, lambda_grid=np.ones(1001))
    with pytest.raises(Exception):
        exhaustive_apv_oracle(cfg, real, max_evaluations=10)


def test_scheme_specs():
    cfg = ScenarioConfig(n_ports=8, n_elements=2)
    assert scheme_spec("fpa", cfg).fixed_apv == (0, 7)
    assert scheme_spec("fp", cfg).fixed_power == cfg.p_max
    assert scheme_spec("zf", cfg).convention(cfg) == "conventional"
    assert scheme_spec("maddpg", cfg).agent_class == "ddpg"
    with pytest.raises(Exception):
        scheme_spec("s-bar", cfg)


def test_oracle_decision_is_feasible():
    from famec.sysmodel import validate_constraints
    cfg = tiny_cfg()
    real = synthesize_channel(cfg, 1)
    dec = oracle_decision(real, [[0, 2], [1, 4]], 3.0, cfg)
    assert validate_constraints(dec, cfg) == []
    assert np.allclose(np.linalg.norm(matched_filter(np.ones((2, 2))), axis=0), 1)
