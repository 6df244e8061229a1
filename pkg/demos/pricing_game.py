"""How the price factor lambda steers the power game on one channel draw.

Small lambda prices everyone out, large lambda lets every user transmit at
p_max.  In between, weak users (small effective gain) back off first.
"""

import numpy as np

from famec.baselines import matched_filter
from famec.config import ScenarioConfig
from famec.game import game_terms, run_power_game
from famec.sysmodel import channel_matrix, synthesize_channel


def main():
    cfg = ScenarioConfig(n_users=3, n_ports=16, n_elements=2, fa_length=8.0)
    real = synthesize_channel(cfg, 0)
    apvs = np.array([[0, 15]] * cfg.n_users)
    H = channel_matrix(real, apvs)
    terms = game_terms(matched_filter(H), H, cfg.p_max, cfg.noise_power, cfg.game.nu,
                       cfg.game.phi_c)
    print("relative effective gains:", np.round(terms.phi / terms.phi.max(), 3))
    for lam in (1e-3, 1e-1, 1.0, 10.0, 1e3):
        res = run_power_game(lam, terms)
        print(f"lambda {lam:8.3g}  p/p_max {np.round(res.powers / cfg.p_max, 3)}  "
              f"iterations {res.iterations}  converged {res.converged}")


if __name__ == "__main__":
    main()
