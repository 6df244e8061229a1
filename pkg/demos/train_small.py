"""Train the hierarchical agents on a small scenario and compare with fixed power.

Runs in a few minutes on one CPU.  Prints the reward curve coarsely and the
median held-out system delay of both schemes on the same geometry.
"""

import numpy as np

from famec.config import DRLParams, ScenarioConfig
from famec.hitdma import evaluate, make_scenarios, system_delays, train


def main(episodes=150, seed=0):
    drl = DRLParams(episodes=episodes, eps_decay_epochs=int(0.6 * episodes),
                    redraw_positions=False)
    cfg = ScenarioConfig(n_users=3, n_ports=8, n_elements=2, fa_length=4.0, bandwidth=1e8,
                         drl=drl)
    for scheme in ("proposed", "fp"):
        res = train(cfg, scheme, seed=seed)
        rewards = np.array([t["reward"] for t in res.trace])
        chunks = np.array_split(rewards, 5)
        print(scheme, "reward by fifth of training:", [round(float(c.mean()), 1) for c in chunks])
        scen = make_scenarios(cfg, 100 + seed, 3, 20, res.positions)
        ts = system_delays(evaluate(res, scen))
        print(f"  median held-out T_s {np.median(ts) * 1e3:.1f} ms over {ts.size} slots")


if __name__ == "__main__":
    main()
