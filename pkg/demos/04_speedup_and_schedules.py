"""More agents, smaller gap; fewer syncs, same gap.

The first sweep varies the number of agents with K fixed per agent. The
second compares a tight periodic schedule with the exponential one.
"""
import numpy as np

from fedlcbq.experiments import ExperimentConfig, run_experiment, run_sweep
from fedlcbq.schedules import build_schedule, exponential_round_bound

base = dict(mdp={"generator": "random", "S": 4, "A": 2, "H": 3, "seed": 0},
            behaviors={"kind": "epsilon_optimal", "epsilon": 0.5},
            schedule={"kind": "exponential", "gamma": "2/H"}, hyper={"c_B": 0.01})

for M in (1, 2, 4, 8):
    cfg = ExperimentConfig(M=M, K=2000, seeds=list(range(10)), **base)
    gaps = [run_experiment(cfg, s).rows[-1]["value_gap"] for s in cfg.seeds]
    print(f"M={M}: mean final gap {np.mean(gaps):.4f} +- {np.std(gaps):.4f}")

# schedule axis via the sweep runner
cfg = ExperimentConfig(M=4, K=1000, seeds=[0, 1, 2],
                       axes={"schedule": [{"kind": "periodic", "tau": 3},
                                          {"kind": "exponential", "gamma": "2/H"}]},
                       **base)
_, summary = run_sweep(cfg)
for row in summary:
    print(row["cell"], "rounds", row["comm_rounds"], "gap", round(row["mean_final_gap"], 4))

# round counts grow like H log K
for H in (2, 5, 10):
    K = 10_000
    s = build_schedule("exponential", K, H=H, gamma=2 / H)
    print(f"H={H}: {len(s)} rounds, bound {exponential_round_bound(K, H):.1f}")
