"""One federated run, end to end.

Each agent holds K offline episodes from its own behavior policy. The learner
runs local Q updates and averages at the sync points; after each sync we
score the current greedy policy against V*.
"""
import numpy as np

from fedlcbq.data import make_behavior_policy, sample_agent_datasets
from fedlcbq.engine import HyperParams, run_fedlcbq
from fedlcbq.generators import random_mdp
from fedlcbq.mdp import evaluate_policy, value_iteration
from fedlcbq.schedules import build_schedule

mdp = random_mdp(S=4, A=2, H=3, seed=0)
v_star = float(mdp.rho @ value_iteration(mdp)[0].V[0])
M, K = 4, 2000

beh, _ = make_behavior_policy("epsilon_optimal", mdp, epsilon=0.5)
datasets = sample_agent_datasets(mdp, [beh] * M, K, master_seed=7)
print("episodes per agent:", [d.K for d in datasets])

sched = build_schedule("exponential", K, H=mdp.H, gamma=2 / mdp.H)
print("sync points:", sched.sync_points)

# small penalty constant so the pessimistic estimate leaves zero at this scale
hyper = HyperParams(c_B=0.01)

gaps = []
def on_sync(state):
    _, v = evaluate_policy(mdp, state.policy)
    v_pess = float(mdp.rho @ state.global_V[0])
    gaps.append((state.episode, v_star - v, v_pess))

res = run_fedlcbq(mdp, datasets, sched, hyper, on_sync=on_sync)
for k, gap, v_pess in gaps:
    print(f"k={k:5d}  gap={gap:.4f}  pessimistic V={v_pess:.4f}")

# pessimism: the learned lower bound never exceeds the true value of pi_k
_, v_final = evaluate_policy(mdp, res.policy)
print("final value", v_final, ">= pessimistic", float(mdp.rho @ res.values.V[0]))
