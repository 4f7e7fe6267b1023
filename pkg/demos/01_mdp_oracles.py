"""Exact planning on small tabular MDPs.

Value iteration, policy evaluation and occupancy recursions are the ground
truth every learned table is scored against. The last block builds the split
MDP where no single behavior policy covers the optimal path.
"""
import numpy as np

from fedlcbq.data import make_behavior_policy
from fedlcbq.generators import chain_mdp, random_mdp, split_masks, split_mdp
from fedlcbq.mdp import (average_concentrability, clipped_concentrability, evaluate_policy,
                         occupancy_distributions, value_iteration)

np.set_printoptions(precision=4, suppress=True)

# a random MDP: Dirichlet transitions, uniform rewards
mdp = random_mdp(S=4, A=2, H=3, seed=0)
vt, pi_star = value_iteration(mdp)
print("V*_1 per state:", vt.V[0])
print("V* under rho:", mdp.rho @ vt.V[0])
print("greedy actions (h, s):\n", pi_star.actions)

# the uniform policy can only do worse
unif, _ = make_behavior_policy("uniform", mdp)
_, v_unif = evaluate_policy(mdp, unif)
print("uniform policy value:", v_unif)

# occupancies are distributions at every step
occ = occupancy_distributions(mdp, unif)
print("d_h(s) row sums:", occ.d_state.sum(1))

# chain: one rewarding path, V* = 1
chain = chain_mdp(3, 4)
print("chain V*:", chain.rho @ value_iteration(chain)[0].V[0])

# split MDP, two agents with disjoint action masks
sp = split_mdp(4, 2, 3)
vt_sp, pi_sp = value_iteration(sp)
d_opt = occupancy_distributions(sp, pi_sp)
masks = split_masks(sp)
d_beh = []
for name in ("gate", "goal"):
    pol, _ = make_behavior_policy("masked_uniform", sp, allowed=masks[name])
    d = occupancy_distributions(sp, pol)
    d_beh.append(d)
    print(f"{name} agent concentrability:", clipped_concentrability(d_opt, d, sp.S))
print("averaged concentrability:", average_concentrability(d_opt, d_beh, sp.S))
print("split V*:", sp.rho @ vt_sp.V[0])
