"""Auditing a run from its trace.

The trace records every local visit and the global tables at each sync. From
it the diagnostics rebuild the averaging weights in closed form and split the
Q error into initialization, transition noise, penalty and propagated error.
"""
import numpy as np

from fedlcbq import diagnostics as dg
from fedlcbq.data import make_behavior_policy, sample_agent_datasets
from fedlcbq.engine import HyperParams, run_fedlcbq
from fedlcbq.generators import random_mdp
from fedlcbq.schedules import build_schedule
from fedlcbq.trace import RunTrace

mdp = random_mdp(S=3, A=2, H=3, seed=8)
pol, _ = make_behavior_policy("uniform", mdp)
ds = sample_agent_datasets(mdp, [pol] * 3, 1000, master_seed=1)
sched = build_schedule("exponential", 1000, H=3, gamma=2 / 3)
# c_B small enough that V leaves zero, so the noise term is not trivially 0
tr = run_fedlcbq(mdp, ds, sched, HyperParams(c_B=0.001), trace=True).trace

# round trip through the binary format
tr = RunTrace.from_bytes(tr.to_bytes())
print("syncs:", len(tr.snapshots), " logged visits:", len(tr.visits))

# weights on one cell at the last sync
w = dg.reconstruct_weights(tr, (0, 0, 0), tr.K)
print("omega0:", w.omega0, " sum of weights:", w.omega0 + w.omega.sum())
print("max weight:", w.omega.max(), " engine agreement:",
      np.max(np.abs(w.effective - w.omega)))

rep = dg.verify_decomposition(tr, mdp)
print("decomposition residual:", rep.max_residual)
for name in ("D1", "D2", "D3", "D4"):
    print(f"  {name} |max| per sync:", np.abs(getattr(rep, name)).max(axis=(1, 2, 3)).round(4))

# the penalty should dominate the noise it is meant to absorb
print("penalty dominance:", dg.check_penalty_dominance(rep).passed)

for r in dg.run_all(tr, mdp):
    print(f"{r.name:20s} passed={r.passed} worst={r.worst:.3g}")

# a single corrupted entry is pinned to its episode and cell
tr.snapshots[2]["Q"][1, 2, 0] += 1e-3
bad = dg.verify_decomposition(tr, mdp)
print("after tampering: passed", bad.passed, "worst index (k, h, s, a)", bad.worst_index)
