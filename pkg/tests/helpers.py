"""Seeded fuzz configurations shared by the property and acceptance tests."""

import numpy as np

from fedlcbq.data import make_behavior_policy, sample_agent_datasets
from fedlcbq.engine import HyperParams, run_fedlcbq
from fedlcbq.generators import random_mdp
from fedlcbq.schedules import build_schedule


def random_schedule(rng, K, H):
    kind = rng.choice(["periodic", "exponential", "explicit"])
    if kind == "periodic":
        return build_schedule("periodic", K, tau=int(rng.integers(1, max(2, K // 2) + 1)))
    if kind == "exponential":
        return build_schedule("exponential", K, H=H, gamma=float(rng.uniform(0.1, 1.5)))
    n = int(rng.integers(0, min(K - 1, 12) + 1))
    pts = sorted(set(rng.choice(np.arange(1, K), size=n, replace=False).tolist())) if n else []
    return build_schedule("explicit", K, points=pts + [K])


def fuzz_run(seed, max_K=200, c_B=None):
    """A random small MDP, random behaviors and schedule, traced."""
    rng = np.random.default_rng(seed)
    S, A, H = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 5))
    M, K = int(rng.integers(1, 5)), int(rng.integers(1, max_K + 1))
    mdp = random_mdp(S, A, H, seed)
    probs = rng.dirichlet(np.ones(A), size=(M, H, S))
    pols = [make_behavior_policy("explicit", mdp, policy=p)[0] for p in probs]
    datasets = sample_agent_datasets(mdp, pols, K, seed)
    schedule = random_schedule(rng, K, H)
    hyper = HyperParams(c_B=float(rng.choice([81.0, 1.0, 0.01])) if c_B is None else c_B)
    res = run_fedlcbq(mdp, datasets, schedule, hyper, trace=True)
    return mdp, res
