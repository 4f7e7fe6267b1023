"""Reproducible MDP instances for experiments and tests."""

import numpy as np

from .errors import ValidationError
from .mdp import TabularMdp


def _check_dims(S, A, H):
    if min(S, A, H) < 1:
        raise ValidationError(f"dims must be positive, got S={S}, A={A}, H={H}")


def random_mdp(S, A, H, seed):
    """Dirichlet(1) transition rows, Uniform[0, 1] rewards, uniform rho."""
    _check_dims(S, A, H)
    rng = np.random.default_rng(int(seed))
    P = rng.dirichlet(np.ones(S), size=(H, S, A))
    r = rng.random((H, S, A))
    return TabularMdp(P, r, np.full(S, 1.0 / S))


def chain_mdp(S, H):
    """Deterministic chain from state 0; action 1 moves right, action 0 stays.

    Reward 1 is paid only at the last step, in the rightmost (goal) state,
    whatever the action. With H >= S the optimal value is 1.
    """
    _check_dims(S, 2, H)
    P = np.zeros((H, S, 2, S))
    for s in range(S):
        P[:, s, 0, s] = 1.0
        P[:, s, 1, min(s + 1, S - 1)] = 1.0
    r = np.zeros((H, S, 2))
    r[H - 1, S - 1, :] = 1.0
    rho = np.zeros(S)
    rho[0] = 1.0
    return TabularMdp(P, r, rho)


def split_regions(S):
    """(gate states, goal states) of the split-coverage MDP."""
    n_gate = (S + 1) // 2
    return np.arange(n_gate), np.arange(n_gate, S)


def split_mdp(S, A, H):
    """Two-region MDP that needs two complementary datasets to be solved.

    Gate states pass to a paired goal state with action 1; every other
    action stays put. Goal states are absorbing and pay reward 1 for action
    1 only. rho puts 3/4 of its mass on gate states and 1/4 on goal states.
    An optimal policy enters at once from a gate and then harvests.
    """
    _check_dims(S, A, H)
    if S < 2 or A < 2:
        raise ValidationError(f"split MDP needs S >= 2 and A >= 2, got S={S}, A={A}")
    gate, goal = split_regions(S)
    P = np.zeros((H, S, A, S))
    r = np.zeros((H, S, A))
    for s in range(S):
        P[:, s, :, s] = 1.0
    for g in gate:
        target = goal[g % len(goal)]
        P[:, g, 1, :] = 0.0
        P[:, g, 1, target] = 1.0
    r[:, goal, 1] = 1.0
    rho = np.zeros(S)
    rho[gate] = 0.75 / len(gate)
    rho[goal] = 0.25 / len(goal)
    return TabularMdp(P, r, rho)


def split_masks(mdp):
    """Allowed-action masks for the two agents of the split MDP.

    ``"gate"`` only enters from gates and never harvests; ``"goal"`` never
    enters and only harvests. Each covers one half of the optimal path.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    gate, goal = split_regions(S)
    others = np.ones(A, dtype=bool)
    others[1] = False
    only = ~others
    gate_mask = np.zeros((H, S, A), dtype=bool)
    goal_mask = np.zeros((H, S, A), dtype=bool)
    gate_mask[:, gate] = only
    gate_mask[:, goal] = others
    goal_mask[:, gate] = others
    goal_mask[:, goal] = only
    return {"gate": gate_mask, "goal": goal_mask}


def make_mdp(spec):
    """Build an MDP from ``{"generator": kind, ...}`` or ``{"path": file}``."""
    if "path" in spec:
        return TabularMdp.load(spec["path"])
    kind = spec.get("generator")
    try:
        if kind == "random":
            return random_mdp(int(spec["S"]), int(spec["A"]), int(spec["H"]), int(spec.get("seed", 0)))
        if kind == "chain":
            return chain_mdp(int(spec["S"]), int(spec["H"]))
        if kind == "split":
            return split_mdp(int(spec["S"]), int(spec.get("A", 2)), int(spec["H"]))
    except KeyError as exc:
        raise ValidationError(f"MDP spec {spec} is missing {exc}") from None
    raise ValidationError(f"unknown MDP generator {kind!r}")
