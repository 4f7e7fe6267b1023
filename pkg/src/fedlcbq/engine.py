"""Federated pessimistic Q-learning (FedLCB-Q) on tabular episodic MDPs.

Agents run Q-learning on their own offline episodes with learning rates
rescaled by the global visit counter. At every sync point the server
averages the local tables with count-based importance weights, subtracts a
global lower-confidence penalty, and applies a monotone value update.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import ContractViolation, ValidationError
from .mdp import DeterministicPolicy, ValueTables

ALPHA_GATES = ("total", "per_agent")


@dataclass
class HyperParams:
    """Run parameters.

    ``alpha_gate="total"`` applies the importance-weight formula to every
    agent whenever the cell was visited by anyone this round (weights sum to
    one). ``"per_agent"`` falls back to 1/M for agents that did not visit the
    cell themselves; it exists for ablations only.
    """

    delta: float = 0.01
    c_B: float = 81.0
    alpha_gate: str = "total"
    clip_q: bool = False
    ablation: bool = False
    zeta1_override: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValidationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.c_B < 0 or (self.c_B == 0 and not self.ablation):
            raise ValidationError("c_B must be positive (c_B = 0 only with ablation=True)")
        if self.alpha_gate not in ALPHA_GATES:
            raise ValidationError(f"alpha_gate must be one of {ALPHA_GATES}")

    def zeta1(self, S, A, K, M, H):
        """log(S A K^2 M H / delta), natural log."""
        if self.zeta1_override is not None:
            return float(self.zeta1_override)
        return math.log(S * A * K * K * M * H / self.delta)

    def to_dict(self):
        return {"delta": self.delta, "c_B": self.c_B, "alpha_gate": self.alpha_gate,
                "clip_q": self.clip_q, "ablation": self.ablation,
                "zeta1_override": self.zeta1_override}

    @classmethod
    def from_dict(cls, doc):
        keys = ("delta", "c_B", "alpha_gate", "clip_q", "ablation", "zeta1_override")
        return cls(**{k: doc[k] for k in keys if k in doc})


# --- scalar parameter formulas --------------------------------------------

def compute_eta(M, H, N_prev, n_local_m):
    """Rescaled learning rate M(H+1) / (N_prev + M(H+1) n_local_m)."""
    if n_local_m < 1:
        raise ContractViolation("compute_eta needs n_local_m >= 1 (called after the increment)")
    c = M * (H + 1)
    return c / (N_prev + c * n_local_m)


def compute_alpha(M, H, N_prev, n_local_m, N_new, n_round):
    """Importance weight of one agent for one cell."""
    if N_new != N_prev + n_round or n_local_m > n_round or min(N_prev, n_local_m) < 0:
        raise ContractViolation(
            f"inconsistent counters: N_prev={N_prev}, n_m={n_local_m}, N_new={N_new}, n={n_round}")
    if n_round == 0:
        return 1.0 / M
    return (1.0 / M) * ((N_prev + (H + 1) * M * n_local_m) / (N_new + H * n_round))


def compute_penalty(H, N_new, n_round, zeta1, c_B):
    """Global pessimism penalty B for one cell."""
    if N_new == 0:
        return 0.0
    return ((H + 1) * n_round / (N_new + H * n_round)) * math.sqrt(c_B * zeta1**2 * H**4 / N_new)


def _alpha_table(M, H, N_prev, n_local, n_round, gate):
    N_new = N_prev + n_round
    alpha = (1.0 / M) * ((N_prev + (H + 1) * M * n_local) / np.maximum(N_new + H * n_round, 1))
    visited = n_round > 0 if gate == "total" else n_local > 0
    return np.where(visited, alpha, 1.0 / M)


def _penalty_table(H, N_new, n_round, zeta1, c_B):
    safe = np.maximum(N_new, 1)
    B = ((H + 1) * n_round / (safe + H * n_round)) * np.sqrt(c_B * zeta1**2 * H**4 / safe)
    return np.where(N_new > 0, B, 0.0)


# --- learner state ---------------------------------------------------------

@dataclass
class Counters:
    n_local: np.ndarray   # (M, H, S, A) visits since the last sync
    N_global: np.ndarray  # (H, S, A) visits up to the last sync
    n_round: np.ndarray   # (H, S, A) sum over agents of n_local at the last aggregation
    N_prev: np.ndarray    # (H, S, A) global counter used by the learning rates


class LearnerState:
    """All agent and server tables for one run.

    Step h of the algorithm is array index h - 1; value arrays have an
    extra zero slice for step H + 1.
    """

    def __init__(self, S, A, H, M, K, schedule, hyper, initial_policy=None):
        if schedule.K != K:
            raise ValidationError(f"schedule ends at {schedule.K}, datasets have K={K}")
        self.S, self.A, self.H, self.M, self.K = S, A, H, M, K
        self.schedule = schedule
        self.hyper = hyper
        self.zeta1 = hyper.zeta1(S, A, K, M, H)
        self.local_Q = np.zeros((M, H, S, A))
        self.local_V = np.zeros((M, H + 1, S))
        self.global_Q = np.zeros((H, S, A))
        self.global_V = np.zeros((H + 1, S))
        self.global_policy = np.zeros((H, S), dtype=np.int64)
        if initial_policy is not None:
            self.global_policy[:] = initial_policy
        self.counters = Counters(np.zeros((M, H, S, A), dtype=np.int64),
                                 np.zeros((H, S, A), dtype=np.int64),
                                 np.zeros((H, S, A), dtype=np.int64),
                                 np.zeros((H, S, A), dtype=np.int64))
        self.episode = 0
        self.sync_index = 0
        self.last_penalty = np.zeros((H, S, A))
        self.last_alpha = np.full((M, H, S, A), 1.0 / M)

    @property
    def policy(self):
        return DeterministicPolicy(self.global_policy.copy())

    def value_tables(self):
        Q = np.zeros((self.H + 1, self.S, self.A))
        Q[:self.H] = self.global_Q
        return ValueTables(Q, self.global_V.copy())

    def local_update(self, agents, states, actions, rewards, log=None):
        """Apply one episode for each agent in ``agents``.

        ``states`` is (len(agents), H+1), ``actions``/``rewards`` are
        (len(agents), H). Agents touch disjoint tables, so the vectorized
        update is identical to processing them one by one.
        """
        agents = np.asarray(agents, dtype=np.int64)
        c = self.M * (self.H + 1)
        n_local, N_prev = self.counters.n_local, self.counters.N_prev
        for h in range(self.H):
            s, a, s_next = states[:, h], actions[:, h], states[:, h + 1]
            n_local[agents, h, s, a] += 1
            eta = c / (N_prev[h, s, a] + c * n_local[agents, h, s, a])
            target = rewards[:, h] + self.local_V[agents, h + 1, s_next]
            q = self.local_Q[agents, h, s, a]
            self.local_Q[agents, h, s, a] = (1.0 - eta) * q + eta * target
            if log is not None:
                log(agents, h, s, a, rewards[:, h], s_next, eta)

    def aggregate(self):
        """Server step: importance averaging, penalty, monotone V, sync."""
        if self.episode not in self.schedule:
            raise ContractViolation(f"aggregation called at episode {self.episode}, not a sync point")
        M, H = self.M, self.H
        cnt = self.counters
        n_round = cnt.n_local.sum(axis=0)
        N_new = cnt.N_prev + n_round
        alpha = _alpha_table(M, H, cnt.N_prev, cnt.n_local, n_round, self.hyper.alpha_gate)
        B = _penalty_table(H, N_new, n_round, self.zeta1, self.hyper.c_B)
        # sum sorted terms so relabeling agents gives bit-identical results
        terms = np.sort(alpha * self.local_Q, axis=0)
        avg = np.zeros((H, self.S, self.A))
        for m in range(M):
            avg += terms[m]
        Q = avg - B
        if self.hyper.clip_q:
            Q = np.clip(Q, 0.0, H)
        q_max = Q.max(axis=2)
        improved = q_max > self.global_V[:H]
        self.global_V[:H] = np.where(improved, q_max, self.global_V[:H])
        self.global_policy = np.where(improved, Q.argmax(axis=2), self.global_policy)
        self.global_Q = Q
        self.last_penalty, self.last_alpha = B, alpha
        cnt.n_round = n_round
        cnt.N_global = N_new
        cnt.N_prev = N_new.copy()
        cnt.n_local[:] = 0
        self.local_Q[:] = Q
        self.local_V[:] = self.global_V
        self.sync_index += 1


def local_update_episode(state, m, trajectory):
    """Feed one trajectory (a sequence of (s, a, r, s') steps) to agent m."""
    steps = trajectory.steps if hasattr(trajectory, "steps") else trajectory
    if len(steps) != state.H:
        raise ValidationError(f"trajectory has {len(steps)} steps, expected H={state.H}")
    states = np.array([[st[0] for st in steps] + [steps[-1][3]]], dtype=np.int64)
    actions = np.array([[st[1] for st in steps]], dtype=np.int64)
    rewards = np.array([[st[2] for st in steps]], dtype=float)
    if states.max() >= state.S or actions.max() >= state.A or min(states.min(), actions.min()) < 0:
        raise ValidationError("trajectory indices out of range")
    state.local_update([m], states, actions, rewards)
    return state


def global_aggregate(state):
    state.aggregate()
    return state


# --- full run ----------------------------------------------------------------

class RunResult(NamedTuple):
    values: ValueTables
    policy: DeterministicPolicy
    trace: object
    state: LearnerState


def _check_datasets(datasets, dims):
    if not datasets:
        raise ValidationError("need at least one agent dataset")
    Ks = {d.K for d in datasets}
    if len(Ks) != 1:
        raise ValidationError(f"all agents must hold the same number of episodes, got {sorted(Ks)}")
    for d in datasets:
        if (d.S, d.A, d.H) != tuple(dims):
            raise ValidationError(f"dataset of agent {d.agent_id} has dims {(d.S, d.A, d.H)}, expected {dims}")
    return Ks.pop()


def run_fedlcbq(dims, datasets, schedule, hyper=None, trace=False, on_sync=None):
    """Run FedLCB-Q over K episodes per agent.

    ``dims`` is (S, A, H) or a TabularMdp. ``on_sync(state)`` is called after
    every aggregation. With ``trace=True`` the result carries a RunTrace.
    """
    from .trace import TraceRecorder

    hyper = hyper or HyperParams()
    if hasattr(dims, "dims"):
        dims = dims.dims
    S, A, H = dims
    K = _check_datasets(datasets, dims)
    M = len(datasets)
    state = LearnerState(S, A, H, M, K, schedule, hyper)
    states = np.stack([d.states for d in datasets])    # (M, K, H+1)
    actions = np.stack([d.actions for d in datasets])
    rewards = np.stack([d.rewards for d in datasets])
    recorder = TraceRecorder(state) if trace else None
    agents = np.arange(M)
    for k in range(1, K + 1):
        state.episode = k
        log = recorder.visit_logger(k) if recorder else None
        state.local_update(agents, states[:, k - 1], actions[:, k - 1], rewards[:, k - 1], log)
        if k in schedule:
            state.aggregate()
            if recorder:
                recorder.snapshot(state)
            if on_sync is not None:
                on_sync(state)
    run_trace = recorder.finish(seeds=[int(d.seed) for d in datasets]) if recorder else None
    return RunResult(state.value_tables(), state.policy, run_trace, state)
