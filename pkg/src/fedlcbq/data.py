"""Behavior policies, per-agent offline datasets, and their on-disk format.

Dataset files are little-endian: the 6-byte magic ``FLCQD1`` followed by
K*H packed records ``(u32 s, u32 a, f64 r, u32 s')``. A JSON sidecar
``<name>.meta.json`` carries ``agent_id``, ``K``, ``H``, ``S``, ``A``,
``seed`` and ``behavior_policy_id``.
"""

import json
import os
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import TraceParseError, ValidationError
from .mdp import OccupancyTables, StochasticPolicy, value_iteration

DATASET_MAGIC = b"FLCQD1"
RECORD_DTYPE = np.dtype([("s", "<u4"), ("a", "<u4"), ("r", "<f8"), ("s_next", "<u4")])


class Transition(NamedTuple):
    state: int
    action: int
    reward: float
    next_state: int


class Trajectory(NamedTuple):
    steps: tuple


def make_behavior_policy(kind, mdp, epsilon=None, allowed=None, policy=None):
    """Build a behavior policy for data collection.

    kind is one of ``"epsilon_optimal"`` (needs ``epsilon``), ``"uniform"``,
    ``"masked_uniform"`` (needs a boolean ``allowed`` mask of shape
    (H, S, A)) or ``"explicit"`` (needs ``policy``). Returns the policy and
    a short id string recorded in dataset metadata.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    if kind == "uniform":
        return StochasticPolicy(np.full((H, S, A), 1.0 / A)), "uniform"
    if kind == "epsilon_optimal":
        if epsilon is None or not 0.0 <= epsilon <= 1.0:
            raise ValidationError(f"epsilon_optimal needs epsilon in [0, 1], got {epsilon}")
        _, pi_star = value_iteration(mdp)
        probs = np.full((H, S, A), epsilon / A)
        greedy = np.zeros((H, S, A))
        np.put_along_axis(greedy, pi_star.actions[..., None], 1.0, axis=-1)
        probs += (1.0 - epsilon) * greedy
        if epsilon == 0.0:
            probs = greedy
        elif epsilon == 1.0:
            probs = np.full((H, S, A), 1.0 / A)
        return StochasticPolicy(probs), f"epsilon_optimal({epsilon!r})"
    if kind == "masked_uniform":
        mask = np.asarray(allowed, dtype=bool)
        if mask.shape != (H, S, A):
            raise ValidationError(f"allowed mask has shape {mask.shape}, expected {(H, S, A)}")
        counts = mask.sum(axis=-1)
        empty = np.argwhere(counts == 0)
        if len(empty):
            h, s = (int(i) for i in empty[0])
            raise ValidationError(f"masked_uniform: empty allowed set at (h={h}, s={s})")
        return StochasticPolicy(mask / counts[..., None]), "masked_uniform"
    if kind == "explicit":
        if policy is None:
            raise ValidationError("explicit behavior policy needs `policy`")
        if not isinstance(policy, StochasticPolicy):
            policy = StochasticPolicy(policy)
        policy.check(mdp)
        return policy, "explicit"
    raise ValidationError(f"unknown behavior policy kind {kind!r}")


def derive_seed(master_seed, agent_id):
    """Per-agent 64-bit stream seed from (master_seed, agent_id).

    Uses numpy's SeedSequence hashing with the agent id as spawn key, so
    streams are independent and do not depend on generation order.
    """
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(agent_id),))
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass
class OfflineDataset:
    """K episodes of one agent, stored as dense arrays.

    ``states`` is (K, H+1) with the last column the terminal next state,
    ``actions`` and ``rewards`` are (K, H).
    """

    agent_id: int
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    S: int
    A: int
    behavior_policy_id: str = "explicit"
    seed: int = 0

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.int64)
        self.actions = np.asarray(self.actions, dtype=np.int64)
        self.rewards = np.asarray(self.rewards, dtype=float)
        K, H1 = self.states.shape
        if self.actions.shape != (K, H1 - 1) or self.rewards.shape != (K, H1 - 1):
            raise ValidationError("dataset arrays have inconsistent shapes")
        if self.states.size and (self.states.min() < 0 or self.states.max() >= self.S):
            raise ValidationError("dataset contains out-of-range states")
        if self.actions.size and (self.actions.min() < 0 or self.actions.max() >= self.A):
            raise ValidationError("dataset contains out-of-range actions")

    @property
    def K(self):
        return self.states.shape[0]

    @property
    def H(self):
        return self.actions.shape[1]

    def trajectory(self, k):
        steps = tuple(
            Transition(int(self.states[k, h]), int(self.actions[k, h]),
                       float(self.rewards[k, h]), int(self.states[k, h + 1]))
            for h in range(self.H))
        return Trajectory(steps)

    @property
    def trajectories(self):
        return [self.trajectory(k) for k in range(self.K)]

    def check_against(self, mdp):
        """Assert dims match and every reward equals r_h(s, a)."""
        if (self.S, self.A, self.H) != mdp.dims:
            raise ValidationError(
                f"dataset dims {(self.S, self.A, self.H)} differ from MDP {mdp.dims}")
        h = np.arange(self.H)
        expected = mdp.r[h, self.states[:, :-1], self.actions]
        if not np.array_equal(expected, self.rewards):
            raise ValidationError("dataset rewards disagree with the MDP reward table")

    # --- persistence --------------------------------------------------

    def to_bytes(self):
        rec = np.empty((self.K, self.H), dtype=RECORD_DTYPE)
        rec["s"] = self.states[:, :-1]
        rec["a"] = self.actions
        rec["r"] = self.rewards
        rec["s_next"] = self.states[:, 1:]
        return DATASET_MAGIC + rec.tobytes()

    def meta(self):
        return {"agent_id": int(self.agent_id), "K": self.K, "H": self.H, "S": self.S,
                "A": self.A, "seed": int(self.seed),
                "behavior_policy_id": self.behavior_policy_id}

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        with open(meta_path(path), "w") as fh:
            json.dump(self.meta(), fh, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(meta_path(path)) as fh:
            meta = json.load(fh)
        with open(path, "rb") as fh:
            blob = fh.read()
        return cls.from_bytes(blob, meta)

    @classmethod
    def from_bytes(cls, blob, meta):
        if blob[:len(DATASET_MAGIC)] != DATASET_MAGIC:
            raise TraceParseError("bad dataset magic", 0)
        K, H = int(meta["K"]), int(meta["H"])
        body = blob[len(DATASET_MAGIC):]
        expected = K * H * RECORD_DTYPE.itemsize
        if len(body) != expected:
            raise TraceParseError(
                f"dataset body has {len(body)} bytes, expected {expected}",
                len(DATASET_MAGIC) + min(len(body), expected))
        rec = np.frombuffer(body, dtype=RECORD_DTYPE).reshape(K, H)
        if H > 1 and not np.array_equal(rec["s_next"][:, :-1], rec["s"][:, 1:]):
            k, h = np.argwhere(rec["s_next"][:, :-1] != rec["s"][:, 1:])[0]
            off = len(DATASET_MAGIC) + (int(k) * H + int(h)) * RECORD_DTYPE.itemsize
            raise TraceParseError(f"trajectory {k} breaks next-state chaining at step {h}", off)
        states = np.concatenate([rec["s"], rec["s_next"][:, -1:]], axis=1).astype(np.int64)
        return cls(int(meta["agent_id"]), states, rec["a"].astype(np.int64),
                   rec["r"].astype(float), int(meta["S"]), int(meta["A"]),
                   meta.get("behavior_policy_id", "explicit"), int(meta.get("seed", 0)))


def meta_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".meta.json"


def _inverse_cdf(probs, u):
    """Row-wise categorical draws; probs (..., n), u (...)."""
    cdf = np.cumsum(probs, axis=-1)
    cdf[..., -1] = 1.0
    return (u[..., None] >= cdf).sum(axis=-1)


def sample_dataset(mdp, policy, K, seed, agent_id=0, behavior_policy_id="explicit"):
    """Draw K i.i.d. episodes from ``mdp`` under ``policy``.

    Output is a pure function of (mdp, policy, K, seed).
    """
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    if not isinstance(policy, StochasticPolicy):
        policy = StochasticPolicy(policy)
    policy.check(mdp)
    rng = np.random.default_rng(int(seed))
    H = mdp.H
    states = np.empty((K, H + 1), dtype=np.int64)
    actions = np.empty((K, H), dtype=np.int64)
    states[:, 0] = _inverse_cdf(np.broadcast_to(mdp.rho, (K, mdp.S)).copy(), rng.random(K))
    for h in range(H):
        s = states[:, h]
        a = _inverse_cdf(policy.probs[h, s], rng.random(K))
        actions[:, h] = a
        states[:, h + 1] = _inverse_cdf(mdp.P[h, s, a], rng.random(K))
    rewards = mdp.r[np.arange(H), states[:, :-1], actions]
    return OfflineDataset(agent_id, states, actions, rewards, mdp.S, mdp.A,
                          behavior_policy_id, int(seed))


def sample_agent_datasets(mdp, policies, K, master_seed, policy_ids=None):
    """One dataset per policy, seeded by ``derive_seed(master_seed, m)``."""
    policy_ids = policy_ids or ["explicit"] * len(policies)
    return [sample_dataset(mdp, pol, K, derive_seed(master_seed, m), m, pid)
            for m, (pol, pid) in enumerate(zip(policies, policy_ids))]


def empirical_occupancy(dataset, dims=None):
    """Visit frequencies per step, normalized by K."""
    if dataset.K == 0:
        raise ValidationError("empirical_occupancy needs a non-empty dataset")
    S, A, H = dims if dims is not None else (dataset.S, dataset.A, dataset.H)
    d_sa = np.zeros((H, S, A))
    for h in range(H):
        np.add.at(d_sa[h], (dataset.states[:, h], dataset.actions[:, h]), 1.0)
    d_sa /= dataset.K
    return OccupancyTables(d_sa.sum(axis=-1), d_sa)
