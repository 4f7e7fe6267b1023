"""Tabular episodic MDPs and exact dynamic-programming ground truth.

Steps are 0-based internally: array index ``h`` holds step ``h + 1``.
Value tables carry one extra trailing slice (step ``H + 1``) that is
identically zero.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

INPUT_TOL = 1e-12
SUM_TOL = 1e-10

#: Returned by the concentrability functions when the optimal policy visits a
#: state-action pair that the behavior data never reaches.
INFINITE_CONCENTRABILITY = math.inf


def is_covered(coefficient):
    """True when a concentrability coefficient is finite."""
    return coefficient != INFINITE_CONCENTRABILITY


def _check_simplex(arr, name, tol=INPUT_TOL):
    """Raise on the first row (last axis) that is not a probability vector."""
    neg = np.argwhere(arr < 0)
    if len(neg):
        idx = tuple(int(i) for i in neg[0])
        raise ValidationError(f"{name}{list(idx)} is negative ({arr[idx]!r})")
    sums = arr.sum(axis=-1)
    bad = np.argwhere(np.abs(sums - 1.0) > tol)
    if len(bad):
        idx = tuple(int(i) for i in bad[0])
        raise ValidationError(
            f"{name}{list(idx)} sums to {sums[idx]!r}, expected 1 within {tol}")


@dataclass(frozen=True)
class TabularMdp:
    """Finite-horizon MDP with step-dependent transitions and rewards.

    Shapes: ``P`` is (H, S, A, S), ``r`` is (H, S, A), ``rho`` is (S,).
    """

    P: np.ndarray
    r: np.ndarray
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "P", np.ascontiguousarray(self.P, dtype=float))
        object.__setattr__(self, "r", np.ascontiguousarray(self.r, dtype=float))
        object.__setattr__(self, "rho", np.ascontiguousarray(self.rho, dtype=float))
        self.validate()

    @property
    def H(self):
        return self.P.shape[0]

    @property
    def S(self):
        return self.P.shape[1]

    @property
    def A(self):
        return self.P.shape[2]

    @property
    def dims(self):
        return self.S, self.A, self.H

    def validate(self):
        if self.P.ndim != 4:
            raise ValidationError(f"P must be 4-d [H][S][A][S], got shape {self.P.shape}")
        H, S, A, S2 = self.P.shape
        if min(H, S, A) < 1 or S2 != S:
            raise ValidationError(f"P has inconsistent shape {self.P.shape}")
        if self.r.shape != (H, S, A):
            raise ValidationError(f"r has shape {self.r.shape}, expected {(H, S, A)}")
        if self.rho.shape != (S,):
            raise ValidationError(f"rho has shape {self.rho.shape}, expected {(S,)}")
        for name, arr in (("P", self.P), ("r", self.r), ("rho", self.rho)):
            if not np.all(np.isfinite(arr)):
                idx = tuple(int(i) for i in np.argwhere(~np.isfinite(arr))[0])
                raise ValidationError(f"{name}{list(idx)} is not finite")
        _check_simplex(self.P, "P")
        out = np.argwhere((self.r < 0) | (self.r > 1))
        if len(out):
            idx = tuple(int(i) for i in out[0])
            raise ValidationError(f"r{list(idx)} = {self.r[idx]!r} outside [0, 1]")
        _check_simplex(self.rho, "rho")

    # --- serialization -------------------------------------------------

    def to_json(self):
        doc = {"S": self.S, "A": self.A, "H": self.H,
               "P": self.P.tolist(), "r": self.r.tolist(), "rho": self.rho.tolist()}
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"MDP file is not valid JSON: {exc}") from exc
        for key in ("S", "A", "H", "P", "r", "rho"):
            if key not in doc:
                raise ValidationError(f"MDP document is missing field {key!r}")
        S, A, H = doc["S"], doc["A"], doc["H"]
        try:
            P = np.array(doc["P"], dtype=float)
            r = np.array(doc["r"], dtype=float)
            rho = np.array(doc["rho"], dtype=float)
        except (TypeError, ValueError) as exc:
            raise ValidationError(f"MDP arrays are ragged or non-numeric: {exc}") from exc
        if P.shape != (H, S, A, S):
            raise ValidationError(f"P has shape {P.shape}, header says {(H, S, A, S)}")
        return cls(P, r, rho)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_json(fh.read())


@dataclass(frozen=True)
class DeterministicPolicy:
    """``actions[h, s]`` is the action taken at step h in state s."""

    actions: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "actions", np.asarray(self.actions, dtype=np.int64))
        if self.actions.ndim != 2:
            raise ValidationError(f"policy actions must be [H][S], got {self.actions.shape}")

    def check(self, mdp):
        if self.actions.shape != (mdp.H, mdp.S):
            raise ValidationError(
                f"policy shape {self.actions.shape} does not match (H, S) = {(mdp.H, mdp.S)}")
        bad = np.argwhere((self.actions < 0) | (self.actions >= mdp.A))
        if len(bad):
            idx = tuple(int(i) for i in bad[0])
            raise ValidationError(f"policy action{list(idx)} = {self.actions[idx]} out of range")

    def to_stochastic(self, A):
        probs = np.zeros(self.actions.shape + (A,))
        np.put_along_axis(probs, self.actions[..., None], 1.0, axis=-1)
        return StochasticPolicy(probs)


@dataclass(frozen=True)
class StochasticPolicy:
    """``probs[h, s]`` is a distribution over actions."""

    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", np.asarray(self.probs, dtype=float))
        if self.probs.ndim != 3:
            raise ValidationError(f"policy probs must be [H][S][A], got {self.probs.shape}")
        _check_simplex(self.probs, "policy")

    def check(self, mdp):
        if self.probs.shape != (mdp.H, mdp.S, mdp.A):
            raise ValidationError(
                f"policy shape {self.probs.shape} does not match {(mdp.H, mdp.S, mdp.A)}")


@dataclass
class ValueTables:
    """Q of shape (H+1, S, A) and V of shape (H+1, S); the last slice is zero."""

    Q: np.ndarray
    V: np.ndarray


@dataclass
class OccupancyTables:
    """State (H, S) and state-action (H, S, A) visitation distributions."""

    d_state: np.ndarray
    d_sa: np.ndarray


def _as_stochastic(policy, mdp):
    if isinstance(policy, DeterministicPolicy):
        policy.check(mdp)
        return policy.to_stochastic(mdp.A)
    if not isinstance(policy, StochasticPolicy):
        policy = StochasticPolicy(policy)
    policy.check(mdp)
    return policy


def value_iteration(mdp):
    """Backward induction for Q*, V* and the greedy optimal policy.

    Ties go to the smallest action index.
    """
    H, S, A = mdp.H, mdp.S, mdp.A
    Q = np.zeros((H + 1, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.r[h] + mdp.P[h] @ V[h + 1]
        V[h] = Q[h].max(axis=1)
    actions = Q[:H].argmax(axis=2)
    return ValueTables(Q, V), DeterministicPolicy(actions)


def evaluate_policy(mdp, policy, rho=None):
    """Exact Q^pi, V^pi and the scalar value sum_s rho(s) V_1^pi(s).

    ``policy`` may be deterministic or stochastic; ``rho`` defaults to the
    MDP's initial distribution.
    """
    pi = _as_stochastic(policy, mdp)
    rho = mdp.rho if rho is None else np.asarray(rho, dtype=float)
    if rho.shape != (mdp.S,):
        raise ValidationError(f"rho has shape {rho.shape}, expected {(mdp.S,)}")
    H, S, A = mdp.H, mdp.S, mdp.A
    Q = np.zeros((H + 1, S, A))
    V = np.zeros((H + 1, S))
    for h in range(H - 1, -1, -1):
        Q[h] = mdp.r[h] + mdp.P[h] @ V[h + 1]
        V[h] = (pi.probs[h] * Q[h]).sum(axis=1)
    return ValueTables(Q, V), float(rho @ V[0])


def occupancy_distributions(mdp, policy):
    """Forward recursion for d_h(s) and d_h(s, a) starting from rho."""
    pi = _as_stochastic(policy, mdp)
    H, S, A = mdp.H, mdp.S, mdp.A
    d_state = np.zeros((H, S))
    d_sa = np.zeros((H, S, A))
    d_state[0] = mdp.rho
    for h in range(H):
        d_sa[h] = d_state[h][:, None] * pi.probs[h]
        if h + 1 < H:
            d_state[h + 1] = np.einsum("sa,sat->t", d_sa[h], mdp.P[h])
    return OccupancyTables(d_state, d_sa)


def _clipped_ratio(d_opt_sa, d_behavior_sa, S, clip=True):
    num = np.minimum(d_opt_sa, 1.0 / S) if clip else d_opt_sa
    if np.any((num > 0) & (d_behavior_sa <= 0)):
        return INFINITE_CONCENTRABILITY
    # 0/0 = 0 by convention; num == 0 wherever the denominator vanishes here
    safe = np.where(d_behavior_sa > 0, d_behavior_sa, 1.0)
    return float(np.max(np.where(num > 0, num / safe, 0.0)))


def clipped_concentrability(d_opt, d_behavior, S, clip=True):
    """Single-policy clipped concentrability coefficient.

    Returns ``INFINITE_CONCENTRABILITY`` when some cell has positive optimal
    occupancy but zero behavior occupancy. ``clip=False`` gives the
    unclipped ratio for comparison.
    """
    if d_opt.d_sa.shape != d_behavior.d_sa.shape:
        raise ValidationError(
            f"occupancy shapes differ: {d_opt.d_sa.shape} vs {d_behavior.d_sa.shape}")
    return _clipped_ratio(d_opt.d_sa, d_behavior.d_sa, S, clip)


def average_occupancy(d_behaviors):
    if not d_behaviors:
        raise ValidationError("need at least one behavior occupancy table")
    shapes = {d.d_sa.shape for d in d_behaviors}
    if len(shapes) != 1:
        raise ValidationError(f"behavior occupancy shapes differ: {sorted(shapes)}")
    M = len(d_behaviors)
    return OccupancyTables(sum(d.d_state for d in d_behaviors) / M,
                           sum(d.d_sa for d in d_behaviors) / M)


def average_concentrability(d_opt, d_behaviors, S):
    """Clipped concentrability against the agent-averaged occupancy."""
    return clipped_concentrability(d_opt, average_occupancy(d_behaviors), S)
