"""Synchronization schedules: which episodes end with a server aggregation."""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import ValidationError


@dataclass(frozen=True)
class SyncSchedule:
    kind: str
    sync_points: tuple
    params: dict = field(default_factory=dict)
    _point_set: frozenset = field(default=frozenset(), init=False, repr=False, compare=False)

    def __post_init__(self):
        pts = tuple(int(p) for p in self.sync_points)
        object.__setattr__(self, "sync_points", pts)
        if not pts:
            raise ValidationError("schedule has no sync points")
        if pts[0] < 1 or any(b <= a for a, b in zip(pts, pts[1:])):
            raise ValidationError(f"sync points must be strictly increasing from >= 1: {pts}")
        object.__setattr__(self, "_point_set", frozenset(pts))

    @property
    def K(self):
        return self.sync_points[-1]

    @property
    def intervals(self):
        """tau_u = t_u - t_{u-1}, with t_0 = 0."""
        return tuple(int(x) for x in np.diff((0,) + self.sync_points))

    def __len__(self):
        return len(self.sync_points)

    def __contains__(self, k):
        return k in self._point_set

    def round_of(self, k):
        """phi(k): 1-based index of the first sync at or after episode k."""
        return int(np.searchsorted(self.sync_points, k)) + 1

    def last_sync_before(self, k):
        """iota(k): the latest sync point strictly before k, or 0."""
        i = int(np.searchsorted(self.sync_points, k)) - 1
        return self.sync_points[i] if i >= 0 else 0

    def to_dict(self):
        return {"kind": self.kind, "params": _jsonable(self.params),
                "sync_points": list(self.sync_points)}

    @classmethod
    def from_dict(cls, doc):
        return cls(doc["kind"], tuple(doc["sync_points"]), dict(doc.get("params", {})))


def _jsonable(params):
    return {k: (float(v) if isinstance(v, Fraction) else v) for k, v in params.items()}


def _exact(x):
    """Rational view of a float parameter, so floor((1+g)*tau) is exact."""
    if isinstance(x, Fraction):
        return x
    return Fraction(x).limit_denominator(10**9)


def build_schedule(kind, K, H=None, tau=None, gamma=None, points=None):
    """Generate a schedule ending exactly at K.

    ``periodic``: tau, 2tau, ... with K appended if needed.
    ``exponential``: tau_1 = H, tau_i = floor((1 + gamma) tau_{i-1}); the
    final interval is truncated so the last point is K.
    ``explicit``: the given points, which must end at K.
    """
    if K < 1:
        raise ValidationError(f"K must be >= 1, got {K}")
    if kind == "periodic":
        if tau is None or int(tau) != tau or tau < 1:
            raise ValidationError(f"periodic schedule needs integer tau >= 1, got {tau}")
        tau = int(tau)
        pts = list(range(tau, K, tau)) + [K]
        return SyncSchedule("periodic", tuple(pts), {"tau": tau})
    if kind == "exponential":
        if H is None or H < 1:
            raise ValidationError(f"exponential schedule needs H >= 1, got {H}")
        if gamma is None or gamma <= 0:
            raise ValidationError(f"exponential schedule needs gamma > 0, got {gamma}")
        g = _exact(gamma)
        pts, t, step = [], 0, int(H)
        while t + step < K:
            t += step
            pts.append(t)
            step = math.floor((1 + g) * step)
        pts.append(K)
        return SyncSchedule("exponential", tuple(pts), {"gamma": gamma, "H": int(H)})
    if kind == "explicit":
        if not points or int(points[-1]) != K:
            raise ValidationError(f"explicit schedule must end at K={K}: {points}")
        return SyncSchedule("explicit", tuple(points), {})
    raise ValidationError(f"unknown schedule kind {kind!r}")


@dataclass
class ScheduleReport:
    passed: bool
    tau1_ok: bool
    ratio_ok: bool
    first_violation: object = None
    message: str = ""

    def to_dict(self):
        return {"passed": self.passed, "tau1_ok": self.tau1_ok, "ratio_ok": self.ratio_ok,
                "first_violation": self.first_violation, "message": self.message}


def validate_schedule(schedule, H, bound_tau1=None):
    """Check tau_1 <= bound_tau1 and tau_{u+1} / tau_u <= 1 + 2/H for all u.

    The ratio test is done in integer arithmetic: H * tau_{u+1} <= (H + 2) * tau_u.
    ``first_violation`` holds the 1-based index u of the offending pair.
    """
    taus = schedule.intervals
    tau1_ok = bound_tau1 is None or taus[0] <= bound_tau1
    for u in range(len(taus) - 1):
        if H * taus[u + 1] > (H + 2) * taus[u]:
            msg = f"tau_{u + 2}/tau_{u + 1} = {taus[u + 1]}/{taus[u]} exceeds 1 + 2/{H}"
            return ScheduleReport(False, tau1_ok, False, {"u": u + 1, "taus": [taus[u], taus[u + 1]]}, msg)
    if not tau1_ok:
        return ScheduleReport(False, False, True, {"u": 1, "taus": [taus[0]]},
                              f"tau_1 = {taus[0]} exceeds bound {bound_tau1}")
    return ScheduleReport(True, True, True)


def exponential_round_bound(K, H):
    """Upper bound 1 + (1 + H) log(K / H^2 + 1) on the exponential schedule size."""
    return 1.0 + (1.0 + H) * math.log(K / H**2 + 1.0)


def tau1_bound(H, S, c_avg, K, M):
    """sqrt(H^2 S C_avg K / M), the admissible first interval."""
    return math.sqrt(H**2 * S * c_avg * K / M)
