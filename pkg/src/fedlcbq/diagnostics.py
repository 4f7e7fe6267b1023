"""Executable checks of the analysis behind FedLCB-Q.

Everything here reads a :class:`~fedlcbq.trace.RunTrace`. Episode weights
are rebuilt from the recorded counters alone (closed form), independently
of the learning rates and averaging weights the engine applied, and then
used to split the Q-estimation error at every sync point into

* D1, initialization error,
* D2, transition noise (true kernel minus observed next state),
* D3, accumulated global penalty,
* D4, error propagated from the next step's value estimates.

The four terms must add up to Q^pi - Q_k exactly, up to rounding.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .mdp import DeterministicPolicy, evaluate_policy, value_iteration

RESIDUAL_TOL = 1e-8
REL_SLACK = 1e-12


@dataclass
class CheckReport:
    name: str
    passed: bool
    worst: float = 0.0
    violations: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "worst": float(self.worst),
                "violations": self.violations[:20], "n_violations": len(self.violations),
                "details": self.details}


# --- counters and closed-form weights ------------------------------------

@dataclass
class RoundTables:
    """Per-sync counter tables of a trace, indexed by round u = 0..U-1."""

    N: np.ndarray        # (U, H, S, A) cumulative counts after round u
    n: np.ndarray        # (U, H, S, A) visits during round u
    N_before: np.ndarray  # (U, H, S, A) cumulative counts before round u
    lam: np.ndarray      # (U, H, S, A) lambda_u
    W: np.ndarray        # (U, U, H, S, A) W[u, v]: weight at sync v of one visit in round u
    omega0: np.ndarray   # (U, H, S, A)


def round_tables(trace):
    """Closed-form lambda, omega_0 and per-round episode weights."""
    H = trace.H
    N = np.stack([s["N"] for s in trace.snapshots]).astype(np.int64)
    n = np.stack([s["n_round"] for s in trace.snapshots]).astype(np.int64)
    U = len(N)
    N_before = np.concatenate([np.zeros_like(N[:1]), N[:-1]])
    denom = N + H * n
    safe = np.where(denom > 0, denom, 1)
    lam = np.where(N == 0, 1.0, N_before / safe)
    keep = np.where(denom > 0, N / safe, 1.0)      # N_{t_x} / (N_{t_x} + H n_{t_x})
    head = np.where(denom > 0, (H + 1) / safe, 0.0)  # (H+1) / (N_{t_v} + H n_{t_v})
    W = np.zeros((U, U) + N.shape[1:])
    for v in range(U):
        prod = np.ones(N.shape[1:])
        for u in range(v, -1, -1):
            if u < v:
                prod = prod * keep[u]
            W[u, v] = head[v] * prod
    omega0 = (N == 0).astype(float)
    return RoundTables(N, n, N_before, lam, W, omega0)


@dataclass
class WeightTables:
    """Weights of one cell at one sync point.

    ``lam[u]`` for rounds 1..v, ``omega0`` in {0, 1}, and one row per past
    visit in ``visits`` (structured array) with its weight in ``omega``.
    ``effective`` holds the weight implied by the engine's own learning
    rates and averaging weights, for comparison.
    """

    cell: tuple
    k: int
    lam: np.ndarray
    omega0: float
    visits: np.ndarray
    rounds: np.ndarray
    omega: np.ndarray
    effective: np.ndarray
    N: int
    n: int
    round_counts: np.ndarray


def _visit_rounds(trace, visits):
    return np.searchsorted(trace.schedule.sync_points, visits["k"])  # 0-based phi(i) - 1


def reconstruct_weights(trace, cell, k):
    """Closed-form weights for ``cell = (h, s, a)`` (0-based h) at sync episode k."""
    if k not in trace.schedule:
        raise ValidationError(f"episode {k} is not a sync point")
    h, s, a = cell
    H = trace.H
    v = trace.schedule.sync_points.index(k)
    snaps = trace.snapshots
    N = np.array([snaps[u]["N"][h, s, a] for u in range(v + 1)], dtype=np.int64)
    n = np.array([snaps[u]["n_round"][h, s, a] for u in range(v + 1)], dtype=np.int64)
    N_before = np.concatenate([[0], N[:-1]])
    lam = np.array([1.0 if N[u] == 0 else N_before[u] / (N[u] + H * n[u]) for u in range(v + 1)])
    omega0 = 1.0 if N[v] == 0 else 0.0
    vis = trace.visits_at(h, s, a)
    vis = vis[vis["k"] <= k]
    rounds = _visit_rounds(trace, vis)
    omega = np.empty(len(vis))
    for j, u in enumerate(rounds):
        w = (H + 1) / (N[v] + H * n[v])
        for x in range(u, v):
            w *= N[x] / (N[x] + H * n[x])
        omega[j] = w
    effective = _effective_weights(trace, cell, v, vis, rounds)
    return WeightTables(cell, k, lam, omega0, vis, rounds, omega, effective,
                        int(N[v]), int(n[v]), n)


def _effective_weights(trace, cell, v, vis, rounds):
    """alpha * eta_i * prod_{later j}(1 - eta_j) * prod_{later rounds} lambda_eff."""
    h, s, a = cell
    M = trace.M
    lam_eff = np.ones(v + 1)
    per_visit = np.empty(len(vis))
    for u in range(v + 1):
        alpha = trace.snapshots[u]["alpha"][:, h, s, a]
        in_round = rounds == u
        keep = np.ones(M)
        for m in range(M):
            idx = np.flatnonzero(in_round & (vis["m"] == m))
            etas = vis["eta"][idx]
            tail = 1.0
            for j in range(len(idx) - 1, -1, -1):
                per_visit[idx[j]] = alpha[m] * etas[j] * tail
                tail *= 1.0 - etas[j]
            keep[m] = tail
        lam_eff[u] = float(alpha @ keep)
    for j, u in enumerate(rounds):
        per_visit[j] *= np.prod(lam_eff[u + 1:v + 1])
    return per_visit


def verify_lemma6_bounds(trace, tables=None):
    """Bounds on the closed-form episode weights at every sync and cell.

    (a) each weight <= 2H/(N + Hn); (b) sum <= 1; (c) the part of the sum
    coming from round u <= (H+1) n_u / (N + Hn); (d) sum of squares
    <= 2H/(N + Hn). Also checks that the sum telescopes to 1 - prod(lambda)
    and that weights are identical within a round. Comparisons allow a
    relative slack of 1e-12 for rounding.
    """
    t = tables or round_tables(trace)
    H = trace.H
    U = len(t.N)
    violations = []
    worst_in_round_std = 0.0
    worst_telescope = 0.0
    rounds_all = _visit_rounds(trace, trace.visits)
    vh, vs, va = trace.visits["h"], trace.visits["s"], trace.visits["a"]
    for v in range(U):
        k = trace.schedule.sync_points[v]
        base = t.N[v] + H * t.n[v]
        bound = np.where(base > 0, 2.0 * H / np.where(base > 0, base, 1), np.inf)
        wv = t.W[:v + 1, v]                       # (v+1, H, S, A)
        counts = t.n[:v + 1]
        total = (counts * wv).sum(axis=0)
        sq = (counts * wv**2).sum(axis=0)
        wmax = np.where(counts > 0, wv, 0.0).max(axis=0)
        partial_bound = (H + 1) * counts / np.where(base > 0, base, 1)
        checks = {
            "a_max": wmax > bound * (1 + REL_SLACK),
            "b_sum": total > 1.0 + REL_SLACK,
            "c_partial": np.any(counts * wv > partial_bound * (1 + REL_SLACK), axis=0),
            "d_sqsum": sq > bound * (1 + REL_SLACK),
        }
        for name, bad in checks.items():
            for cell in np.argwhere(bad):
                violations.append({"check": name, "k": k, "cell": [int(c) for c in cell]})
        telescope = np.abs(total - (1.0 - np.prod(t.lam[:v + 1], axis=0)))
        worst_telescope = max(worst_telescope, float(telescope.max()))
        if np.any(telescope > 1e-12):
            for cell in np.argwhere(telescope > 1e-12):
                violations.append({"check": "telescope", "k": k, "cell": [int(c) for c in cell]})
        # per-visit weights evaluated one visit at a time; spread within a round
        upto = trace.visits["k"] <= k
        w_vis = t.W[rounds_all[upto], v, vh[upto], vs[upto], va[upto]]
        if len(w_vis):
            key = ((rounds_all[upto] * H + vh[upto]) * trace.S + vs[upto]) * trace.A + va[upto]
            order = np.argsort(key, kind="stable")
            ks, ws = key[order], w_vis[order]
            starts = np.flatnonzero(np.r_[True, ks[1:] != ks[:-1]])
            spread = np.maximum.reduceat(ws, starts) - np.minimum.reduceat(ws, starts)
            if spread.max() > 0:
                # std of a group is exactly zero iff all its members are equal
                g = int(np.argmax(spread))
                g1 = starts[g + 1] if g + 1 < len(starts) else len(ws)
                worst_in_round_std = max(worst_in_round_std, float(np.std(ws[starts[g]:g1])))
    if worst_in_round_std != 0.0:
        violations.append({"check": "in_round_uniform", "std": worst_in_round_std})
    return CheckReport("weight_bounds", not violations, worst_telescope, violations,
                       {"in_round_std": worst_in_round_std, "syncs": U})


def check_effective_weights(trace, cells=None, rtol=1e-9):
    """Engine-implied weights (from recorded eta and alpha) vs. the closed form."""
    worst = 0.0
    violations = []
    cells = cells if cells is not None else {
        (int(h), int(s), int(a)) for h, s, a in zip(trace.visits["h"], trace.visits["s"], trace.visits["a"])}
    for cell in sorted(cells):
        for k in trace.schedule.sync_points:
            wt = reconstruct_weights(trace, cell, k)
            if not len(wt.omega):
                continue
            err = float(np.max(np.abs(wt.effective - wt.omega) / wt.omega))
            worst = max(worst, err)
            if err > rtol:
                violations.append({"k": k, "cell": list(cell), "rel_err": err})
    return CheckReport("effective_weights", not violations, worst, violations)


# --- error decomposition ---------------------------------------------------

@dataclass
class DecompositionReport:
    """D1..D4, the error Q^pi - Q_k and the residual, each (U, H, S, A)."""

    D1: np.ndarray
    D2: np.ndarray
    D3: np.ndarray
    D4: np.ndarray
    error: np.ndarray
    residual: np.ndarray
    sync_points: tuple
    tol: float = RESIDUAL_TOL

    @property
    def max_residual(self):
        return float(np.max(np.abs(self.residual))) if self.residual.size else 0.0

    @property
    def worst_index(self):
        """(k, h, s, a) of the largest residual, h 0-based."""
        u, h, s, a = np.unravel_index(np.argmax(np.abs(self.residual)), self.residual.shape)
        return int(self.sync_points[u]), int(h), int(s), int(a)

    @property
    def passed(self):
        return self.max_residual <= self.tol

    def to_report(self):
        bad = np.argwhere(np.abs(self.residual) > self.tol)
        viol = [{"k": int(self.sync_points[u]), "h": int(h), "s": int(s), "a": int(a),
                 "residual": float(self.residual[u, h, s, a])} for u, h, s, a in bad]
        return CheckReport("decomposition", self.passed, self.max_residual, viol,
                           {"worst_index": list(self.worst_index) if self.residual.size else None})


def _check_trace_counts(trace, t):
    """Visits per round must match the snapshot counters."""
    rounds = _visit_rounds(trace, trace.visits)
    cnt = np.zeros_like(t.n)
    np.add.at(cnt, (rounds, trace.visits["h"], trace.visits["s"], trace.visits["a"]), 1)
    if not np.array_equal(cnt, t.n):
        u = np.argwhere(cnt != t.n)[0]
        raise ValidationError(
            f"incomplete trace: visits in round {u[0] + 1} disagree with snapshot counters at {u[1:].tolist()}")
    if not np.array_equal(t.N, np.cumsum(t.n, axis=0)):
        raise ValidationError("incomplete trace: cumulative counters are not the running sum of n")
    return rounds


def verify_decomposition(trace, mdp, policy=None, tol=RESIDUAL_TOL, tables=None):
    """Split Q^pi - Q_k into D1..D4 at every sync point and cell.

    ``policy`` defaults to the optimal policy. The true kernel of ``mdp`` is
    used for P_{h,s,a}; the learner never sees it.
    """
    if (mdp.S, mdp.A, mdp.H) != trace.dims:
        raise ValidationError(f"trace dims {trace.dims} differ from MDP dims {mdp.dims}")
    if trace.hyper.get("clip_q") or trace.hyper.get("alpha_gate", "total") != "total":
        raise ValidationError("decomposition needs unclipped Q and the total-count alpha gate")
    if policy is None:
        _, policy = value_iteration(mdp)
    vt, _ = evaluate_policy(mdp, policy)
    Qpi, Vpi = vt.Q, vt.V
    t = tables or round_tables(trace)
    rounds = _check_trace_counts(trace, t)
    H, S, A = trace.H, trace.S, trace.A
    U = len(t.N)
    V_snap = [np.zeros((H + 1, S))] + [np.asarray(s["V"], dtype=float) for s in trace.snapshots]
    # per round: sum over visits of V_{iota(i), h+1}(s'_i), and P_{h,s,a} V_{iota, h+1}
    next_sum = np.zeros((U, H, S, A))
    vis = trace.visits
    frozen = np.stack(V_snap[:U])                       # frozen V during round u
    np.add.at(next_sum, (rounds, vis["h"], vis["s"], vis["a"]),
              frozen[rounds, vis["h"] + 1, vis["s_next"]])
    PV = np.einsum("hsat,uht->uhsa", mdp.P, frozen[:, 1:])     # P_{h,s,a} V_{u-1,h+1}
    PVpi = np.einsum("hsat,ht->hsa", mdp.P, Vpi[1:])
    B = np.stack([s["B"] for s in trace.snapshots])
    Q = np.stack([s["Q"] for s in trace.snapshots])
    D1 = np.zeros((U, H, S, A))
    D2 = np.zeros_like(D1)
    D3 = np.zeros_like(D1)
    D4 = np.zeros_like(D1)
    for v in range(U):
        D1[v] = t.omega0[v] * (Qpi[:H] - 0.0)
        for u in range(v + 1):
            w = t.W[u, v]
            D2[v] += w * (t.n[u] * PV[u] - next_sum[u])
            D4[v] += w * t.n[u] * (PVpi - PV[u])
            D3[v] += B[u] * np.prod(t.lam[u + 1:v + 1], axis=0)
    error = Qpi[:H][None] - Q
    residual = error - (D1 + D2 + D3 + D4)
    return DecompositionReport(D1, D2, D3, D4, error, residual, trace.schedule.sync_points, tol)


def verify_d3_bounds(trace, decomposition=None, c_B=None, zeta1=None):
    """D3 lies in [sqrt(c_B z^2 H^4 / N), 2 sqrt(c_B z^2 H^4 / N)] when N > 0, else 0.

    ``decomposition`` is optional: D3 only needs counters and penalties, so
    it is recomputed from the trace when absent.
    """
    c_B = trace.hyper["c_B"] if c_B is None else c_B
    zeta1 = trace.zeta1 if zeta1 is None else zeta1
    t = round_tables(trace)
    if decomposition is not None:
        D3 = decomposition.D3
    else:
        B = np.stack([s["B"] for s in trace.snapshots])
        D3 = np.zeros_like(B)
        for v in range(len(B)):
            for u in range(v + 1):
                D3[v] += B[u] * np.prod(t.lam[u + 1:v + 1], axis=0)
    H = trace.H
    N = t.N
    lo = np.sqrt(c_B * zeta1**2 * H**4 / np.maximum(N, 1))
    visited = N > 0
    low_bad = visited & (D3 < lo * (1 - REL_SLACK))
    high_bad = visited & (D3 > 2 * lo * (1 + REL_SLACK))
    zero_bad = ~visited & (D3 != 0)
    violations = []
    for name, bad in (("below", low_bad), ("above", high_bad), ("nonzero_unvisited", zero_bad)):
        for u, h, s, a in np.argwhere(bad):
            violations.append({"check": name, "k": int(trace.schedule.sync_points[u]),
                               "cell": [int(h), int(s), int(a)], "D3": float(D3[u, h, s, a])})
    ratio = np.where(visited, D3 / lo, 1.0)
    return CheckReport("d3_bracket", not violations, float(ratio.max()) if ratio.size else 0.0,
                       violations, {"min_ratio": float(ratio.min()) if ratio.size else 0.0})


def check_penalty_dominance(decomposition):
    """|D2| <= D3 at every sync cell; returns the count of violating cells."""
    bad = np.abs(decomposition.D2) > decomposition.D3
    viol = [{"k": int(decomposition.sync_points[u]), "cell": [int(h), int(s), int(a)]}
            for u, h, s, a in np.argwhere(bad)]
    return CheckReport("penalty_dominance", not viol, float(np.max(np.abs(decomposition.D2) - decomposition.D3)),
                       viol)


# --- value checks ------------------------------------------------------------

def check_monotone_values(trace):
    """Global V is cellwise non-decreasing across syncs (zero tolerance)."""
    V = np.stack([np.zeros_like(trace.snapshots[0]["V"])] + [s["V"] for s in trace.snapshots])
    drops = np.diff(V, axis=0) < 0
    viol = [{"k": int(trace.schedule.sync_points[u]), "h": int(h), "s": int(s)}
            for u, h, s in np.argwhere(drops)]
    return CheckReport("monotone_values", not viol, 0.0, viol)


def check_pessimism(trace, mdp, tol=1e-9):
    """V_k(h, s) <= V^{pi_k}_h(s) <= V*_h(s) at every sync, by exact DP."""
    vstar, _ = value_iteration(mdp)
    viol = []
    worst = -math.inf
    for k, snap in zip(trace.schedule.sync_points, trace.snapshots):
        vt, _ = evaluate_policy(mdp, DeterministicPolicy(snap["policy"]))
        gap = snap["V"][:trace.H] - vt.V[:trace.H]
        worst = max(worst, float(gap.max()))
        for h, s in np.argwhere(gap > tol):
            viol.append({"k": int(k), "h": int(h), "s": int(s), "excess": float(gap[h, s])})
        over = vt.V[:trace.H] - vstar.V[:trace.H]
        for h, s in np.argwhere(over > tol):
            viol.append({"k": int(k), "h": int(h), "s": int(s), "beats_optimal": float(over[h, s])})
    return CheckReport("pessimism", not viol, worst, viol)


def check_counter_bookkeeping(trace):
    """N_v = N_{v-1} + n_v and sum_{s,a} N_v[h] = M * t_v for every h."""
    t = round_tables(trace)
    viol = []
    if not np.array_equal(t.N, t.N_before + t.n):
        viol.append({"check": "rolling"})
    totals = t.N.sum(axis=(2, 3))
    expected = trace.M * np.array(trace.schedule.sync_points)[:, None]
    for u, h in np.argwhere(totals != expected):
        viol.append({"check": "total", "k": int(trace.schedule.sync_points[u]), "h": int(h)})
    return CheckReport("counter_bookkeeping", not viol, 0.0, viol)


# --- counter concentration ---------------------------------------------------

def cumulative_counts(trace):
    """N_k(h, s, a) for every k = 0..K, shape (K+1, H, S, A)."""
    per_k = np.zeros((trace.K + 1, trace.H, trace.S, trace.A), dtype=np.int64)
    v = trace.visits
    np.add.at(per_k, (v["k"].astype(np.int64), v["h"], v["s"], v["a"]), 1)
    return np.cumsum(per_k, axis=0)


def counter_concentration_check(traces, d_avg, delta, c1=1.0 / 3.0):
    """Two-sided counter band for k >= K0 and a cap for k <= K0, per run.

    K0 = 4 zeta0 / (c1 M d_avg) with zeta0 = log(2 S A K H / delta). A run
    counts as violating if any (k, h, s, a) leaves its band. The report's
    ``worst`` is the empirical fraction of violating runs.
    """
    if not traces:
        raise ValidationError("counter_concentration_check needs at least one trace")
    d = np.asarray(d_avg.d_sa if hasattr(d_avg, "d_sa") else d_avg, dtype=float)
    run_flags = []
    examples = []
    for idx, tr in enumerate(traces):
        S, A, H, K, M = tr.S, tr.A, tr.H, tr.K, tr.M
        zeta0 = math.log(2 * S * A * K * H / delta)
        with np.errstate(divide="ignore"):
            K0 = np.where(d > 0, 4 * zeta0 / (c1 * M * np.where(d > 0, d, 1)), np.inf)
        N = cumulative_counts(tr)
        ks = np.arange(K + 1)[:, None, None, None]
        mean = ks * M * d[None]
        late = ks >= K0[None]
        early = ks <= K0[None]
        bad = (late & ((N < 0.5 * mean) | (N > 2 * mean))) | (early & (N > 8 * zeta0 / c1))
        flag = bool(bad.any())
        run_flags.append(flag)
        if flag and len(examples) < 5:
            k, h, s, a = np.argwhere(bad)[0]
            examples.append({"run": idx, "k": int(k), "cell": [int(h), int(s), int(a)],
                             "N": int(N[k, h, s, a]), "mean": float(mean[k, h, s, a])})
    rate = float(np.mean(run_flags))
    return CheckReport("counter_concentration", rate <= delta, rate, examples,
                       {"runs": len(traces), "violating_runs": int(sum(run_flags)), "c1": c1,
                        "delta": delta})


def run_all(trace, mdp, policy=None):
    """Hard-invariant checks used by ``fedlcbq verify``."""
    tables = round_tables(trace)
    decomp = verify_decomposition(trace, mdp, policy, tables=tables)
    reports = [
        verify_lemma6_bounds(trace, tables),
        decomp.to_report(),
        verify_d3_bounds(trace, decomp),
        check_monotone_values(trace),
        check_counter_bookkeeping(trace),
    ]
    return reports


def replay_trace(trace, mdp, behavior_policies):
    """Re-sample every agent's data from the trace's seeds and re-run the learner.

    Returns the new trace; equal bytes mean the run is reproducible.
    """
    from .data import sample_dataset
    from .engine import HyperParams, run_fedlcbq

    seeds = trace.meta.get("seeds")
    if not seeds or len(seeds) != trace.M or len(behavior_policies) != trace.M:
        raise ValidationError("trace does not carry one seed per agent")
    datasets = [sample_dataset(mdp, pol, trace.K, seed, m)
                for m, (pol, seed) in enumerate(zip(behavior_policies, seeds))]
    hyper = HyperParams.from_dict(trace.hyper)
    return run_fedlcbq(mdp, datasets, trace.schedule, hyper, trace=True).trace
