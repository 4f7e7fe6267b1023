"""Independent reference implementations used as test oracles.

Nothing here imports the package's algorithms: values come from forward
state-distribution propagation and policy enumeration, and the learner
reference is a plain scalar loop over visits written from the update rules.
"""

import itertools
import math

import numpy as np


def policy_matrix(P_h, r_h, actions_h):
    """Transition matrix and reward vector induced by a deterministic step policy."""
    S = P_h.shape[0]
    idx = np.arange(S)
    return P_h[idx, actions_h], r_h[idx, actions_h]


def forward_value(P, r, rho, actions):
    """sum_h d_h . r_h(pi) with d_{h+1} = d_h P_pi, i.e. explicit matrix products."""
    d = np.asarray(rho, dtype=float)
    total = 0.0
    for h in range(P.shape[0]):
        T, rv = policy_matrix(P[h], r[h], actions[h])
        total += float(d @ rv)
        d = d @ T
    return total


def brute_force_optimum(P, r, rho):
    """Max over all A^(S H) deterministic policies of the forward value."""
    H, S, A, _ = P.shape
    best = -math.inf
    for flat in itertools.product(range(A), repeat=S * H):
        actions = np.array(flat).reshape(H, S)
        best = max(best, forward_value(P, r, rho, actions))
    return best


def matrix_power_occupancy(P, probs, rho):
    """d_h(s) via products of the policy-averaged transition matrices."""
    H, S, A, _ = P.shape
    out = np.zeros((H, S))
    T = [np.einsum("sa,sat->st", probs[h], P[h]) for h in range(H)]
    for h in range(H):
        M = np.eye(S)
        for j in range(h):
            M = M @ T[j]
        out[h] = rho @ M
    return out


def reference_fedlcbq(S, A, H, episodes, sync_points, c_B, zeta1):
    """Scalar, visit-by-visit FedLCB-Q.

    ``episodes[m][k]`` is a list of (s, a, r, s') for steps h = 0..H-1.
    Returns global Q (dict-of-cells) and V (list of lists) after the last
    sync, plus the global policy.
    """
    M = len(episodes)
    K = len(episodes[0])
    cells = [(h, s, a) for h in range(H) for s in range(S) for a in range(A)]
    Qg = {c: 0.0 for c in cells}
    Vg = [[0.0] * S for _ in range(H + 1)]
    pol = [[0] * S for _ in range(H)]
    N = {c: 0 for c in cells}
    Ql = [dict(Qg) for _ in range(M)]
    Vl = [[row[:] for row in Vg] for _ in range(M)]
    nl = [{c: 0 for c in cells} for _ in range(M)]
    syncs = set(sync_points)
    for k in range(1, K + 1):
        for h in range(H):
            for m in range(M):
                s, a, r, s2 = episodes[m][k - 1][h]
                c = (h, s, a)
                nl[m][c] += 1
                eta = M * (H + 1) / (N[c] + M * (H + 1) * nl[m][c])
                Ql[m][c] = (1 - eta) * Ql[m][c] + eta * (r + Vl[m][h + 1][s2])
        if k not in syncs:
            continue
        for c in cells:
            n = sum(nl[m][c] for m in range(M))
            Nn = N[c] + n
            q = 0.0
            for m in range(M):
                if n > 0:
                    alpha = (N[c] + (H + 1) * M * nl[m][c]) / (M * (Nn + H * n))
                else:
                    alpha = 1.0 / M
                q += alpha * Ql[m][c]
            B = 0.0 if Nn == 0 else (H + 1) * n / (Nn + H * n) * math.sqrt(c_B * zeta1**2 * H**4 / Nn)
            Qg[c] = q - B
            N[c] = Nn
        for h in range(H):
            for s in range(S):
                vals = [Qg[(h, s, a)] for a in range(A)]
                best = max(vals)
                if best > Vg[h][s]:
                    Vg[h][s] = best
                    pol[h][s] = vals.index(best)
        for m in range(M):
            Ql[m] = dict(Qg)
            Vl[m] = [row[:] for row in Vg]
            nl[m] = {c: 0 for c in cells}
    Q = np.array([[[Qg[(h, s, a)] for a in range(A)] for s in range(S)] for h in range(H)])
    return Q, np.array(Vg), np.array(pol)


def episodes_from_datasets(datasets):
    return [[list(zip(d.states[k, :-1].tolist(), d.actions[k].tolist(),
                      d.rewards[k].tolist(), d.states[k, 1:].tolist()))
             for k in range(d.K)] for d in datasets]
