import math

import numpy as np
import pytest

from fedlcbq.errors import ValidationError
from fedlcbq.generators import chain_mdp, random_mdp, split_masks, split_mdp
from fedlcbq.data import make_behavior_policy
from fedlcbq.mdp import (INFINITE_CONCENTRABILITY, DeterministicPolicy, OccupancyTables,
                         StochasticPolicy, TabularMdp, average_concentrability,
                         clipped_concentrability, evaluate_policy, is_covered,
                         occupancy_distributions, value_iteration)

from oracles import brute_force_optimum, matrix_power_occupancy


def test_validation_reports_offending_index():
    mdp = random_mdp(2, 2, 2, 0)
    P = mdp.P.copy()
    P[1, 0, 1, 0] += 0.1
    with pytest.raises(ValidationError, match=r"P\[1, 0, 1\]"):
        TabularMdp(P, mdp.r, mdp.rho)
    r = mdp.r.copy()
    r[0, 1, 0] = 1.5
    with pytest.raises(ValidationError, match=r"r\[0, 1, 0\]"):
        TabularMdp(mdp.P, r, mdp.rho)
    with pytest.raises(ValidationError, match="rho"):
        TabularMdp(mdp.P, mdp.r, np.array([0.7, 0.7]))
    with pytest.raises(ValidationError):
        TabularMdp(mdp.P, mdp.r[:1], mdp.rho)


def test_json_round_trip_is_exact(tmp_path):
    mdp = random_mdp(3, 2, 4, 5)
    path = tmp_path / "m.json"
    mdp.save(path)
    back = TabularMdp.load(path)
    for a, b in ((mdp.P, back.P), (mdp.r, back.r), (mdp.rho, back.rho)):
        assert np.array_equal(a, b)


def test_json_missing_field():
    with pytest.raises(ValidationError, match="rho"):
        TabularMdp.from_json('{"S": 1, "A": 1, "H": 1, "P": [[[[1.0]]]], "r": [[[0.0]]]}')


def test_horizon_one_q_equals_reward():
    mdp = random_mdp(3, 2, 1, 3)
    vt, _ = value_iteration(mdp)
    assert np.array_equal(vt.Q[0], mdp.r[0])
    assert np.all(vt.Q[1] == 0) and np.all(vt.V[1] == 0)


def test_zero_reward_ties_to_action_zero():
    mdp = random_mdp(3, 3, 2, 1)
    mdp0 = TabularMdp(mdp.P, np.zeros_like(mdp.r), mdp.rho)
    vt, pi = value_iteration(mdp0)
    assert np.all(vt.Q == 0) and np.all(vt.V == 0)
    assert np.all(pi.actions == 0)


@pytest.mark.parametrize("seed", range(5))
def test_value_iteration_matches_brute_force(seed):
    mdp = random_mdp(3, 2, 3, seed)
    vt, pi = value_iteration(mdp)
    best = brute_force_optimum(mdp.P, mdp.r, mdp.rho)
    assert abs(float(mdp.rho @ vt.V[0]) - best) <= 1e-12
    _, v_pi = evaluate_policy(mdp, pi)
    assert abs(v_pi - best) <= 1e-12


def test_evaluate_optimal_policy_consistency():
    mdp = random_mdp(4, 3, 3, 2)
    vt, pi = value_iteration(mdp)
    ev, v = evaluate_policy(mdp, pi)
    assert abs(v - float(mdp.rho @ vt.V[0])) <= 1e-12
    assert np.allclose(ev.V, vt.V, atol=1e-12, rtol=0)


def test_chain_walking_policy_value_one():
    mdp = chain_mdp(2, 2)
    walk = DeterministicPolicy(np.array([[1, 1], [0, 0]]))
    _, v = evaluate_policy(mdp, walk)
    assert v == 1.0
    assert float(mdp.rho @ value_iteration(mdp)[0].V[0]) == 1.0


def test_constant_reward_uniform_policy():
    H, A = 4, 3
    mdp = TabularMdp(np.ones((H, 1, A, 1)), np.full((H, 1, A), 0.5), np.ones(1))
    _, v = evaluate_policy(mdp, StochasticPolicy(np.full((H, 1, A), 1.0 / A)))
    assert v == pytest.approx(0.5 * H, abs=1e-12)


def test_evaluate_policy_custom_rho_and_shape_errors():
    mdp = random_mdp(2, 2, 2, 0)
    _, pi = value_iteration(mdp)
    vt, v = evaluate_policy(mdp, pi, rho=[1.0, 0.0])
    assert v == vt.V[0, 0]
    with pytest.raises(ValidationError):
        evaluate_policy(mdp, DeterministicPolicy(np.zeros((3, 2), dtype=int)))
    with pytest.raises(ValidationError):
        evaluate_policy(mdp, DeterministicPolicy(np.full((2, 2), 5)))


def test_occupancy_first_step_is_rho():
    mdp = random_mdp(4, 2, 3, 9)
    pol, _ = make_behavior_policy("uniform", mdp)
    occ = occupancy_distributions(mdp, pol)
    assert np.array_equal(occ.d_state[0], mdp.rho)
    assert np.allclose(occ.d_sa.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_occupancy_deterministic_is_one_hot():
    mdp = chain_mdp(4, 5)
    occ = occupancy_distributions(mdp, DeterministicPolicy(np.ones((5, 4), dtype=int)))
    for h in range(5):
        assert np.count_nonzero(occ.d_state[h]) == 1
        assert occ.d_state[h, min(h, 3)] == 1.0


def test_occupancy_matches_matrix_powers():
    P = np.zeros((5, 2, 1, 2))
    P[:, 0, 0] = [0.5, 0.5]
    P[:, 1, 0] = [0.5, 0.5]
    P[:, 0, 0] = [0.3, 0.7]
    mdp = TabularMdp(P, np.zeros((5, 2, 1)), np.array([1.0, 0.0]))
    pol, _ = make_behavior_policy("uniform", mdp)
    occ = occupancy_distributions(mdp, pol)
    assert np.allclose(occ.d_state, matrix_power_occupancy(mdp.P, pol.probs, mdp.rho), atol=1e-14)
    mdp = random_mdp(4, 3, 4, 11)
    pol, _ = make_behavior_policy("epsilon_optimal", mdp, epsilon=0.3)
    occ = occupancy_distributions(mdp, pol)
    assert np.allclose(occ.d_state, matrix_power_occupancy(mdp.P, pol.probs, mdp.rho), atol=1e-14)


def test_concentrability_identical_trivial():
    mdp = TabularMdp(np.ones((1, 1, 1, 1)), np.zeros((1, 1, 1)), np.ones(1))
    occ = occupancy_distributions(mdp, DeterministicPolicy(np.zeros((1, 1), dtype=int)))
    assert clipped_concentrability(occ, occ, 1) == 1.0


def test_concentrability_hand_enumerated_2x2x2():
    # optimal occupancy concentrated, behavior uniform over the 2x2 cells per step
    d_opt = np.zeros((2, 2, 2))
    d_opt[0, 0, 1] = 1.0
    d_opt[1, 1, 0] = 0.6
    d_opt[1, 0, 0] = 0.4
    d_b = np.full((2, 2, 2), 0.25)
    opt = OccupancyTables(d_opt.sum(-1), d_opt)
    beh = OccupancyTables(d_b.sum(-1), d_b)
    expected = max(min(x, 0.5) / 0.25 for x in d_opt.ravel())
    assert clipped_concentrability(opt, beh, 2) == expected == 2.0
    assert clipped_concentrability(opt, beh, 2, clip=False) == 4.0


def test_concentrability_uncovered_is_infinite_sentinel():
    d_opt = np.array([[[1.0, 0.0]]])
    d_b = np.array([[[0.0, 1.0]]])
    c = clipped_concentrability(OccupancyTables(d_opt.sum(-1), d_opt),
                                OccupancyTables(d_b.sum(-1), d_b), 1)
    assert c == INFINITE_CONCENTRABILITY and math.isinf(c) and not is_covered(c)


def test_average_concentrability_reductions():
    mdp = random_mdp(3, 2, 3, 4)
    _, pi = value_iteration(mdp)
    d_opt = occupancy_distributions(mdp, pi)
    pol, _ = make_behavior_policy("epsilon_optimal", mdp, epsilon=0.4)
    d_b = occupancy_distributions(mdp, pol)
    single = clipped_concentrability(d_opt, d_b, 3)
    assert average_concentrability(d_opt, [d_b], 3) == single
    assert average_concentrability(d_opt, [d_b] * 4, 3) == pytest.approx(single, rel=1e-12)
    with pytest.raises(ValidationError):
        average_concentrability(d_opt, [], 3)


def test_split_coverage_infinite_single_finite_average():
    mdp = split_mdp(2, 2, 3)
    _, pi = value_iteration(mdp)
    d_opt = occupancy_distributions(mdp, pi)
    occ = [occupancy_distributions(mdp, make_behavior_policy("masked_uniform", mdp, allowed=m)[0])
           for m in split_masks(mdp).values()]
    assert all(clipped_concentrability(d_opt, d, 2) == INFINITE_CONCENTRABILITY for d in occ)
    avg = average_concentrability(d_opt, occ, 2)
    assert is_covered(avg)
    # direct enumeration over cells of min(d_opt, 1/S) / d_avg
    d_avg = (occ[0].d_sa + occ[1].d_sa) / 2
    ratios = [min(o, 0.5) / b for o, b in zip(d_opt.d_sa.ravel(), d_avg.ravel()) if o > 0]
    assert avg == pytest.approx(max(ratios), rel=1e-12)
