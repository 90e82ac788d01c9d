import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hocl.baseline import (SolverOptions, cost_J1, cost_J2, follower_gradient_step,
                           leader_gradient_step, run_algorithm_O, safe_follower_step)
from hocl.dynamics import (AdjointTrajectory, ControlTrajectory, StateTrajectory,
                           augmented_hamiltonian, extremum_residual, integrate_adjoint,
                           integrate_forward)
from hocl.grid import FOLLOWER, LEADER, TimeGrid
from hocl.msa import (argmin_augH_follower, argmin_augH_leader, follower_update,
                      run_algorithm_1)
from hocl.problem import identity_design, reference_problem


def const_state(grid, value):
    return StateTrajectory(grid, np.tile(np.asarray(value, float), (grid.N + 1, 1)))


def adjoint_with(prob, agent, interval_value):
    ivals = np.tile(np.asarray(interval_value, float), (prob.N, 1))
    return AdjointTrajectory(prob.grid, agent, np.zeros((prob.N + 1, prob.p)), ivals)


# ---------------------------------------------------------------- costs

def test_cost_J1_hand_values():
    grid = TimeGrid(2.0, 10)
    assert cost_J1(const_state(grid, [0.0, 0.0])) == 0.0
    assert cost_J1(const_state(grid, [1.0, 0.0])) == pytest.approx(1.0, abs=1e-15)


def test_cost_J1_against_closed_form_integral():
    prob = reference_problem(N=100)
    u1 = ControlTrajectory.zeros(prob, LEADER)
    u2 = ControlTrajectory.zeros(prob, FOLLOWER)
    theta = integrate_forward(prob.theta0, u1, u2, prob.grid, prob)
    # |theta(t)|^2 / 2 = (1 - e^-t)^2 for theta0 = 0, theta* = (1, -1)
    exact = 1.0 - 2.0 * (1.0 - math.exp(-1.0)) + 0.5 * (1.0 - math.exp(-2.0))
    assert abs(cost_J1(theta) - exact) <= 1e-6


def test_cost_J2_hand_value():
    prob = reference_problem(alpha=2.0, beta=4.0)
    theta = const_state(prob.grid, [1.0, 0.0])
    u2 = ControlTrajectory.from_values(prob, FOLLOWER, [0.0, 1.0])
    assert cost_J2(theta, u2, prob) == pytest.approx(3.0, abs=1e-14)
    assert cost_J2(const_state(prob.grid, [0, 0]), ControlTrajectory.zeros(prob, FOLLOWER), prob) == 0.0


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0.1, 5), b=st.floats(0.1, 5), da=st.floats(0, 3), db=st.floats(0, 3))
def test_cost_J2_monotone_in_weights(a, b, da, db):
    prob = reference_problem(N=10, alpha=a, beta=b)
    rng = np.random.default_rng(0)
    theta = StateTrajectory(prob.grid, rng.normal(size=(11, 2)))
    u2 = ControlTrajectory.from_values(prob, FOLLOWER, rng.uniform(-1, 1, (10, 2)))
    assert cost_J2(theta, u2, prob.replace(alpha=a + da, beta=b + db)) >= cost_J2(theta, u2, prob)


# ---------------------------------------------------------------- gradient steps

def test_follower_step_by_hand():
    prob = reference_problem(u_max=10.0)
    u2 = ControlTrajectory.zeros(prob, FOLLOWER)
    new = follower_gradient_step(u2, adjoint_with(prob, FOLLOWER, [0.0, 1.0]), 0.5, prob)
    np.testing.assert_array_equal(new.values[:, 1], -0.5)
    np.testing.assert_array_equal(new.values[:, 0], 0.0)


def test_follower_step_stationary_and_clamped():
    prob = reference_problem()
    u2 = ControlTrajectory.from_values(prob, FOLLOWER, [0.0, 0.3])
    same = follower_gradient_step(u2, adjoint_with(prob, FOLLOWER, [0.0, -0.3]), 0.5, prob)
    assert same == u2
    big = follower_gradient_step(u2, adjoint_with(prob, FOLLOWER, [0.0, -50.0]), 1.0, prob)
    np.testing.assert_array_equal(big.values[:, 1], 1.0)
    with pytest.raises(ValueError):
        follower_gradient_step(u2, adjoint_with(prob, FOLLOWER, [0, 0]), 1.5, prob)


def test_leader_step_by_hand_and_antisymmetry():
    prob = reference_problem()
    u1 = ControlTrajectory.from_values(prob, LEADER, [1.0, 0.0])
    new = leader_gradient_step(u1, adjoint_with(prob, LEADER, [2.0, 0.0]), 0.25, prob)
    np.testing.assert_array_equal(new.values[:, 0], 0.5)
    assert leader_gradient_step(u1, adjoint_with(prob, LEADER, [0.0, 0.0]), 0.25, prob) == u1
    z = ControlTrajectory.zeros(prob, LEADER)
    a = leader_gradient_step(z, adjoint_with(prob, LEADER, [0.4, 0.0]), 0.5, prob)
    b = leader_gradient_step(z, adjoint_with(prob, LEADER, [-0.4, 0.0]), 0.5, prob)
    np.testing.assert_array_equal(a.values, -b.values)


# ---------------------------------------------------------------- baseline runs

def trivial_problem():
    z = identity_design([0.0, 0.0])
    return reference_problem().replace(train_set=z, valid_set=z)


@pytest.mark.parametrize("runner", [run_algorithm_O, run_algorithm_1])
def test_optimal_start_returns_after_one_iteration(runner):
    rep = runner(trivial_problem())
    assert rep.converged and rep.outer_iters == 1
    assert rep.residual_history[-1].leader_residual <= 1e-6


@pytest.mark.parametrize("runner", [run_algorithm_O, run_algorithm_1])
def test_reports_are_deterministic(runner, ref_prob):
    opts = SolverOptions(max_outer=30)
    a = runner(ref_prob, opts).to_dict(timing=False)
    b = runner(ref_prob, opts).to_dict(timing=False)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a["schema_version"] == 1 and not a["converged"]


def test_budget_exhaustion_is_flagged(ref_prob):
    rep = run_algorithm_O(ref_prob, SolverOptions(max_outer=3))
    assert not rep.converged and rep.outer_iters == 3
    assert np.all(np.isfinite(rep.theta_final))


def test_baseline_iterates_feasible_and_follower_descends(baseline_run, ref_prob):
    assert baseline_run.converged
    assert np.all(np.abs(baseline_run.u1) <= ref_prob.u_max)
    assert np.all(baseline_run.u1[:, ~ref_prob.mask(LEADER)] == 0.0)
    assert np.all(baseline_run.u2[:, ~ref_prob.mask(FOLLOWER)] == 0.0)
    # the default follower step equals the documented safe step
    assert safe_follower_step(ref_prob) == 0.5
    for costs in baseline_run.diagnostics["follower_J2_sweeps"]:
        assert np.all(np.diff(costs) <= 1e-10)


def test_ascent_sign_is_available(ref_prob):
    rep = run_algorithm_O(ref_prob, SolverOptions(max_outer=5, sign=1))
    assert not rep.converged
    with pytest.raises(ValueError):
        SolverOptions(sign=0)


# ---------------------------------------------------------------- closed-form updates

def test_follower_argmin_examples():
    prob = reference_problem(gamma2=0.0, u_max=10.0)
    np.testing.assert_array_equal(argmin_augH_follower([0.0, 2.0], [0.0, 0.7], prob), [0.0, -2.0])
    prob1 = reference_problem(u_max=10.0).replace(gamma2=0.999999)
    # scalar beta=1, gamma2->1, p=2, u_bar=0: (0 - 2)/(1 + gamma2)
    out = argmin_augH_follower([0.0, 2.0], [0.0, 0.0], prob1)
    assert out[1] == pytest.approx(-1.0, abs=1e-6)
    assert np.all(argmin_augH_follower([0.0, 0.0], [0.0, 0.0], reference_problem()) == 0.0)


def test_leader_argmin_examples():
    prob = reference_problem(p=3, gamma1=0.0)        # leader owns {0, 1}
    np.testing.assert_array_equal(argmin_augH_leader([3.0, -2.0, 5.0], np.zeros(3), prob),
                                  [-1.0, 1.0, 0.0])
    # sign(0) -> 0
    np.testing.assert_array_equal(argmin_augH_leader(np.zeros(3), [0.5, 0.5, 0], prob), 0.0)
    prob5 = reference_problem(gamma1=0.5, u_max=10.0)
    np.testing.assert_array_equal(argmin_augH_leader([0.0, 0.0], [0.3, 0.0], prob5), [0.3, 0.0])
    np.testing.assert_array_equal(argmin_augH_leader([1.0, 0.0], [0.0, 0.0], prob5), [-2.0, 0.0])


def test_argmin_grid_scan_scalar():
    prob = reference_problem(u_max=10.0).replace(gamma2=0.9)
    grid = np.linspace(-10, 10, 200001)
    for p2, ub in ((2.0, 0.0), (-3.0, 1.5), (25.0, -2.0)):
        f = p2 * grid + 0.5 * prob.beta * grid ** 2 + 0.45 * (grid - ub) ** 2
        best = grid[np.argmin(f)]
        got = argmin_augH_follower([0.0, p2], [0.0, ub], prob)[1]
        assert abs(got - best) <= 1e-4


def test_argmin_is_global_minimizer_of_augmented_hamiltonian():
    prob = reference_problem(p=4)
    rng = np.random.default_rng(7)
    for agent, fn in ((FOLLOWER, argmin_augH_follower), (LEADER, argmin_augH_leader)):
        mask = prob.mask(agent)
        gamma = prob.gamma2 if agent == FOLLOWER else prob.gamma1
        for _ in range(20):
            th, p, uo = rng.normal(size=(3, 4))
            ub = rng.uniform(-1, 1, 4) * mask
            uo = uo * ~mask
            star = fn(p, ub, prob)
            H_star = augmented_hamiltonian(agent, th, p, ub, star, uo, gamma, prob)
            for u in rng.uniform(-1, 1, (100, 4)) * mask:
                assert augmented_hamiltonian(agent, th, p, ub, u, uo, gamma, prob) - H_star >= -1e-12


def test_fixed_point_has_zero_residual(msa_run, ref_prob):
    u1 = ControlTrajectory(ref_prob.grid, LEADER, msa_run.u1, ref_prob.mask(LEADER))
    u2 = ControlTrajectory(ref_prob.grid, FOLLOWER, msa_run.u2, ref_prob.mask(FOLLOWER))
    theta = integrate_forward(ref_prob.theta0, u1, u2, ref_prob.grid, ref_prob)
    p2 = integrate_adjoint(FOLLOWER, theta, ref_prob.grid, ref_prob)
    # make u2 an exact fixed point of the follower update, then check the residual
    fixed = u2
    for _ in range(200):
        fixed = follower_update(fixed, p2, ref_prob)
    assert follower_update(fixed, p2, ref_prob) == fixed
    assert extremum_residual(FOLLOWER, p2, u1, fixed, ref_prob) <= 1e-10


# ---------------------------------------------------------------- MSA runs

def test_msa_follower_descends(msa_run):
    for before, after in msa_run.diagnostics["follower_J2_updates"]:
        assert after <= before + 1e-10


def test_gamma_zero_msa_is_hamiltonian_minimizer_iteration():
    prob = reference_problem(gamma1=0.0, gamma2=0.0)
    rep = run_algorithm_1(prob, SolverOptions(max_outer=3))
    # replay by hand with the unaugmented minimizers
    u1 = ControlTrajectory.zeros(prob, LEADER)
    u2 = ControlTrajectory.zeros(prob, FOLLOWER)
    for _ in range(3):
        th = integrate_forward(prob.theta0, u1, u2, prob.grid, prob)
        p2 = integrate_adjoint(FOLLOWER, th, prob.grid, prob)
        u2 = ControlTrajectory.from_values(prob, FOLLOWER, -p2.interval_values / prob.beta)
        th = integrate_forward(prob.theta0, u1, u2, prob.grid, prob)
        p1 = integrate_adjoint(LEADER, th, prob.grid, prob)
        last_u1 = u1
        u1 = ControlTrajectory.from_values(prob, LEADER, -prob.u_max * np.sign(p1.interval_values))
    np.testing.assert_array_equal(rep.u2, u2.values)
    np.testing.assert_array_equal(rep.u1, u1.values if not rep.converged else last_u1.values)


@pytest.mark.slow
def test_gamma2_sweep_reaches_same_fixed_point(ref_prob, msa_run):
    for g in (0.1, 0.9):
        rep = run_algorithm_1(ref_prob.replace(gamma2=g), SolverOptions(max_outer=8000))
        assert rep.converged
        np.testing.assert_allclose(rep.theta_final, msa_run.theta_final, atol=1e-4)
