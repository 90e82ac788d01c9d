import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from hocl.grid import ControlPartition, TimeGrid
from hocl.problem import (Dataset, DimensionError, ModelSpec, ProblemSpec, bootstrap_indices,
                          bootstrap_split, grad_J0, grad_phi, hvp_J0, identity_design,
                          load_dataset, loss_J0, orthonormal_design, phi, reference_problem,
                          save_dataset)


def random_dataset(rng, m=7, d=3):
    return Dataset(rng.normal(size=(m, d)), rng.normal(size=m))


def fd(f, x, eps=1e-6):
    g = np.zeros_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = eps
        g[j] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


# ---------------------------------------------------------------- datasets

def test_dataset_rejects_bad_shapes_and_values():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(2))
    with pytest.raises(DimensionError):
        Dataset(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(ValueError):
        Dataset(np.array([[1.0, np.nan]]), np.zeros(1))
    with pytest.raises(ValueError):
        Dataset(np.ones((1, 1)), np.array([np.inf]))


def test_dataset_is_immutable():
    ds = Dataset(np.ones((2, 2)), np.ones(2))
    with pytest.raises(ValueError):
        ds.features[0, 0] = 3.0


def test_csv_round_trip(tmp_path, rng):
    ds = random_dataset(rng)
    save_dataset(ds, tmp_path / "z.csv")
    assert load_dataset(tmp_path / "z.csv") == ds
    save_dataset(ds, tmp_path / "raw.csv", header=False)
    assert load_dataset(tmp_path / "raw.csv", header=False) == ds


# ---------------------------------------------------------------- bootstrap

def test_split_without_replacement_partitions_rows():
    i1, i2 = bootstrap_indices(4, 2, 2, seed=3, with_replacement=False)
    assert set(i1).isdisjoint(i2)
    assert set(i1) | set(i2) == {0, 1, 2, 3}


def test_split_with_replacement_replays_stream():
    # first five then next five draws of PCG64(7).integers(0, 3)
    i1, i2 = bootstrap_indices(3, 5, 5, seed=7, with_replacement=True)
    assert i1.tolist() == [2, 1, 2, 2, 1]
    assert i2.tolist() == [2, 2, 0, 0, 0]


def test_split_errors():
    with pytest.raises(ValueError, match="insufficient samples"):
        bootstrap_indices(3, 2, 2, 0, False)
    with pytest.raises(ValueError, match="empty split"):
        bootstrap_indices(3, 0, 2, 0, True)
    with pytest.raises(ValueError, match="empty split"):
        bootstrap_indices(3, 2, 0, 0, False)


@settings(max_examples=30, deadline=None)
@given(m0=st.integers(1, 30), m1=st.integers(1, 20), m2=st.integers(1, 20),
       seed=st.integers(0, 2**32), repl=st.booleans())
def test_split_is_deterministic_and_valid(m0, m1, m2, seed, repl):
    z0 = Dataset(np.arange(2 * m0, dtype=float).reshape(m0, 2), np.arange(m0, dtype=float))
    if not repl and m1 + m2 > m0:
        with pytest.raises(ValueError):
            bootstrap_split(z0, m1, m2, seed, repl)
        return
    a = bootstrap_split(z0, m1, m2, seed, repl)
    b = bootstrap_split(z0, m1, m2, seed, repl)
    assert a[0] == b[0] and a[1] == b[1]
    assert a[0].m == m1 and a[1].m == m2


# ---------------------------------------------------------------- models

def test_basis_design_columns():
    X = np.array([[2.0, 0.5], [-1.0, 3.0]])
    model = ModelSpec.fixed_basis(["1", "x0", "x1^2", "x0*x1", "sin(x1)", "cos(x0)", "exp(x1)"])
    D = model.design(X)
    np.testing.assert_allclose(D[0], [1, 2, 0.25, 1.0, math.sin(0.5), math.cos(2.0), math.exp(0.5)])
    assert model.param_dim == 7


def test_model_validation():
    with pytest.raises(ValueError):
        ModelSpec.fixed_basis(["tanh(x0)"])
    with pytest.raises(DimensionError):
        ModelSpec.fixed_basis(["x4"]).design(np.zeros((1, 2)))
    with pytest.raises(DimensionError):
        ModelSpec.linear(3).design(np.zeros((2, 2)))


# ---------------------------------------------------------------- losses

def test_loss_single_sample_by_hand():
    ds = Dataset(np.array([[1.0]]), np.array([0.0]))
    assert loss_J0(np.array([2.0]), ds) == 2.0


def test_loss_zero_at_interpolant_and_duplication_invariant(rng):
    X = rng.normal(size=(5, 3))
    theta = rng.normal(size=3)
    ds = Dataset(X, X @ theta)
    assert loss_J0(theta, ds) == pytest.approx(0.0, abs=1e-28)
    noisy = random_dataset(rng, 5, 3)
    doubled = Dataset(np.vstack([noisy.features] * 2), np.concatenate([noisy.labels] * 2))
    assert loss_J0(theta, doubled) == pytest.approx(loss_J0(theta, noisy), rel=1e-14)


def test_gradient_identity_design_by_hand():
    # (1/m) X^T (X theta - y) with X = I2, y = (1, -1), theta = 0, m = 2
    ds = Dataset(np.eye(2), np.array([1.0, -1.0]))
    np.testing.assert_array_equal(grad_J0(np.zeros(2), ds), [-0.5, 0.5])


def test_gradient_vanishes_at_least_squares_solution(rng):
    ds = random_dataset(rng, 10, 3)
    theta = np.linalg.lstsq(ds.features, ds.labels, rcond=None)[0]
    np.testing.assert_allclose(grad_J0(theta, ds), 0.0, atol=1e-12)


def test_derivatives_match_finite_differences(rng):
    model = ModelSpec.fixed_basis(["1", "x0", "x1^2", "sin(x0)"])
    ds = random_dataset(rng, 9, 2)
    for _ in range(10):
        theta = rng.normal(size=4)
        g = grad_J0(theta, ds, model)
        ref = fd(lambda t: loss_J0(t, ds, model), theta)
        assert np.max(np.abs(g - ref)) <= 1e-6 * np.max(np.abs(ref))
        gp = grad_phi(theta, ds, model)
        refp = fd(lambda t: phi(t, ds, model), theta)
        assert np.max(np.abs(gp - refp)) <= 1e-6 * np.max(np.abs(refp))
        v = rng.normal(size=4)
        eps = 1e-5
        hv_fd = (grad_J0(theta + eps * v, ds, model) - grad_J0(theta - eps * v, ds, model)) / (2 * eps)
        hv = hvp_J0(theta, v, ds, model)
        assert np.max(np.abs(hv - hv_fd)) <= 1e-5 * np.max(np.abs(hv_fd))


def test_hvp_identity_design_and_zero(rng):
    ds = identity_design([1.0, -1.0])
    for _ in range(5):
        v = rng.normal(size=2)
        np.testing.assert_allclose(hvp_J0(rng.normal(size=2), v, ds), v, rtol=1e-15)
    np.testing.assert_array_equal(hvp_J0(np.ones(2), np.zeros(2), ds), 0.0)


@settings(max_examples=40, deadline=None)
@given(u=arrays(np.float64, 3, elements=st.floats(-10, 10)),
       v=arrays(np.float64, 3, elements=st.floats(-10, 10)))
def test_hvp_is_symmetric(u, v):
    ds = Dataset(np.array([[1.0, 2.0, 0.5], [0.3, -1.0, 2.0], [1.5, 0.0, -0.7]]),
                 np.array([1.0, 0.0, -1.0]))
    lhs = np.dot(hvp_J0(np.zeros(3), u, ds), v)
    rhs = np.dot(hvp_J0(np.zeros(3), v, ds), u)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


@settings(max_examples=40, deadline=None)
@given(theta=arrays(np.float64, 2, elements=st.floats(-100, 100)))
def test_loss_nonnegative(theta):
    ds = Dataset(np.array([[1.0, 2.0], [3.0, -1.0]]), np.array([0.5, 2.0]))
    assert loss_J0(theta, ds) >= 0.0


def test_phi_is_validation_loss(rng):
    ds = random_dataset(rng, 6, 2)
    theta = rng.normal(size=2)
    assert phi(theta, ds) == loss_J0(theta, ds)
    np.testing.assert_array_equal(grad_phi(theta, ds), grad_J0(theta, ds))
    ident = Dataset(np.eye(2), np.array([1.0, -1.0]))
    assert phi(np.zeros(2), ident) == 0.5


def test_dimension_mismatch_raises(rng):
    ds = random_dataset(rng)
    with pytest.raises(DimensionError):
        loss_J0(np.zeros(2), ds)
    with pytest.raises(DimensionError):
        grad_J0(np.zeros(4), ds)


# ---------------------------------------------------------------- problem

def test_orthonormal_design_gram_is_identity():
    for p in (1, 2, 3, 4, 8):
        D = orthonormal_design(p)
        np.testing.assert_allclose(D.T @ D / p, np.eye(p), atol=1e-15)


def test_reference_problem_flow_gradient():
    prob = reference_problem(p=4)
    theta = np.array([0.5, 0.0, -2.0, 1.0])
    np.testing.assert_allclose(prob.flow_gradient(theta), theta - [1, -1, 1, -1], atol=1e-15)
    np.testing.assert_allclose(prob.train_hessian, np.eye(4), atol=1e-15)


def test_problem_validation():
    prob = reference_problem()
    for bad in ({"alpha": 0.0}, {"beta": -1.0}, {"gamma1": 1.0}, {"gamma2": -0.1},
                {"u_max": -1.0}, {"theta0": np.zeros(3)}):
        with pytest.raises(ValueError):
            prob.replace(**bad)
    with pytest.raises(ValueError):
        prob.replace(partition=ControlPartition((0,), (0,)))
    with pytest.raises(ValueError):
        prob.replace(partition=ControlPartition((0,), (2,)))


def test_default_partition_and_grid():
    prob = reference_problem(p=5)
    assert prob.partition.leader_idx == (0, 1, 2)
    assert prob.partition.follower_idx == (3, 4)
    assert prob.grid == TimeGrid(1.0, 50)
    assert prob.grid.nodes[-1] == 1.0
