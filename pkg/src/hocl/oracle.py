"""Adjoint-free reference machinery: finite differences, closed forms and a
brute-force direct-transcription solver for small instances."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .dynamics import ControlTrajectory, TimeGrid, projected_residual, rk4_path, stage_quadrature
from .grid import FOLLOWER, LEADER, check_agent
from .problem import ProblemSpec

ORACLE_MAX_P = 4
ORACLE_MAX_N = 50


def fd_gradient(cost: Callable[[ControlTrajectory], float], u: ControlTrajectory,
                eps: float = 1e-5) -> np.ndarray:
    """Central differences of ``cost`` w.r.t. every owned control value."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    grad = np.zeros_like(u.values)
    base = np.array(u.values)
    for k in range(base.shape[0]):
        for j in np.flatnonzero(u.mask):
            v = base.copy()
            v[k, j] += eps
            up = cost(u.with_values(v))
            v[k, j] -= 2 * eps
            down = cost(u.with_values(v))
            grad[k, j] = (up - down) / (2 * eps)
    return grad


def analytic_quadratic_state(theta0, theta_star, t):
    """Uncontrolled flow for ``grad J0 = theta - theta_star``."""
    theta0 = np.asarray(theta0, dtype=float)
    theta_star = np.asarray(theta_star, dtype=float)
    t = np.asarray(t, dtype=float)
    decay = np.exp(-t)[..., None] if t.ndim else np.exp(-t)
    return theta_star + decay * (theta0 - theta_star)


class DiscretizedCost:
    """Fully discretized cost of one agent as a function of its control values.

    The other agent's control is frozen. Evaluates batches of candidate
    controls with one vectorized forward integration, so a central-difference
    gradient costs a single sweep.
    """

    def __init__(self, agent: str, prob: ProblemSpec, grid: TimeGrid,
                 frozen_other: ControlTrajectory, terminal=None):
        self.agent = check_agent(agent)
        self.prob = prob
        self.grid = grid
        self.mask = prob.mask(agent)
        self.other = np.asarray(frozen_other.values)
        self.idx = np.flatnonzero(self.mask)
        # optional extra penalty (weight/2)|theta(T) - target|^2
        self.terminal = terminal

    def full(self, x: np.ndarray) -> np.ndarray:
        """Decision vectors ``(..., N * n_owned)`` to control arrays ``(..., N, p)``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (self.grid.N, self.prob.p))
        out[..., self.idx] = x.reshape(x.shape[:-1] + (self.grid.N, self.idx.size))
        return out

    def pack(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u)[:, self.idx].reshape(-1)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        prob, h = self.prob, self.grid.delta
        u = self.full(x)                                   # (B, N, p) or (N, p)
        batched = u.ndim == 3
        if not batched:
            u = u[None]
        drive = np.moveaxis(u + self.other, 1, 0)          # (N, B, p)
        theta0 = np.broadcast_to(prob.theta0, (u.shape[0], prob.p))
        values, stages = rk4_path(theta0, drive, h, prob)
        quad = stage_quadrature(stages, h)                 # (B,)
        thT = values[-1]
        if self.agent == FOLLOWER:
            J = prob.alpha * quad + 0.5 * prob.beta * h * np.sum(u * u, axis=(1, 2))
        else:
            r = thT @ prob.model.design(prob.valid_set.features).T - prob.valid_set.labels
            J = quad + 0.5 * np.sum(r * r, axis=1) / prob.valid_set.m
        if self.terminal is not None:
            weight, target = self.terminal
            d = thT - np.asarray(target, dtype=float)
            J = J + 0.5 * weight * np.sum(d * d, axis=1)
        return J if batched else J[0]

    def fd_gradient(self, x: np.ndarray, eps: float) -> np.ndarray:
        n = x.size
        E = eps * np.eye(n)
        vals = self(np.concatenate([x + E, x - E]))
        return (vals[:n] - vals[n:]) / (2 * eps)


def direct_transcription_solve(agent: str, prob: ProblemSpec, grid: TimeGrid,
                               frozen_other_control: ControlTrajectory, *,
                               terminal=None, iters: int = 10_000, eps: float = 1e-5,
                               tol: float = 1e-9, return_info: bool = False):
    """Minimize the discretized cost over all owned control values at once.

    Projected gradient descent on central-difference gradients with a
    diminishing step ``eta_0 / (1 + k / iters)``; ``eta_0`` comes from a
    backtracking search at the start and is halved whenever a step fails to
    decrease the cost. Stops early once the L2 projected residual of the
    difference gradient drops below ``tol``. Returns the best iterate seen.
    """
    check_agent(agent)
    if prob.p > ORACLE_MAX_P or grid.N > ORACLE_MAX_N:
        raise ValueError(
            f"oracle scale: p={prob.p}, N={grid.N} exceeds p<={ORACLE_MAX_P}, N<={ORACLE_MAX_N}")
    f = DiscretizedCost(agent, prob, grid, frozen_other_control, terminal)
    info = {"iterations": 0}
    n = grid.N * f.idx.size
    x = np.zeros(n)
    lo, hi = -prob.u_max, prob.u_max
    fx = float(f(x))
    best_x, best_f = x, fx
    eta0 = 1.0 / grid.delta
    g = f.fd_gradient(x, eps)
    # initial backtracking
    while eta0 > 1e-12:
        trial = np.clip(x - eta0 * g, lo, hi)
        if f(trial) <= fx - 1e-4 * np.dot(g, x - trial):
            break
        eta0 *= 0.5
    for k in range(iters):
        info["iterations"] = k + 1
        eta = eta0 / (1.0 + k / iters)
        trial = np.clip(x - eta * g, lo, hi)
        ft = float(f(trial))
        if ft > fx:
            eta0 *= 0.5
            continue
        x, fx = trial, ft
        if fx < best_f:
            best_x, best_f = x, fx
        g = f.fd_gradient(x, eps)
        r = x - np.clip(x - g / grid.delta, lo, hi)
        if np.sqrt(grid.delta * np.dot(r, r)) <= tol:
            break
    u = ControlTrajectory(grid, agent, f.full(best_x), f.mask)
    if not return_info:
        return u
    g = f.fd_gradient(best_x, eps) / grid.delta
    r = projected_residual(best_x, g, prob.u_max)
    info.update(cost=best_f, residual=float(np.sqrt(grid.delta * np.dot(r, r))))
    return u, info
