"""Trajectories, RK4 forward/backward sweeps and the agents' Hamiltonians.

The controlled gradient flow is

    dtheta/dt = -grad J0(theta; Z1) + u1(t) + u2(t),   theta(0) = theta0,

with both controls piecewise constant on the grid intervals. It is advanced
with classical RK4. The running costs are integrated at the same RK4 stages
(i.e. as an extra state of the same scheme), and the costate is the exact
reverse-mode derivative of that discrete scheme. This keeps three things
consistent at once:

* ``values[k]`` of an :class:`AdjointTrajectory` approximates the continuous
  costate ``p(t_k)`` of ``dp/dt = hess J0 p - w theta`` to fourth order,
  with the terminal value imposed exactly;
* ``interval_values[k]`` is the costate seen by the control on interval
  ``k``, so the derivative of the discretized cost with respect to ``u_k`` is
  exactly ``delta * (interval_values[k] + beta * u_k)`` (follower) or
  ``delta * interval_values[k]`` (leader);
* the Hamiltonian-based updates and the finite-difference oracle optimize
  the same discrete objective.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import FOLLOWER, LEADER, ControlPartition, TimeGrid, check_agent
from .problem import DimensionError, ProblemSpec

__all__ = [
    "TimeGrid", "ControlPartition", "ControlTrajectory", "StateTrajectory",
    "AdjointTrajectory", "BlowUpError", "integrate_forward", "integrate_adjoint",
    "control_gradient", "hamiltonian", "augmented_hamiltonian",
    "extremum_residual", "projected_residual", "write_trajectory_csv",
]

RK4_WEIGHTS = (1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0)


class BlowUpError(FloatingPointError):
    """A trajectory became non-finite."""

    def __init__(self, node: int, what: str = "state"):
        super().__init__(f"blow-up: non-finite {what} at node {node}")
        self.node = node


# --------------------------------------------------------------------------
# containers

def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Piecewise-constant control: ``values[k]`` acts on ``[t_k, t_{k+1})``."""

    grid: TimeGrid
    agent: str
    values: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        check_agent(self.agent)
        vals = _frozen(self.values)
        mask = np.array(self.mask, dtype=bool)
        if vals.ndim != 2 or vals.shape[0] != self.grid.N or vals.shape[1] != mask.size:
            raise DimensionError(
                f"control values must have shape ({self.grid.N}, {mask.size}), got {vals.shape}")
        if np.any(vals[:, ~mask] != 0.0):
            raise ValueError(f"{self.agent} control is nonzero outside its coordinates")
        mask.setflags(write=False)
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "mask", mask)

    @classmethod
    def zeros(cls, prob: ProblemSpec, agent: str, grid: TimeGrid | None = None):
        grid = prob.grid if grid is None else grid
        return cls(grid, agent, np.zeros((grid.N, prob.p)), prob.mask(agent))

    @classmethod
    def from_values(cls, prob: ProblemSpec, agent: str, values,
                    grid: TimeGrid | None = None, clip: bool = True):
        """Mask ``values`` to the agent's coordinates (and clip to the box)."""
        grid = prob.grid if grid is None else grid
        mask = prob.mask(agent)
        vals = np.broadcast_to(np.asarray(values, dtype=float), (grid.N, prob.p)) * mask
        if clip:
            vals = np.clip(vals, -prob.u_max, prob.u_max)
        return cls(grid, agent, vals + 0.0, mask)

    def with_values(self, values) -> "ControlTrajectory":
        return ControlTrajectory(self.grid, self.agent, values, self.mask)

    def in_box(self, u_max: float) -> bool:
        return bool(np.all(np.abs(self.values) <= u_max))

    def __eq__(self, other):
        if not isinstance(other, ControlTrajectory):
            return NotImplemented
        return (self.grid == other.grid and self.agent == other.agent
                and np.array_equal(self.values, other.values)
                and np.array_equal(self.mask, other.mask))

    __hash__ = None


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    """Parameter values at the ``N + 1`` nodes.

    ``stages`` holds the four RK4 stage states of every interval when the
    trajectory came out of :func:`integrate_forward`; costs and the adjoint
    sweep use them. Hand-built trajectories may omit them, in which case the
    stages are interpolated linearly between nodes.
    """

    grid: TimeGrid
    values: np.ndarray
    stages: np.ndarray | None = None

    def __post_init__(self):
        vals = _frozen(self.values)
        if vals.ndim != 2 or vals.shape[0] != self.grid.N + 1:
            raise DimensionError(f"state values must have {self.grid.N + 1} rows")
        object.__setattr__(self, "values", vals)
        if self.stages is not None:
            st = _frozen(self.stages)
            if st.shape != (self.grid.N, 4, vals.shape[1]):
                raise DimensionError("stage array has the wrong shape")
            object.__setattr__(self, "stages", st)

    @property
    def final(self) -> np.ndarray:
        return self.values[-1]

    def stage_states(self) -> np.ndarray:
        if self.stages is not None:
            return self.stages
        a, b = self.values[:-1], self.values[1:]
        mid = 0.5 * (a + b)
        return np.stack([a, mid, mid, b], axis=1)


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    """Costate at the nodes plus the per-interval costate seen by the controls."""

    grid: TimeGrid
    agent: str
    values: np.ndarray
    interval_values: np.ndarray

    def __post_init__(self):
        check_agent(self.agent)
        vals = _frozen(self.values)
        ivals = _frozen(self.interval_values)
        if vals.shape[0] != self.grid.N + 1 or ivals.shape != (self.grid.N, vals.shape[1]):
            raise DimensionError("adjoint arrays do not match the grid")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "interval_values", ivals)

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


# --------------------------------------------------------------------------
# RK4 kernels (shared with the oracle and the subinterval solvers)

def rk4_propagators(H: np.ndarray, h: float):
    """Matrices of one RK4 step of ``dtheta/dt = a - theta @ H``.

    Every stage is affine in the step's starting point and in the constant
    ``a``: ``s_i = theta @ X[i] + a @ Y[i]``, and the step itself is
    ``theta' = theta @ M + a @ Q``. All of them are polynomials in the
    symmetric ``H``, hence symmetric.
    """
    p = H.shape[0]
    I = np.eye(p)
    X = [I, None, None, None]
    Y = [np.zeros((p, p)), None, None, None]
    Fx = [-H, None, None, None]
    Fa = [I, None, None, None]
    for i, c in ((1, 0.5 * h), (2, 0.5 * h), (3, h)):
        X[i] = I + c * Fx[i - 1]
        Y[i] = c * Fa[i - 1]
        Fx[i] = -X[i] @ H
        Fa[i] = I - Y[i] @ H
    w = np.asarray(RK4_WEIGHTS) * h
    M = I + sum(w[i] * Fx[i] for i in range(4))
    Q = sum(w[i] * Fa[i] for i in range(4))
    return np.stack(X), np.stack(Y), M, Q


def rk4_path(theta0, drive, h: float, prob: ProblemSpec):
    """Advance the flow over ``len(drive)`` steps of size ``h``.

    ``drive[k]`` is the total control ``u1 + u2`` on step ``k``. Leading batch
    dimensions are allowed: ``theta0`` of shape ``(..., p)`` with ``drive`` of
    shape ``(n, ..., p)``. Returns ``(values, stages)`` with shapes
    ``(n + 1, ..., p)`` and ``(n, 4, ..., p)``.
    """
    drive = np.asarray(drive, dtype=float)
    th = np.array(theta0, dtype=float)
    n = drive.shape[0]
    H, b = prob.flow_affine
    X, Y, M, Q = rk4_propagators(H, h)
    a = drive + b
    forcing = a @ Q
    values = np.empty((n + 1,) + th.shape)
    values[0] = th
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            th = th @ M + forcing[k]
            values[k + 1] = th
    finite = np.isfinite(values).reshape(n + 1, -1).all(axis=1)
    if not finite.all():
        raise BlowUpError(int(np.argmin(finite)))
    start = values[:-1]
    stages = np.stack([start @ X[i] + a @ Y[i] for i in range(4)], axis=1)
    return values, stages


def stage_quadrature(stages: np.ndarray, h: float) -> np.ndarray:
    """``sum_k h sum_i b_i |s_{k,i}|^2 / 2`` over leading axis and stage axis."""
    sq = 0.5 * np.sum(stages * stages, axis=-1)
    b = np.asarray(RK4_WEIGHTS).reshape((1, 4) + (1,) * (sq.ndim - 2))
    return h * np.sum(b * sq, axis=(0, 1))


def rk4_adjoint(stages: np.ndarray, h: float, run_weight: float,
                lam_T: np.ndarray, prob: ProblemSpec):
    """Reverse sweep of :func:`rk4_path` for the cost
    ``run_weight * sum_k h sum_i b_i |s_{k,i}|^2/2 + G(theta_n)``
    given ``lam_T = grad G(theta_n)``.

    Returns ``(lam, pbar)``: ``lam[k] = dJ/dtheta_k`` and
    ``h * pbar[k] = dJ/d(drive_k)``.
    """
    n = stages.shape[0]
    p = stages.shape[-1]
    X, Y, M, Q = rk4_propagators(prob.flow_affine[0], h)
    wb = (h * run_weight) * np.asarray(RK4_WEIGHTS)
    # running-cost sensitivities of each interval w.r.t. its start and drive
    src_x = sum(wb[i] * (stages[:, i] @ X[i]) for i in range(4))
    src_a = sum(wb[i] * (stages[:, i] @ Y[i]) for i in range(1, 4))
    lam = np.empty((n + 1, p))
    lam[n] = lam_T
    L = np.asarray(lam_T, dtype=float)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n - 1, -1, -1):
            L = L @ M + src_x[k]
            lam[k] = L
    finite = np.isfinite(lam).all(axis=1)
    if not finite.all():
        raise BlowUpError(int(n - np.argmin(finite[::-1])), "costate")
    pbar = (lam[1:] @ Q + src_a) / h
    return lam, pbar


# --------------------------------------------------------------------------
# sweeps

def integrate_forward(theta0, u1: ControlTrajectory, u2: ControlTrajectory,
                      grid: TimeGrid, prob: ProblemSpec) -> StateTrajectory:
    """RK4 on the controlled flow with the two controls summed per interval."""
    if u1.grid != grid or u2.grid != grid:
        raise DimensionError("controls live on a different grid")
    if u1.agent != LEADER or u2.agent != FOLLOWER:
        raise ValueError("expected (leader, follower) controls")
    theta0 = np.asarray(theta0, dtype=float)
    if theta0.shape != (prob.p,):
        raise DimensionError(f"theta0 must have length {prob.p}")
    values, stages = rk4_path(theta0, u1.values + u2.values, grid.delta, prob)
    return StateTrajectory(grid, values, stages)


def running_weight(agent: str, prob: ProblemSpec) -> float:
    return prob.alpha if check_agent(agent) == FOLLOWER else 1.0


def leader_terminal(theta_T, prob: ProblemSpec, literal: bool = False) -> np.ndarray:
    """Terminal costate of the leader.

    By default ``+grad Phi``, which makes the costate the sensitivity of
    ``J1 + Phi(theta(T))``. ``literal=True`` gives ``-grad Phi`` instead.
    """
    g = prob.grad_phi(theta_T)
    return -g if literal else g


def integrate_adjoint(agent: str, theta: StateTrajectory, grid: TimeGrid,
                      prob: ProblemSpec, literal_terminal: bool = False) -> AdjointTrajectory:
    """Backward sweep for either agent.

    follower: ``dp/dt = hess J0 p - alpha theta``, ``p(T) = 0``
    leader:   ``dp/dt = hess J0 p - theta``,       ``p(T) = grad Phi(theta(T))``
    """
    check_agent(agent)
    if theta.grid != grid:
        raise DimensionError("state trajectory lives on a different grid")
    if agent == FOLLOWER:
        lam_T = np.zeros(prob.p)
    else:
        lam_T = leader_terminal(theta.final, prob, literal_terminal)
    lam, pbar = rk4_adjoint(theta.stage_states(), grid.delta,
                            running_weight(agent, prob), lam_T, prob)
    lam[-1] = lam_T
    return AdjointTrajectory(grid, agent, lam, pbar)


def control_gradient(agent: str, p_traj: AdjointTrajectory, u: ControlTrajectory,
                     prob: ProblemSpec) -> np.ndarray:
    """Derivative of the discretized cost w.r.t. the agent's control values.

    Follower: ``delta (pbar_k + beta u_k)`` on its coordinates;
    leader:   ``delta pbar_k``.
    """
    return p_traj.grid.delta * hamiltonian_control_gradient(agent, p_traj, u, prob)


def hamiltonian_control_gradient(agent: str, p_traj: AdjointTrajectory,
                                 u: ControlTrajectory, prob: ProblemSpec) -> np.ndarray:
    """``dH/du`` on every interval, masked to the agent's coordinates."""
    g = p_traj.interval_values.copy()
    if check_agent(agent) == FOLLOWER:
        g = g + prob.beta * u.values
    return g * u.mask


# --------------------------------------------------------------------------
# Hamiltonians

def _pointwise(prob: ProblemSpec, *vecs):
    out = []
    for v in vecs:
        v = np.asarray(v, dtype=float)
        if v.shape[-1] != prob.p:
            raise DimensionError(f"expected {prob.p}-vectors, got shape {v.shape}")
        out.append(v)
    return out


def hamiltonian(agent: str, theta_t, p_t, u1_t, u2_t, prob: ProblemSpec) -> float:
    """Pointwise Hamiltonian.

    follower: ``<f, p> + alpha/2 |theta|^2 + beta/2 |u2|^2``
    leader:   ``<f, p> + 1/2 |theta|^2``
    with ``f = -grad J0(theta) + u1 + u2``.
    """
    theta_t, p_t, u1_t, u2_t = _pointwise(prob, theta_t, p_t, u1_t, u2_t)
    f = -prob.flow_gradient(theta_t) + u1_t + u2_t
    H = float(np.dot(f, p_t))
    if check_agent(agent) == FOLLOWER:
        return H + 0.5 * prob.alpha * float(np.dot(theta_t, theta_t)) \
            + 0.5 * prob.beta * float(np.dot(u2_t, u2_t))
    return H + 0.5 * float(np.dot(theta_t, theta_t))


def _dH_dp(theta_t, u_t, u_other_t, prob):
    return -prob.flow_gradient(theta_t) + u_t + u_other_t


def _dH_dtheta(agent, theta_t, p_t, prob):
    return -prob.flow_hvp(theta_t, p_t) + running_weight(agent, prob) * theta_t


def augmented_hamiltonian(agent: str, theta_t, p_t, u_bar_t, u_t, u_other_t,
                          gamma: float, prob: ProblemSpec) -> float:
    """Hamiltonian plus the two quadratic deviation penalties.

    Both penalty terms are evaluated at the same nominal ``(theta, p)``. The
    state-derivative term then cancels and the augmentation reduces to
    ``gamma/2 |u - u_bar|^2``; it is still computed from the derivatives
    rather than from that closed form.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    theta_t, p_t, u_bar_t, u_t, u_other_t = _pointwise(
        prob, theta_t, p_t, u_bar_t, u_t, u_other_t)
    if check_agent(agent) == FOLLOWER:
        H = hamiltonian(agent, theta_t, p_t, u_other_t, u_t, prob)
    else:
        H = hamiltonian(agent, theta_t, p_t, u_t, u_other_t, prob)
    if gamma == 0.0:
        return H
    dp = _dH_dp(theta_t, u_t, u_other_t, prob) - _dH_dp(theta_t, u_bar_t, u_other_t, prob)
    dth = _dH_dtheta(agent, theta_t, p_t, prob) - _dH_dtheta(agent, theta_t, p_t, prob)
    return H + 0.5 * gamma * float(np.dot(dp, dp)) + 0.5 * gamma * float(np.dot(dth, dth))


def projected_residual(u, g, u_max: float) -> np.ndarray:
    """``u - clip(u - g, -u_max, u_max)``: zero iff ``u`` is box-stationary."""
    u = np.asarray(u, dtype=float)
    return u - np.clip(u - np.asarray(g, dtype=float), -u_max, u_max)


def extremum_residual(agent: str, p_traj: AdjointTrajectory, u1: ControlTrajectory,
                      u2: ControlTrajectory, prob: ProblemSpec,
                      raw: bool = False) -> float:
    """Discrete L2 norm over ``[0, T]`` of the projected extremum residual.

    With ``raw=True`` the plain ``|dH/du|`` norm is returned instead.
    """
    if u1.grid != p_traj.grid or u2.grid != p_traj.grid:
        raise DimensionError("trajectories are on different grids")
    u = u2 if check_agent(agent) == FOLLOWER else u1
    g = hamiltonian_control_gradient(agent, p_traj, u, prob)
    r = g if raw else projected_residual(u.values, g, prob.u_max) * u.mask
    return float(np.sqrt(p_traj.grid.delta * np.sum(r * r)))


# --------------------------------------------------------------------------
# IO

def write_trajectory_csv(path, theta: StateTrajectory,
                         adjoint: AdjointTrajectory | None = None) -> None:
    """Columns ``t, theta_0..theta_{p-1}`` (and ``p_0..`` for a costate)."""
    p = theta.values.shape[1]
    header = ["t"] + [f"theta_{j}" for j in range(p)]
    if adjoint is not None:
        header += [f"p_{j}" for j in range(p)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(theta.grid.nodes):
            row = [repr(float(t))] + [repr(float(v)) for v in theta.values[k]]
            if adjoint is not None:
                row += [repr(float(v)) for v in adjoint.values[k]]
            w.writerow(row)
