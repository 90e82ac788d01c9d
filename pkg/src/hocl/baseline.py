"""Nested successive-approximation solver with gradient-step control updates.

Each outer iteration first lets the follower respond to the current leader
control (a few forward/backward sweeps with a projected gradient step on
``dH2/du2``), then performs one leader sweep and a projected gradient step
on ``dH1/du1``. The loop stops when both projected extremum residuals are
below ``eps_tol``.
"""

from __future__ import annotations

import time
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from .dynamics import (AdjointTrajectory, ControlTrajectory, StateTrajectory,
                       extremum_residual, hamiltonian_control_gradient,
                       integrate_adjoint, integrate_forward, stage_quadrature)
from .grid import FOLLOWER, LEADER
from .problem import ProblemSpec

SCHEMA_VERSION = 1


@dataclass
class SolverOptions:
    inner_iters: int = 20
    max_outer: int = 500
    # gradient-step sizes for the baseline; None -> gamma2/gamma1 of the problem
    follower_step: float | None = None
    leader_step: float | None = None
    # -1 descends the Hamiltonian; +1 reproduces the "u + gamma dH/du" update
    sign: int = -1
    literal_terminal: bool = False
    # time-parallel solver
    n_coarse: int | None = None
    sub_iters: int = 50
    sub_tol: float = 1e-10
    sub_step: float | None = None
    penalty: float = 1.0
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.sign not in (-1, 1):
            raise ValueError("sign must be -1 (descent) or +1 (ascent)")
        if self.inner_iters < 1 or self.max_outer < 1 or self.sub_iters < 0:
            raise ValueError("iteration budgets must be positive")
        if self.workers < 1:
            raise ValueError("worker count must be at least 1")


@dataclass
class IterationRecord:
    iteration: int
    leader_residual: float
    follower_residual: float
    J1: float
    J2: float
    phi_gap: float
    wall_s: float


@dataclass
class SolveReport:
    algorithm: str
    converged: bool
    theta_final: np.ndarray
    J1: float
    J2: float
    phi: float
    phi_gap: float
    outer_iters: int
    residual_history: list[IterationRecord]
    u1: np.ndarray
    u2: np.ndarray
    wall_time_s: float = 0.0
    per_phase_time_s: dict[str, float] = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    options: dict = field(default_factory=dict)

    TIMING_KEYS = ("wall_time_s", "per_phase_time_s")

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "algorithm": self.algorithm,
            "converged": self.converged,
            "theta_final": [float(v) for v in self.theta_final],
            "J1": self.J1,
            "J2": self.J2,
            "phi": self.phi,
            "phi_gap": self.phi_gap,
            "outer_iters": self.outer_iters,
            "residual_history": [
                {k: v for k, v in asdict(r).items() if timing or k != "wall_s"}
                for r in self.residual_history],
            "u1": self.u1.tolist(),
            "u2": self.u2.tolist(),
            "diagnostics": self.diagnostics,
            "options": self.options,
        }
        if timing:
            out["wall_time_s"] = self.wall_time_s
            out["per_phase_time_s"] = dict(self.per_phase_time_s)
        return out


class PhaseTimer:
    def __init__(self):
        self.start = time.perf_counter()
        self.phases: dict[str, float] = defaultdict(float)

    @contextmanager
    def phase(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.phases[name] += time.perf_counter() - t0

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


# --------------------------------------------------------------------------
# cost functionals

def _running_integral(theta: StateTrajectory) -> float:
    """``int |theta|^2 / 2 dt``: RK4-stage rule for integrated trajectories,
    trapezoid for hand-built ones."""
    h = theta.grid.delta
    if theta.stages is not None:
        return float(stage_quadrature(theta.stages, h))
    sq = 0.5 * np.sum(theta.values ** 2, axis=1)
    return float(h * (np.sum(sq) - 0.5 * (sq[0] + sq[-1])))


def cost_J1(theta: StateTrajectory) -> float:
    return _running_integral(theta)


def cost_J2(theta: StateTrajectory, u2: ControlTrajectory, prob: ProblemSpec) -> float:
    # controls are piecewise constant, so their integral is exact
    ctrl = 0.5 * prob.beta * theta.grid.delta * float(np.sum(u2.values ** 2))
    return prob.alpha * _running_integral(theta) + ctrl


def leader_objective(theta: StateTrajectory, prob: ProblemSpec) -> float:
    """``J1 + Phi(theta(T))``: the functional whose gradient the leader costate gives."""
    return cost_J1(theta) + prob.phi(theta.final)


# --------------------------------------------------------------------------
# control corrections

def _step(u: ControlTrajectory, g: np.ndarray, step: float, sign: int,
          u_max: float) -> ControlTrajectory:
    new = np.clip(u.values + sign * step * g, -u_max, u_max) * u.mask
    return u.with_values(new + 0.0)


def follower_gradient_step(u2: ControlTrajectory, p2: AdjointTrajectory,
                           gamma2_step: float, prob: ProblemSpec,
                           sign: int = -1) -> ControlTrajectory:
    """``u2 <- clip(u2 - gamma (p2 + beta u2))`` on the follower's coordinates."""
    if not 0.0 < gamma2_step <= 1.0:
        raise ValueError(f"follower step must lie in (0, 1], got {gamma2_step}")
    g = hamiltonian_control_gradient(FOLLOWER, p2, u2, prob)
    return _step(u2, g, gamma2_step, sign, prob.u_max)


def leader_gradient_step(u1: ControlTrajectory, p1: AdjointTrajectory,
                         gamma1_step: float, prob: ProblemSpec,
                         sign: int = -1) -> ControlTrajectory:
    """``u1 <- clip(u1 - gamma p1)`` on the leader's coordinates."""
    if not 0.0 < gamma1_step <= 1.0:
        raise ValueError(f"leader step must lie in (0, 1], got {gamma1_step}")
    g = hamiltonian_control_gradient(LEADER, p1, u1, prob)
    return _step(u1, g, gamma1_step, sign, prob.u_max)


def safe_follower_step(prob: ProblemSpec) -> float:
    """A step for which every follower gradient step decreases J2.

    The L2 gradient ``p2 + beta u2`` is Lipschitz with constant at most
    ``beta + alpha T^2`` whenever ``hess J0`` is positive semidefinite (the
    control-to-state map has norm at most ``T/sqrt(2)``), so ``1/L`` is a
    descent step.
    """
    return min(1.0, 1.0 / (prob.beta + prob.alpha * prob.T ** 2))


def _resolve_step(value, gamma, label):
    step = value if value is not None else (gamma if gamma > 0 else 0.5)
    if not 0.0 < step <= 1.0:
        raise ValueError(f"{label} step must lie in (0, 1], got {step}")
    return step


# --------------------------------------------------------------------------
# shared solver plumbing

@dataclass
class SweepState:
    theta: StateTrajectory
    adjoint: AdjointTrajectory
    residual: float


def sweep(agent: str, u1: ControlTrajectory, u2: ControlTrajectory,
          prob: ProblemSpec, opts: SolverOptions) -> SweepState:
    grid = u1.grid
    theta = integrate_forward(prob.theta0, u1, u2, grid, prob)
    adj = integrate_adjoint(agent, theta, grid, prob, opts.literal_terminal)
    return SweepState(theta, adj, extremum_residual(agent, adj, u1, u2, prob))


def make_record(n: int, theta: StateTrajectory, u2: ControlTrajectory,
                res1: float, res2: float, prob: ProblemSpec,
                timer: PhaseTimer) -> IterationRecord:
    return IterationRecord(
        iteration=n, leader_residual=res1, follower_residual=res2,
        J1=cost_J1(theta), J2=cost_J2(theta, u2, prob),
        phi_gap=prob.phi(theta.final) - prob.z_target, wall_s=timer.elapsed())


def finish_report(algorithm: str, converged: bool, u1: ControlTrajectory,
                  u2: ControlTrajectory, history: list[IterationRecord],
                  prob: ProblemSpec, opts: SolverOptions, timer: PhaseTimer,
                  diagnostics: dict | None = None) -> SolveReport:
    theta = integrate_forward(prob.theta0, u1, u2, u1.grid, prob)
    phi_T = prob.phi(theta.final)
    return SolveReport(
        algorithm=algorithm, converged=converged,
        theta_final=np.array(theta.final),
        J1=cost_J1(theta), J2=cost_J2(theta, u2, prob),
        phi=phi_T, phi_gap=phi_T - prob.z_target,
        outer_iters=len(history), residual_history=history,
        u1=np.array(u1.values), u2=np.array(u2.values),
        wall_time_s=timer.elapsed(), per_phase_time_s=dict(timer.phases),
        diagnostics=diagnostics or {},
        options={k: v for k, v in asdict(opts).items() if k != "workers"},
    )


# --------------------------------------------------------------------------

def run_algorithm_O(prob: ProblemSpec, opts: SolverOptions | None = None,
                    u1_init: ControlTrajectory | None = None,
                    u2_init: ControlTrajectory | None = None) -> SolveReport:
    opts = opts or SolverOptions()
    step2 = _resolve_step(opts.follower_step, prob.gamma2, "follower")
    step1 = _resolve_step(opts.leader_step, prob.gamma1, "leader")
    u1 = u1_init or ControlTrajectory.zeros(prob, LEADER)
    u2 = u2_init or ControlTrajectory.zeros(prob, FOLLOWER)
    timer = PhaseTimer()
    history: list[IterationRecord] = []
    follower_sweeps: list[list[float]] = []
    inner_tol = prob.eps_tol / 10
    converged = False

    for n in range(1, opts.max_outer + 1):
        # follower response to the current leader control
        with timer.phase("follower"):
            costs = []
            for j in range(opts.inner_iters + 1):
                fs = sweep(FOLLOWER, u1, u2, prob, opts)
                costs.append(cost_J2(fs.theta, u2, prob))
                if fs.residual <= inner_tol or j == opts.inner_iters:
                    break
                u2 = follower_gradient_step(u2, fs.adjoint, step2, prob, opts.sign)
            follower_sweeps.append(costs)
        with timer.phase("leader"):
            ls = sweep(LEADER, u1, u2, prob, opts)
            history.append(make_record(n, ls.theta, u2, ls.residual, fs.residual,
                                       prob, timer))
            if ls.residual <= prob.eps_tol and fs.residual <= prob.eps_tol:
                converged = True
                break
            u1 = leader_gradient_step(u1, ls.adjoint, step1, prob, opts.sign)

    return finish_report("baseline", converged, u1, u2, history, prob, opts, timer,
                         {"follower_J2_sweeps": follower_sweeps})
