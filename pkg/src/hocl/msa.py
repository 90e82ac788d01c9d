"""Successive approximation with augmented-Hamiltonian control updates.

Both agents replace the gradient step by the exact pointwise minimizer of
their augmented Hamiltonian over the control box. With the penalties taken
at the nominal trajectories the augmentation is ``gamma/2 |u - u_bar|^2``,
so the minimizers have closed forms:

    follower: clip((gamma2 u_bar - p2) / (beta + gamma2))
    leader:   clip(u_bar - p1 / gamma1)          (gamma1 > 0)
              -u_max sign(p1)                    (gamma1 = 0, sign(0) = 0)
"""

from __future__ import annotations

import numpy as np

from .baseline import (PhaseTimer, SolveReport, SolverOptions, cost_J2,
                       finish_report, make_record, sweep)
from .dynamics import AdjointTrajectory, ControlTrajectory
from .grid import FOLLOWER, LEADER
from .problem import ProblemSpec


def _check_gamma(gamma: float):
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")


def argmin_augH_follower(p2_t, u2_bar_t, prob: ProblemSpec, mask=None) -> np.ndarray:
    """Box minimizer of ``<u, p2> + beta/2 |u|^2 + gamma2/2 |u - u_bar|^2``.

    Works on a single node or on a stack of nodes (last axis = coordinates).
    """
    _check_gamma(prob.gamma2)
    mask = prob.mask(FOLLOWER) if mask is None else mask
    g2 = prob.gamma2
    u = (g2 * np.asarray(u2_bar_t, dtype=float) - np.asarray(p2_t, dtype=float)) / (prob.beta + g2)
    return np.clip(u, -prob.u_max, prob.u_max) * mask + 0.0


def argmin_augH_leader(p1_t, u1_bar_t, prob: ProblemSpec, mask=None) -> np.ndarray:
    """Box minimizer of ``<u, p1> + gamma1/2 |u - u_bar|^2``."""
    _check_gamma(prob.gamma1)
    mask = prob.mask(LEADER) if mask is None else mask
    p1_t = np.asarray(p1_t, dtype=float)
    if prob.gamma1 == 0.0:
        # linear in u: bang-bang, ties go to 0
        u = -prob.u_max * np.sign(p1_t)
    else:
        u = np.clip(np.asarray(u1_bar_t, dtype=float) - p1_t / prob.gamma1,
                    -prob.u_max, prob.u_max)
    return u * mask + 0.0


def follower_update(u2: ControlTrajectory, p2: AdjointTrajectory,
                    prob: ProblemSpec) -> ControlTrajectory:
    return u2.with_values(argmin_augH_follower(p2.interval_values, u2.values, prob, u2.mask))


def leader_update(u1: ControlTrajectory, p1: AdjointTrajectory,
                  prob: ProblemSpec) -> ControlTrajectory:
    return u1.with_values(argmin_augH_leader(p1.interval_values, u1.values, prob, u1.mask))


def run_algorithm_1(prob: ProblemSpec, opts: SolverOptions | None = None,
                    u1_init: ControlTrajectory | None = None,
                    u2_init: ControlTrajectory | None = None) -> SolveReport:
    """Alternate one follower and one leader augmented-Hamiltonian update.

    At ``u = u_bar`` the proximal term has zero gradient, so the augmented
    extremum residual used for termination equals the plain one.
    """
    opts = opts or SolverOptions()
    u1 = u1_init or ControlTrajectory.zeros(prob, LEADER)
    u2 = u2_init or ControlTrajectory.zeros(prob, FOLLOWER)
    timer = PhaseTimer()
    history = []
    follower_J2 = []
    converged = False

    for n in range(1, opts.max_outer + 1):
        with timer.phase("follower"):
            fs = sweep(FOLLOWER, u1, u2, prob, opts)
            before = cost_J2(fs.theta, u2, prob)
            u2_new = follower_update(u2, fs.adjoint, prob)
        with timer.phase("leader"):
            ls = sweep(LEADER, u1, u2_new, prob, opts)
            follower_J2.append((before, cost_J2(ls.theta, u2_new, prob)))
            history.append(make_record(n, ls.theta, u2_new, ls.residual, fs.residual,
                                       prob, timer))
            stationary = fs.residual <= prob.eps_tol and ls.residual <= prob.eps_tol
            u2 = u2_new
            if stationary:
                converged = True
                break
            u1 = leader_update(u1, ls.adjoint, prob)

    return finish_report("msa", converged, u1, u2, history, prob, opts, timer,
                         {"follower_J2_updates": follower_J2})
