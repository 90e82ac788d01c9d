"""Time-parallel nested solver built on intermediate states.

Each phase of an outer iteration does one full-horizon forward/backward
sweep, blends state and costate into an intermediate trajectory

    m(t_k) = ((T - t_k) / T) theta(t_k) + (t_k / T) p(t_k)

on a coarse grid, and then solves one small control problem per coarse
subinterval, all independent of each other:

    follower:  1/2 |m(t_{k+1}) - theta(t_{k+1})|^2
               + int (abar/2 |theta|^2 + bbar/2 |u2|^2) dt,
               abar = (delta/T) alpha, bbar = (delta/T) beta
    leader:    (delta / 2T) int |theta|^2 dt
               + (lam/2) |m(t_{k+1}) - theta(t_{k+1})|^2

Each subinterval starts from ``theta(t_k) = m(t_k)`` with the other agent's
control frozen at its value at ``t_k``. The segment controls are spliced
back together by subinterval index, so the result does not depend on the
worker count or on the order in which the subproblems finish.

The coarse grid is a sub-grid of the problem grid: ``N_c`` must divide
``N`` and every subinterval carries ``N / N_c`` fine steps.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .baseline import (PhaseTimer, SolveReport, SolverOptions, cost_J2,
                       finish_report, make_record, sweep)
from .dynamics import (AdjointTrajectory, ControlTrajectory, StateTrajectory,
                       integrate_forward, projected_residual, rk4_adjoint,
                       rk4_path, stage_quadrature)
from .grid import FOLLOWER, LEADER, TimeGrid, check_agent
from .problem import DimensionError, ProblemSpec

DEFAULT_FINE_STEPS = 16
WORKERS_ENV = "HOCL_WORKERS"


# --------------------------------------------------------------------------
# containers

@dataclass(frozen=True, eq=False)
class IntermediateTrajectory:
    """Blend of state and costate at the coarse nodes."""

    grid: TimeGrid
    agent: str
    values: np.ndarray

    def __post_init__(self):
        check_agent(self.agent)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] != self.grid.N + 1:
            raise DimensionError(f"intermediate values must have {self.grid.N + 1} rows")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_coarse(self) -> int:
        return self.grid.N


@dataclass(frozen=True, eq=False)
class Segment:
    """Control on one coarse subinterval and how well its subproblem was solved."""

    agent: str
    k: int
    t_start: float
    t_end: float
    values: np.ndarray          # (n_fine, p), masked and box-feasible
    subcost: float = float("nan")
    sub_iterations: int = 0
    residual: float = float("nan")
    # int |projected L2 gradient| dt over the subinterval
    grad_integral: float = float("nan")

    def __post_init__(self):
        check_agent(self.agent)
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 1:
            raise DimensionError("segment values must be (n_fine, p)")
        if self.t_end <= self.t_start:
            raise ValueError("segment must have positive length")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def n_fine(self) -> int:
        return self.values.shape[0]

    @property
    def h(self) -> float:
        return (self.t_end - self.t_start) / self.n_fine

    def __eq__(self, other):
        if not isinstance(other, Segment):
            return NotImplemented
        return (self.agent, self.k, self.t_start, self.t_end, self.sub_iterations) == \
            (other.agent, other.k, other.t_start, other.t_end, other.sub_iterations) \
            and np.array_equal(self.values, other.values) \
            and _same(self.subcost, other.subcost) and _same(self.residual, other.residual)

    __hash__ = None


def _same(a, b) -> bool:
    return a == b or (np.isnan(a) and np.isnan(b))


# --------------------------------------------------------------------------
# grids

def default_n_coarse(N: int, fine_steps: int = DEFAULT_FINE_STEPS) -> int:
    """Largest divisor of ``N`` leaving at least ``fine_steps`` steps per subinterval."""
    best = 1
    for d in range(1, N + 1):
        if N % d == 0 and N // d >= fine_steps:
            best = d
    return best


def coarse_grid(prob: ProblemSpec, n_coarse: int | None = None) -> TimeGrid:
    n_coarse = default_n_coarse(prob.N) if n_coarse is None else int(n_coarse)
    if n_coarse < 1 or prob.N % n_coarse:
        raise ValueError(f"n_coarse={n_coarse} must divide N={prob.N}")
    return TimeGrid(prob.T, n_coarse)


def _stride(fine: TimeGrid, coarse: TimeGrid) -> int:
    if fine.T != coarse.T or fine.N % coarse.N:
        raise DimensionError(f"{coarse} is not a sub-grid of {fine}")
    return fine.N // coarse.N


# --------------------------------------------------------------------------
# intermediate state

def intermediate_state(theta: StateTrajectory, p: AdjointTrajectory,
                       grid: TimeGrid | None = None) -> IntermediateTrajectory:
    """``m(t_k) = ((T - t_k)/T) theta(t_k) + (t_k/T) p(t_k)`` on the coarse nodes."""
    if theta.grid != p.grid:
        raise DimensionError("state and costate live on different grids")
    grid = theta.grid if grid is None else grid
    s = _stride(theta.grid, grid)
    th = theta.values[::s]
    lam = p.values[::s]
    t = grid.nodes[:, None]
    T = grid.T
    m = ((T - t) / T) * th + (t / T) * lam
    return IntermediateTrajectory(grid, p.agent, m)


# --------------------------------------------------------------------------
# subinterval problems

@dataclass(frozen=True)
class _SubWeights:
    """Weights of the three terms of a subinterval cost."""

    run: float        # weight of int |theta|^2 / 2
    ctrl: float       # weight of int |u|^2 / 2
    term: float       # weight of |m(t_{k+1}) - theta(t_{k+1})|^2 / 2


def subcost_weights(agent: str, delta_c: float, prob: ProblemSpec, penalty: float) -> _SubWeights:
    scale = delta_c / prob.T
    if check_agent(agent) == FOLLOWER:
        return _SubWeights(scale * prob.alpha, scale * prob.beta, 1.0)
    return _SubWeights(scale, 0.0, penalty)


def _sub_forward(values, start, target, frozen, h, w: _SubWeights, prob):
    path, stages = rk4_path(start, values + frozen, h, prob)
    d = path[-1] - target
    J = (w.run * float(stage_quadrature(stages, h))
         + 0.5 * w.ctrl * h * float(np.sum(values * values))
         + 0.5 * w.term * float(np.dot(d, d)))
    return J, stages, d


def _sub_gradient(values, stages, d, h, w: _SubWeights, mask, prob):
    """L2 gradient of the subcost (derivative w.r.t. ``values[j]`` divided by ``h``)."""
    _, pbar = rk4_adjoint(stages, h, w.run, w.term * d, prob)
    return (pbar + w.ctrl * values) * mask


def _sub_cost(agent, k, seg: Segment, m: IntermediateTrajectory, frozen, prob,
              penalty=1.0) -> float:
    if not 0 <= k < m.n_coarse:
        raise IndexError(f"subinterval {k} outside 0..{m.n_coarse - 1}")
    w = subcost_weights(agent, m.grid.delta, prob, penalty)
    frozen = np.asarray(frozen, dtype=float)
    J, _, _ = _sub_forward(seg.values, m.values[k], m.values[k + 1], frozen,
                           m.grid.delta / seg.n_fine, w, prob)
    return J


def subcost_follower(k: int, u2_seg: Segment, m2: IntermediateTrajectory,
                     u1_frozen, prob: ProblemSpec) -> float:
    return _sub_cost(FOLLOWER, k, u2_seg, m2, u1_frozen, prob)


def subcost_leader(k: int, u1_seg: Segment, m1: IntermediateTrajectory,
                   u2_frozen, prob: ProblemSpec, penalty: float = 1.0) -> float:
    return _sub_cost(LEADER, k, u1_seg, m1, u2_frozen, prob, penalty)


def sub_step(agent: str, delta_c: float, prob: ProblemSpec, opts: SolverOptions) -> float:
    """Fixed projected-gradient step ``1 / (abar + bbar + terminal weight)``."""
    if opts.sub_step is not None:
        return opts.sub_step
    w = subcost_weights(agent, delta_c, prob, opts.penalty)
    return 1.0 / (w.run + w.ctrl + w.term)


def solve_subinterval(agent: str, k: int, m: IntermediateTrajectory, frozen_other_control,
                      prob: ProblemSpec, opts: SolverOptions,
                      warm_start=None, n_fine: int | None = None) -> Segment:
    """Projected gradient descent on one subinterval cost.

    Starts from ``warm_start`` (zeros if omitted) and stops after
    ``opts.sub_iters`` steps or once the L2 projected residual is at most
    ``opts.sub_tol``. Pure: depends only on its arguments.
    """
    check_agent(agent)
    if not 0 <= k < m.n_coarse:
        raise IndexError(f"subinterval {k} outside 0..{m.n_coarse - 1}")
    if warm_start is None:
        n_fine = n_fine or prob.N // m.n_coarse
        u = np.zeros((n_fine, prob.p))
    else:
        u = np.array(warm_start, dtype=float)
        n_fine = u.shape[0]
    mask = prob.mask(agent)
    u = np.clip(u, -prob.u_max, prob.u_max) * mask + 0.0
    delta_c = m.grid.delta
    h = delta_c / n_fine
    w = subcost_weights(agent, delta_c, prob, opts.penalty)
    step = sub_step(agent, delta_c, prob, opts)
    frozen = np.asarray(frozen_other_control, dtype=float)
    start, target = m.values[k], m.values[k + 1]

    J, stages, d = _sub_forward(u, start, target, frozen, h, w, prob)
    g = _sub_gradient(u, stages, d, h, w, mask, prob)
    r = projected_residual(u, g, prob.u_max) * mask
    res = float(np.sqrt(h * np.sum(r * r)))
    it = 0
    while res > opts.sub_tol and it < opts.sub_iters:
        it += 1
        u = np.clip(u - step * g, -prob.u_max, prob.u_max) * mask + 0.0
        J, stages, d = _sub_forward(u, start, target, frozen, h, w, prob)
        g = _sub_gradient(u, stages, d, h, w, mask, prob)
        r = projected_residual(u, g, prob.u_max) * mask
        res = float(np.sqrt(h * np.sum(r * r)))
    gint = float(h * np.sum(np.linalg.norm(r, axis=1)))
    t0 = float(m.grid.nodes[k])
    t1 = float(m.grid.nodes[k + 1])
    return Segment(agent, k, t0, t1, u, J, it, res, gint)


def concatenate(segments, grid: TimeGrid, prob: ProblemSpec | None = None,
                agent: str | None = None) -> ControlTrajectory:
    """Splice segment controls, ordered by subinterval index, onto ``grid``."""
    segments = list(segments)
    if not segments:
        raise ValueError("no segments to concatenate")
    agent = agent or segments[0].agent
    by_k = {}
    for seg in segments:
        if seg.agent != agent:
            raise ValueError("segments belong to different agents")
        if seg.k in by_k:
            raise ValueError(f"overlapping segments: subinterval {seg.k} supplied twice")
        by_k[seg.k] = seg
    n_c = max(by_k) + 1
    missing = sorted(set(range(n_c)) - set(by_k))
    if missing or min(by_k) < 0:
        raise ValueError(f"missing segments for subintervals {missing}")
    values = np.concatenate([by_k[k].values for k in range(n_c)], axis=0)
    if values.shape[0] != grid.N:
        raise DimensionError(f"segments cover {values.shape[0]} steps, grid has {grid.N}")
    if prob is not None:
        mask = prob.mask(agent)
        values = np.clip(values, -prob.u_max, prob.u_max) * mask + 0.0
    else:
        mask = np.any(values != 0.0, axis=0)
    return ControlTrajectory(grid, agent, values, mask)


def split(u: ControlTrajectory, n_coarse: int) -> list[np.ndarray]:
    """Per-subinterval blocks of a fine-grid control."""
    if u.grid.N % n_coarse:
        raise ValueError(f"n_coarse={n_coarse} must divide N={u.grid.N}")
    return list(np.split(u.values, n_coarse, axis=0))


def total_cost_bar(u2: ControlTrajectory, m2: IntermediateTrajectory,
                   prob: ProblemSpec, u1: ControlTrajectory | None = None) -> float:
    """``(T / delta) * sum_k J2^k[u2 | m2]`` with ``u1`` frozen per subinterval."""
    n_c = m2.n_coarse
    s = u2.grid.N // n_c
    other = np.zeros_like(u2.values) if u1 is None else u1.values
    blocks = split(u2, n_c)
    total = 0.0
    for k in range(n_c):
        seg = Segment(FOLLOWER, k, m2.grid.nodes[k], m2.grid.nodes[k + 1], blocks[k])
        total += subcost_follower(k, seg, m2, other[k * s], prob)
    return (m2.grid.T / m2.grid.delta) * total


def m_perturbation_check(u2: ControlTrajectory, m2: IntermediateTrajectory,
                         prob: ProblemSpec, u1: ControlTrajectory | None = None,
                         scale: float = 1e-3, samples: int = 100, seed: int = 0) -> float:
    """Smallest change of ``J2_bar`` under random perturbations of ``m2`` at
    the interior coarse nodes. Nonnegative iff no sampled perturbation
    improves on the given intermediate trajectory."""
    rng = np.random.default_rng(seed)
    base = total_cost_bar(u2, m2, prob, u1)
    worst = np.inf
    for _ in range(samples):
        v = np.array(m2.values)
        v[1:-1] += scale * rng.standard_normal(v[1:-1].shape)
        moved = IntermediateTrajectory(m2.grid, m2.agent, v)
        worst = min(worst, total_cost_bar(u2, moved, prob, u1) - base)
    return float(worst)


# --------------------------------------------------------------------------
# execution

def resolve_workers(requested: int) -> int:
    """Worker count; the ``HOCL_WORKERS`` environment variable wins."""
    env = os.environ.get(WORKERS_ENV)
    w = int(env) if env not in (None, "") else int(requested)
    if w < 1:
        raise ValueError("worker count must be at least 1")
    return w


def _solve_task(args):
    agent, k, m, frozen, prob, opts, warm = args
    return solve_subinterval(agent, k, m, frozen, prob, opts, warm_start=warm)


class _Runner:
    """Serial loop for one worker, a process pool otherwise."""

    def __init__(self, workers: int):
        self.workers = workers
        self.pool = ProcessPoolExecutor(workers) if workers > 1 else None

    def map(self, tasks):
        if self.pool is None:
            return [_solve_task(t) for t in tasks]
        chunk = max(1, len(tasks) // (4 * self.workers))
        return list(self.pool.map(_solve_task, tasks, chunksize=chunk))

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def solve_phase(agent: str, m: IntermediateTrajectory, own: ControlTrajectory,
                other: ControlTrajectory, prob: ProblemSpec, opts: SolverOptions,
                runner: _Runner) -> list[Segment]:
    """All subinterval problems of one agent; returned sorted by ``k``."""
    n_c = m.n_coarse
    s = own.grid.N // n_c
    warm = split(own, n_c)
    tasks = [(agent, k, m, np.array(other.values[k * s]), prob, opts, warm[k])
             for k in range(n_c)]
    return sorted(runner.map(tasks), key=lambda seg: seg.k)


def average_gradient(segments: list[Segment], T: float) -> float:
    """``(1/T) sum_k int |grad J^k| dt`` (projected gradients)."""
    return sum(seg.grad_integral for seg in segments) / T


def run_algorithm_2(prob: ProblemSpec, opts: SolverOptions | None = None,
                    u1_init: ControlTrajectory | None = None,
                    u2_init: ControlTrajectory | None = None) -> SolveReport:
    opts = opts or SolverOptions()
    workers = resolve_workers(opts.workers)
    cgrid = coarse_grid(prob, opts.n_coarse)
    grid = prob.grid
    u1 = u1_init or ControlTrajectory.zeros(prob, LEADER)
    u2 = u2_init or ControlTrajectory.zeros(prob, FOLLOWER)
    timer = PhaseTimer()
    history = []
    diag = {"n_coarse": cgrid.N, "fine_steps": grid.N // cgrid.N,
            "J2_bar": [], "J2": [], "J2_gap": [],
            "leader_objective_residual": [], "follower_objective_residual": [],
            "literal_terminal_gap": [], "sub_iterations": []}
    converged = False

    with _Runner(workers) as runner:
        for n in range(1, opts.max_outer + 1):
            with timer.phase("follower"):
                fs = sweep(FOLLOWER, u1, u2, prob, opts)
                m2 = intermediate_state(fs.theta, fs.adjoint, cgrid)
            with timer.phase("follower_subintervals"):
                segs2 = solve_phase(FOLLOWER, m2, u2, u1, prob, opts, runner)
            u2 = concatenate(segs2, grid, prob, FOLLOWER)

            with timer.phase("leader"):
                ls = sweep(LEADER, u1, u2, prob, opts)
                m1 = intermediate_state(ls.theta, ls.adjoint, cgrid)
            with timer.phase("leader_subintervals"):
                segs1 = solve_phase(LEADER, m1, u1, u2, prob, opts, runner)
            u1 = concatenate(segs1, grid, prob, LEADER)

            res1 = average_gradient(segs1, prob.T)
            res2 = average_gradient(segs2, prob.T)
            theta = integrate_forward(prob.theta0, u1, u2, grid, prob)
            history.append(make_record(n, theta, u2, res1, res2, prob, timer))

            J2_bar = total_cost_bar(u2, m2, prob, u1)
            J2 = cost_J2(theta, u2, prob)
            diag["J2_bar"].append(J2_bar)
            diag["J2"].append(J2)
            diag["J2_gap"].append(J2_bar - J2)
            diag["leader_objective_residual"].append(ls.residual)
            diag["follower_objective_residual"].append(fs.residual)
            # literal reading of the leader's subinterval endpoint condition,
            # checked on the last subinterval only
            last = segs1[-1]
            path, _ = rk4_path(m1.values[-2], last.values + u2.values[-last.n_fine],
                               last.h, prob)
            gap = m1.values[-1] + prob.grad_phi(path[-1])
            diag["literal_terminal_gap"].append(float(np.linalg.norm(gap)))
            diag["sub_iterations"].append(
                [int(sum(s.sub_iterations for s in segs2)),
                 int(sum(s.sub_iterations for s in segs1))])
            if res1 <= prob.eps_tol:
                converged = True
                break

    return finish_report("parallel", converged, u1, u2, history, prob, opts, timer, diag)


# --------------------------------------------------------------------------
# benchmarking

def bench_phases(prob: ProblemSpec, opts: SolverOptions, workers_list, repeats: int = 1):
    """Wall time of the two subinterval phases for each worker count.

    Uses the intermediate trajectories of the first outer iteration (zero
    initial controls) with a fixed sub-iteration budget. Returns rows with
    keys ``W, N_c, phase, wall_time_s, speedup_vs_W1``.
    """
    workers_list = [int(w) for w in workers_list]
    if any(w < 1 for w in workers_list):
        raise ValueError("worker count must be at least 1")
    cgrid = coarse_grid(prob, opts.n_coarse)
    bench_opts = SolverOptions(**{**opts.__dict__, "sub_tol": 0.0})
    u1 = ControlTrajectory.zeros(prob, LEADER)
    u2 = ControlTrajectory.zeros(prob, FOLLOWER)
    fs = sweep(FOLLOWER, u1, u2, prob, bench_opts)
    ls = sweep(LEADER, u1, u2, prob, bench_opts)
    inputs = {
        FOLLOWER: (intermediate_state(fs.theta, fs.adjoint, cgrid), u2, u1),
        LEADER: (intermediate_state(ls.theta, ls.adjoint, cgrid), u1, u2),
    }
    times: dict[tuple[int, str], float] = {}
    for W in workers_list:
        with _Runner(W) as runner:
            if runner.pool is not None:     # spin the workers up outside the timing
                runner.pool.submit(int, 0).result()
            for agent in (FOLLOWER, LEADER):
                m, own, other = inputs[agent]
                best = float("inf")
                for _ in range(max(1, repeats)):
                    t0 = time.perf_counter()
                    solve_phase(agent, m, own, other, prob, bench_opts, runner)
                    best = min(best, time.perf_counter() - t0)
                times[(W, agent)] = best
    rows = []
    for W in workers_list:
        for agent in (FOLLOWER, LEADER):
            base = times.get((1, agent))
            t = times[(W, agent)]
            rows.append({"W": W, "N_c": cgrid.N, "phase": agent, "wall_time_s": t,
                         "speedup_vs_W1": (base / t) if base is not None else float("nan")})
    return rows
