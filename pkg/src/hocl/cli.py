"""Command-line front end.

    python -m hocl gen-data        --config gen.json --out data/
    python -m hocl solve           --config run.json --out runs/a [--algorithm msa] [--workers 4]
    python -m hocl check-gradients [--config run.json]
    python -m hocl bench           [--config bench.json] --out runs/b [--workers 1,2,4]

Configs are flat JSON objects whose keys mirror the ``ProblemSpec`` fields
and the solver options (see ``PROBLEM_KEYS`` / ``OPTION_KEYS``). Relative
paths are resolved against the config file's directory. Exit codes: 0 on
success / convergence, 2 when a solver exhausts its budget (outputs are still
written), 1 on any error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .baseline import SolveReport, SolverOptions, leader_gradient_step, leader_objective, run_algorithm_O
from .dynamics import ControlTrajectory, control_gradient, integrate_adjoint, integrate_forward
from .grid import FOLLOWER, LEADER, ControlPartition
from .msa import run_algorithm_1
from .oracle import ORACLE_MAX_N, ORACLE_MAX_P, DiscretizedCost
from .parareal import bench_phases, resolve_workers, run_algorithm_2
from .problem import (Dataset, ModelSpec, ProblemSpec, bootstrap_split, load_dataset,
                      reference_problem, save_dataset)

ALGORITHMS = {"baseline": run_algorithm_O, "msa": run_algorithm_1, "parallel": run_algorithm_2}
TRACE_COLUMNS = ["iter", "J1", "J2", "leader_residual", "follower_residual", "phi_gap", "wall_s"]
BENCH_COLUMNS = ["W", "N_c", "phase", "wall_time_s", "speedup_vs_W1", "warning"]
GRADIENT_TOL = 1e-5
SPEEDUP_TARGET = 2.0

PROBLEM_KEYS = {"problem", "p", "theta_valid", "train_path", "valid_path", "header",
                "model", "basis", "theta0", "T", "N", "alpha", "beta", "gamma1",
                "gamma2", "u_max", "z_target", "eps_tol", "leader_idx", "follower_idx",
                "name"}
# "lambda" is the leader's subinterval matching weight
OPTION_KEYS = {f.name for f in fields(SolverOptions)} | {"lambda"}
RUN_KEYS = {"algorithm", "out_dir"}
GEN_KEYS = {"d", "m0", "m1", "m2", "theta_true", "noise", "seed", "with_replacement",
            "feature_scale"}


class ConfigError(ValueError):
    pass


# --------------------------------------------------------------------------
# configuration

def read_config(path) -> tuple[dict, Path]:
    if path is None:
        return {}, Path.cwd()
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    return raw, path.parent


def _check_keys(raw: dict, allowed: set[str]):
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def build_problem(raw: dict, base: Path) -> ProblemSpec:
    kw = {k: raw[k] for k in ("T", "N", "alpha", "beta", "gamma1", "gamma2", "u_max",
                              "z_target", "eps_tol", "name") if k in raw}
    if "leader_idx" in raw or "follower_idx" in raw:
        kw["partition"] = ControlPartition(tuple(raw.get("leader_idx", ())),
                                           tuple(raw.get("follower_idx", ())))
    if "train_path" not in raw:
        if raw.get("problem", "reference") != "reference":
            raise ConfigError("give train_path/valid_path or problem='reference'")
        if "theta_valid" in raw:
            kw["theta_valid"] = raw["theta_valid"]
        if "theta0" in raw:
            kw["theta0"] = raw["theta0"]
        return reference_problem(p=int(raw.get("p", 2)), **kw)
    if "valid_path" not in raw:
        raise ConfigError("train_path needs a matching valid_path")
    header = bool(raw.get("header", True))
    train = load_dataset(base / raw["train_path"], header=header)
    valid = load_dataset(base / raw["valid_path"], header=header)
    if raw.get("model", "linear") == "linear":
        model = ModelSpec.linear(train.d)
    elif raw["model"] == "fixed-basis":
        model = ModelSpec.fixed_basis(raw.get("basis", []))
    else:
        raise ConfigError(f"unknown model {raw['model']!r}")
    kw["theta0"] = raw.get("theta0", np.zeros(model.param_dim))
    return ProblemSpec(model=model, train_set=train, valid_set=valid, **kw)


def build_options(raw: dict) -> SolverOptions:
    kw = {k: raw[k] for k in OPTION_KEYS - {"lambda"} if k in raw}
    if "lambda" in raw:
        kw["penalty"] = raw["lambda"]
    return SolverOptions(**kw)


@dataclass
class RunConfig:
    problem: ProblemSpec
    algorithm: str = "msa"
    options: SolverOptions = field(default_factory=SolverOptions)
    out_dir: Path | None = None
    raw: dict = field(default_factory=dict)


def load_run_config(path, algorithm: str | None = None, workers: int | None = None,
                    out: str | None = None) -> RunConfig:
    raw, base = read_config(path)
    _check_keys(raw, PROBLEM_KEYS | OPTION_KEYS | RUN_KEYS)
    algo = algorithm or raw.get("algorithm", "msa")
    if algo not in ALGORITHMS:
        raise ConfigError(f"unknown algorithm {algo!r}; choose from {sorted(ALGORITHMS)}")
    if algo != "parallel":
        for key in ("workers", "n_coarse", "lambda"):
            if key in raw and algorithm is None:
                raise ConfigError(f"{key!r} only applies to algorithm 'parallel'")
    raw = dict(raw)
    if workers is not None:
        raw["workers"] = workers
    opts = build_options(raw)
    out_dir = Path(out) if out else (base / raw["out_dir"] if "out_dir" in raw else None)
    return RunConfig(build_problem(raw, base), algo, opts, out_dir, raw)


# --------------------------------------------------------------------------
# outputs

def write_trace(report: SolveReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for r in report.residual_history:
            w.writerow([r.iteration, repr(r.J1), repr(r.J2), repr(r.leader_residual),
                        repr(r.follower_residual), repr(r.phi_gap), repr(r.wall_s)])


def write_result(report: SolveReport, path, extra: dict | None = None) -> None:
    out = report.to_dict(timing=True)
    out.update(extra or {})
    Path(path).write_text(json.dumps(out, indent=2, sort_keys=True), encoding="utf-8")


# --------------------------------------------------------------------------
# commands

def cmd_gen_data(raw: dict, out: Path) -> int:
    """Synthetic linear data ``y = X theta_true + noise``, then a bootstrap split."""
    _check_keys(raw, GEN_KEYS)
    d = int(raw.get("d", 2))
    m0 = int(raw.get("m0", 100))
    m1 = int(raw.get("m1", m0 // 2))
    m2 = int(raw.get("m2", m0 - m1))
    theta = np.asarray(raw.get("theta_true", [(-1.0) ** j for j in range(d)]), dtype=float)
    if theta.shape != (d,):
        raise ConfigError(f"theta_true must have length d={d}")
    seed = int(raw.get("seed", 0))
    # features/noise and the split draw from independent child streams
    data_ss, split_ss = np.random.SeedSequence(seed).spawn(2)
    rng = np.random.Generator(np.random.PCG64(data_ss))
    X = float(raw.get("feature_scale", 1.0)) * rng.standard_normal((m0, d))
    y = X @ theta + float(raw.get("noise", 0.0)) * rng.standard_normal(m0)
    z0 = Dataset(X, y)
    split_seed = int(split_ss.generate_state(1, dtype=np.uint64)[0])
    z1, z2 = bootstrap_split(z0, m1, m2, split_seed, bool(raw.get("with_replacement", False)))
    out.mkdir(parents=True, exist_ok=True)
    for name, ds in (("z0.csv", z0), ("z1.csv", z1), ("z2.csv", z2)):
        save_dataset(ds, out / name)
    print(f"wrote {out / 'z0.csv'} ({m0} rows), z1.csv ({m1}), z2.csv ({m2})")
    return 0


def cmd_solve(cfg: RunConfig) -> int:
    if cfg.out_dir is None:
        raise ConfigError("solve needs an output directory (--out or out_dir)")
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    report = ALGORITHMS[cfg.algorithm](cfg.problem, cfg.options)
    write_result(report, cfg.out_dir / "result.json",
                 {"seeds": {"seed": cfg.options.seed}})
    write_trace(report, cfg.out_dir / "trace.csv")
    status = "converged" if report.converged else "budget exhausted"
    print(f"{cfg.algorithm}: {status} after {report.outer_iters} outer iterations; "
          f"theta(T) = {np.array2string(report.theta_final, precision=6)}, "
          f"phi_gap = {report.phi_gap:.6g}")
    return 0 if report.converged else 2


def gradient_checks(prob: ProblemSpec, opts: SolverOptions, seed: int = 0,
                    eps: float = 1e-5) -> list[tuple[str, float, bool]]:
    """Adjoint-vs-difference checks at a random admissible control pair.

    Errors are per node, relative to the largest difference-gradient entry.
    The leader descent check takes one leader step with the configured sign
    and requires the leader objective to drop.
    """
    if prob.p > ORACLE_MAX_P or prob.N > ORACLE_MAX_N:
        raise ConfigError(f"oracle scale: p={prob.p}, N={prob.N} exceeds "
                          f"p<={ORACLE_MAX_P}, N<={ORACLE_MAX_N}")
    rng = np.random.default_rng(seed)
    grid = prob.grid
    half = 0.5 * prob.u_max
    u1 = ControlTrajectory.from_values(prob, LEADER, rng.uniform(-half, half, (grid.N, prob.p)))
    u2 = ControlTrajectory.from_values(prob, FOLLOWER, rng.uniform(-half, half, (grid.N, prob.p)))
    theta = integrate_forward(prob.theta0, u1, u2, grid, prob)
    rows = []
    for agent, own, other in ((FOLLOWER, u2, u1), (LEADER, u1, u2)):
        if not own.mask.any():
            continue
        adj = integrate_adjoint(agent, theta, grid, prob, opts.literal_terminal)
        g = control_gradient(agent, adj, own, prob)
        cost = DiscretizedCost(agent, prob, grid, other)
        fd = cost.full(cost.fd_gradient(cost.pack(own.values), eps))
        scale = max(float(np.max(np.abs(fd))), 1e-300)
        err = float(np.max(np.abs(g - fd))) / scale
        rows.append((f"{agent} adjoint gradient", err, err <= GRADIENT_TOL))
    if u1.mask.any():
        adj = integrate_adjoint(LEADER, theta, grid, prob, opts.literal_terminal)
        step = leader_gradient_step(u1, adj, 0.1, prob, opts.sign)
        before = leader_objective(theta, prob)
        after = leader_objective(integrate_forward(prob.theta0, step, u2, grid, prob), prob)
        rows.append(("leader descent", after - before, after < before))
    return rows


def cmd_check_gradients(cfg: RunConfig) -> int:
    rows = gradient_checks(cfg.problem, cfg.options, cfg.options.seed)
    width = max(len(r[0]) for r in rows)
    print(f"{'check':<{width}}  {'value':>12}  result")
    for name, value, ok in rows:
        print(f"{name:<{width}}  {value:12.3e}  {'PASS' if ok else 'FAIL'}")
    return 0 if all(ok for _, _, ok in rows) else 1


def default_bench_problem() -> tuple[ProblemSpec, SolverOptions]:
    """p=8, 64 subintervals of 32 fine steps."""
    return reference_problem(p=8, N=64 * 32), SolverOptions(n_coarse=64)


def cmd_bench(cfg: RunConfig | None, workers_list: list[int], out: Path,
              repeats: int = 1) -> int:
    if any(w < 1 for w in workers_list):
        raise ConfigError("worker counts must be at least 1")
    if cfg is None:
        prob, opts = default_bench_problem()
    else:
        if cfg.algorithm != "parallel":
            raise ConfigError("bench needs algorithm 'parallel'")
        prob, opts = cfg.problem, cfg.options
    rows = bench_phases(prob, opts, workers_list, repeats)
    warnings = []
    for r in rows:
        r["warning"] = ""
        if r["W"] == 4 and r["speedup_vs_W1"] < SPEEDUP_TARGET:
            r["warning"] = f"speedup below {SPEEDUP_TARGET:g}x"
            warnings.append(r)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "bench.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=BENCH_COLUMNS)
        w.writeheader()
        w.writerows(rows)
    for r in rows:
        print(f"W={r['W']:<3} N_c={r['N_c']:<4} {r['phase']:<9} "
              f"{r['wall_time_s']:.4f}s  speedup {r['speedup_vs_W1']:.2f}")
    for r in warnings:
        print(f"warning: {r['phase']} phase speedup at W=4 is {r['speedup_vs_W1']:.2f} "
              f"(< {SPEEDUP_TARGET:g}x)", file=sys.stderr)
    return 0


# --------------------------------------------------------------------------

def _parse_workers(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad worker list {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hocl", description=(
        "Leader/follower optimal control of gradient-flow parameter estimation."))
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write synthetic z0/z1/z2 CSV datasets")
    g.add_argument("--config")
    g.add_argument("--out", required=True)

    s = sub.add_parser("solve", help="run a solver; writes result.json and trace.csv")
    s.add_argument("--config")
    s.add_argument("--out")
    s.add_argument("--algorithm", choices=sorted(ALGORITHMS))
    s.add_argument("--workers", type=int)

    c = sub.add_parser("check-gradients", help="adjoint vs finite-difference checks")
    c.add_argument("--config")
    c.add_argument("--algorithm", choices=sorted(ALGORITHMS))

    b = sub.add_parser("bench", help="time the subinterval phases; writes bench.csv")
    b.add_argument("--config")
    b.add_argument("--out", required=True)
    b.add_argument("--algorithm", choices=["parallel"])
    b.add_argument("--workers", default="1,2,4", help="comma-separated worker counts")
    b.add_argument("--repeats", type=int, default=1)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "gen-data":
            raw, _ = read_config(args.config)
            return cmd_gen_data(raw, Path(args.out))
        if args.command == "solve":
            workers = resolve_workers(args.workers) if args.workers is not None else None
            cfg = load_run_config(args.config, args.algorithm, workers, args.out)
            return cmd_solve(cfg)
        if args.command == "check-gradients":
            return cmd_check_gradients(load_run_config(args.config, args.algorithm))
        if args.command == "bench":
            cfg = None
            if args.config:
                cfg = load_run_config(args.config, args.algorithm or "parallel")
            return cmd_bench(cfg, _parse_workers(args.workers), Path(args.out), args.repeats)
    except Exception as exc:  # noqa: BLE001 - any failure maps to exit status 1
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 1


if __name__ == "__main__":
    sys.exit(main())
