"""Command-line front end: ``satflow run|convergence|audit|list``.

Exit codes: 0 success, 2 configuration error, 3 solver failure (including a
fixed explicit step above the CFL bound), 4 invariant violation found by the
built-in audit.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from . import __version__
from .core import CflDriven, FixedDt, SchemeConfig, SolverOptions
from .diagnostics import (
    audit_bounds,
    audit_energy,
    audit_mass,
    convergence_study,
    error_norms,
    overlap_integral,
)
from .experiments import PROBLEMS, InadmissibleDatum, get_problem, random_bound_trials, with_resolution
from .integration import CflViolation, EvolutionAborted, SolverFailure, evolve

log = logging.getLogger("satflow")

EXIT_CONFIG, EXIT_SOLVER, EXIT_AUDIT = 2, 3, 4


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    problem: str
    cells: int | None = None
    level: int | None = None
    scheme: str = "implicit"
    dt: float | None = None
    cfl: float | None = None
    t_end: float | None = None
    out: str = "satflow-out"
    snapshots: int = 50
    every_steps: int | None = None
    every_time: float | None = None
    saturation: bool = True
    method: str = "newton"
    tolerance: float = 1e-10
    max_iterations: int = 200
    literal_data: bool = False
    seed: int = 0
    trials: int = 200


_NUMERIC = {"cells": int, "level": int, "dt": float, "cfl": float, "t_end": float, "snapshots": int,
            "every_steps": int, "every_time": float, "tolerance": float, "max_iterations": int,
            "seed": int, "trials": int}


def read_config_file(path):
    """Flat ``key = value`` file; ``#`` starts a comment, dashes in keys become underscores."""
    values = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _coerce(key, value):
    if key in _NUMERIC:
        try:
            return _NUMERIC[key](value)
        except (TypeError, ValueError):
            raise ConfigError(f"malformed numeric value for {key}: {value!r}") from None
    if key in ("saturation", "literal_data") and isinstance(value, str):
        if value.lower() not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"malformed boolean for {key}: {value!r}")
        return value.lower() in ("true", "1", "yes")
    return value


def parse_config(args):
    """Merge a config file (if any) with command-line flags; flags win."""
    merged = {}
    if getattr(args, "config", None):
        merged.update(read_config_file(args.config))
    known = {f.name for f in fields(RunConfig)}
    unknown = set(merged) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    if not merged.get("problem"):
        raise ConfigError("missing problem name")
    config = RunConfig(**{k: _coerce(k, v) for k, v in merged.items()})
    validate(config)
    return config


def validate(config):
    if config.problem not in PROBLEMS:
        raise ConfigError(f"unknown problem {config.problem!r}; try 'satflow list'")
    if config.scheme not in ("implicit", "explicit"):
        raise ConfigError("scheme must be 'implicit' or 'explicit'")
    if config.method not in ("newton", "picard"):
        raise ConfigError("method must be 'newton' or 'picard'")
    if config.cells is not None and config.cells < 4:
        raise ConfigError("resolution must be at least 4 cells per dimension")
    for key in ("dt", "t_end", "every_time", "tolerance"):
        value = getattr(config, key)
        if value is not None and not (math.isfinite(value) and value > 0):
            raise ConfigError(f"{key} must be positive")
    if config.cfl is not None and not 0 < config.cfl <= 1:
        raise ConfigError("cfl safety factor must lie in (0, 1]")
    if config.snapshots < 1 or (config.every_steps is not None and config.every_steps < 1):
        raise ConfigError("output cadence must be positive")
    if config.scheme == "implicit" and config.cfl is not None:
        raise ConfigError("--cfl applies to explicit schemes only")


def build(config):
    """Resolve ``config`` into ``(problem, grid, scheme config, t_end)``."""
    options = {}
    if config.problem.startswith("freeze"):
        options["literal_datum"] = config.literal_data
    elif config.problem.startswith("adhesion"):
        options["literal_geometry"] = config.literal_data
    elif config.literal_data:
        raise ConfigError("--literal-data applies to freeze and adhesion problems")
    if config.problem.startswith("skt"):
        if config.level is not None:
            options["level"] = config.level
    elif config.level is not None:
        raise ConfigError("--level applies to the skt problems")
    elif config.cells is not None:
        # factories tie their default step to the mesh where the experiment does
        options["num_cells"] = config.cells
    try:
        problem = get_problem(config.problem, config.saturation, **options)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    explicit = config.scheme == "explicit"
    if explicit and problem.gradient_flow and problem.dimension == 2 and problem.energy.has_kernels:
        raise ConfigError("explicit schemes do not support nonlocal gradient-flow terms in 2D; "
                          "use the implicit sweeping scheme")
    problem = with_resolution(problem, config.cells, config.dt, config.t_end)
    grid = problem.grid()
    solver = SolverOptions(config.tolerance, config.max_iterations, 1.0, config.method)
    if explicit and config.dt is None:
        policy = CflDriven(config.cfl if config.cfl is not None else 0.9)
    else:
        policy = FixedDt(problem.dt)
    scheme = SchemeConfig(problem.default_scheme(explicit), dt_policy=policy, solver=solver)
    return problem, grid, scheme, problem.final_time


# -- output ------------------------------------------------------------------------


def write_fields(path, values, grid):
    coords = [c.ravel() for c in grid.mesh()]
    names = ["x", "y"][: grid.ndim] + [f"species_{p + 1}" for p in range(values.shape[0])]
    table = np.column_stack(coords + [v.ravel() for v in values])
    np.savetxt(path, table, fmt="%.17g", delimiter=",", header=",".join(names), comments="")


def write_diagnostics(path, series):
    rows = np.array(list(series.rows()), dtype=float)
    np.savetxt(path, rows, fmt="%.17g", delimiter=",", header=",".join(series.columns()), comments="")


class SnapshotWriter:
    """Writes ``fields_NNNN.csv`` at the configured cadence, always including both ends."""

    def __init__(self, out, grid, t_end, config):
        self.out, self.grid, self.t_end = out, grid, t_end
        self.every_steps = config.every_steps
        self.interval = config.every_time or (t_end / config.snapshots if t_end > 0 else math.inf)
        self.count, self.step, self.next_time = 0, 0, 0.0
        self.times = []

    def write(self, t, values):
        write_fields(self.out / f"fields_{self.count:04d}.csv", values, self.grid)
        self.times.append(t)
        self.count += 1

    def __call__(self, t, values, report=None):
        if report is not None:
            self.step += 1
        final = t >= self.t_end
        if self.every_steps is not None:
            due = self.step % self.every_steps == 0
        else:
            due = t >= self.next_time - 1e-9 * self.interval
        if due or final:
            self.write(t, values)
            if self.every_steps is None:
                while self.next_time <= t + 1e-9 * self.interval:
                    self.next_time += self.interval


def write_meta(path, config, problem, grid, scheme, extra):
    lines = [f"satflow_version = {__version__}"]
    lines += [f"{f.name} = {getattr(config, f.name)}" for f in fields(RunConfig)]
    lines += [
        f"resolved_scheme = {scheme.scheme.value}",
        f"dt_policy = {scheme.dt_policy}",
        f"theta = {scheme.theta}",
        f"grid_shape = {grid.shape}",
        f"bounds = {problem.bounds}",
        f"boundary = {problem.boundary.value}",
        f"final_time = {problem.final_time!r}",
        f"saturation = {problem.saturation!r}",
        f"parameters = {problem.parameters}",
    ]
    lines += [f"{k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n")


# -- verbs -----------------------------------------------------------------------------


def run_problem(config, out=None):
    """Run a configured problem.

    Returns ``(series, audits, problem, grid, scheme, writer)``; snapshots
    are written only when ``out`` is given.
    """
    problem, grid, scheme, t_end = build(config)
    initial = problem.initial(grid)
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        writer = SnapshotWriter(out, grid, t_end, config)
        writer(0.0, initial)
    series = evolve(initial, problem.dynamics, grid, scheme, t_end, callback=writer)
    audits = [audit_bounds(series, problem.saturation.alpha)]
    if problem.dynamics.source is None:
        audits.append(audit_mass(series))
    if problem.gradient_flow and problem.dynamics.source is None and not scheme.scheme.explicit:
        # dissipation is a property of the implicit gradient-flow schemes only
        audits.append(audit_energy(series))
    return series, audits, problem, grid, scheme, writer


def cmd_run(config):
    out = Path(config.out)
    start = time.perf_counter()
    series, audits, problem, grid, scheme, writer = run_problem(config, out)
    write_diagnostics(out / "diagnostics.csv", series)
    extra = {"steps": len(series) - 1, "snapshots": writer.count,
             "wall_seconds": f"{time.perf_counter() - start:.3f}"}
    final = series.final_state
    if problem.exact is not None:
        extra["final_errors_L1_L2_Linf"] = error_norms(final, problem.exact, series.times[-1], grid)
    if problem.num_species == 2:
        extra["final_overlap"] = overlap_integral(final[0], final[1], grid)
    for audit in audits:
        extra[f"audit_{audit.name}"] = str(audit)
    write_meta(out / "meta.txt", config, problem, grid, scheme, extra)
    for audit in audits:
        print(audit)
    for key in ("final_errors_L1_L2_Linf", "final_overlap"):
        if key in extra:
            print(f"{key}: {extra[key]}")
    print(f"wrote {writer.count} snapshots and {len(series)} diagnostics rows to {out}")
    return EXIT_AUDIT if not all(a.passed for a in audits) else 0


def cmd_convergence(config, kmin, kmax):
    problem = get_problem(config.problem, config.saturation)
    if problem.refinement is None:
        raise ConfigError(f"{config.problem} has no refinement law; convergence needs skt or skt-saturated")
    if kmax < kmin + 1:
        raise ConfigError("--kmax must exceed --kmin")
    solver = SolverOptions(config.tolerance, config.max_iterations, 1.0, config.method)

    def solve(level):
        cells, dt = problem.refinement(level)
        p = with_resolution(problem, cells, dt, config.t_end)
        grid = p.grid()
        scheme = SchemeConfig(p.default_scheme(), dt_policy=FixedDt(dt), solver=solver)
        series = evolve(p.initial(grid), p.dynamics, grid, scheme, p.final_time)
        return series.final_state, grid, p.final_time, dt

    table = convergence_study(solve, range(kmin, kmax + 1), problem.exact)
    print(table.format())
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = [[k, dx, dt, *err] for k, (dx, dt), err in zip(range(kmin, kmax + 1), table.resolutions, table.errors)]
    np.savetxt(out / "convergence.csv", np.array(rows), fmt="%.17g", delimiter=",",
               header="k,dx,dt,L1,L2,Linf", comments="")
    orders = table.observed_orders[:, 0]
    print("observed L1 orders:", " ".join(f"{o:.3f}" for o in orders))
    return 0


def cmd_audit(config):
    series, audits, problem, grid, scheme, _ = run_problem(config)
    outcomes = random_bound_trials(config.seed, config.trials)
    failed = [o for o in outcomes if not o.passed()]
    for audit in audits:
        print(audit)
    print(f"{'PASS' if not failed else 'FAIL'} randomized bounds: {len(outcomes) - len(failed)}/{len(outcomes)}")
    for o in failed[:10]:
        print("  ", o)
    return EXIT_AUDIT if failed or not all(a.passed for a in audits) else 0


def cmd_list():
    for name, (_, description) in PROBLEMS.items():
        print(f"{name:20s} {description}")
    return 0


def _add_run_flags(p):
    p.add_argument("problem", nargs="?", help="problem name (see 'satflow list')")
    p.add_argument("--config", help="key = value file; flags override its entries")
    p.add_argument("--cells", type=int, help="cells per dimension")
    p.add_argument("--level", type=int, help="refinement level k of the skt problems")
    p.add_argument("--scheme", choices=["implicit", "explicit"])
    p.add_argument("--dt", type=float, help="fixed time step")
    p.add_argument("--cfl", type=float, help="CFL safety factor for explicit runs without --dt")
    p.add_argument("--t-end", dest="t_end", type=float, help="final time")
    p.add_argument("--out", help="output directory")
    p.add_argument("--snapshots", type=int, help="field snapshots per run (default 50)")
    p.add_argument("--every-steps", dest="every_steps", type=int, help="snapshot every N steps")
    p.add_argument("--every-time", dest="every_time", type=float, help="snapshot every T time units")
    p.add_argument("--no-saturation", dest="saturation", action="store_const", const=False,
                   help="use psi = 1 (comparison runs)")
    p.add_argument("--method", choices=["newton", "picard"], help="nonlinear solver")
    p.add_argument("--tolerance", type=float, help="nonlinear update tolerance")
    p.add_argument("--max-iterations", dest="max_iterations", type=int)
    p.add_argument("--literal-data", dest="literal_data", action="store_const", const=True,
                   help="use the initial data exactly as printed (freeze, adhesion)")
    p.add_argument("--seed", type=int, help="seed of the randomized audit suite")
    p.add_argument("--trials", type=int, help="randomized audit trials")


def make_parser():
    parser = argparse.ArgumentParser(prog="satflow", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_run_flags(sub.add_parser("run", help="run one experiment"))
    conv = sub.add_parser("convergence", help="refinement study against the exact solution")
    _add_run_flags(conv)
    conv.add_argument("--kmin", type=int, default=1)
    conv.add_argument("--kmax", type=int, required=True)
    _add_run_flags(sub.add_parser("audit", help="run an experiment plus the randomized invariant suite"))
    sub.add_parser("list", help="list problems")
    return parser


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        return cmd_list()
    try:
        config = parse_config(args)
        if args.command == "run":
            return cmd_run(config)
        if args.command == "convergence":
            return cmd_convergence(config, args.kmin, args.kmax)
        return cmd_audit(config)
    except (ConfigError, InadmissibleDatum) as exc:
        print(f"satflow: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CflViolation, SolverFailure, EvolutionAborted) as exc:
        print(f"satflow: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
