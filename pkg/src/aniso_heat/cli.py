"""Command-line front end.

``aniso-heat SUBCOMMAND --config PATH [--out DIR] [--format csv]`` with
subcommands kernel, decay, cancel, solve, holder and check. Each run writes
CSV files (``%.17g``, fixed headers) and prints one JSON summary line that
echoes the SHA-256 of the canonical config.

Exit codes: 0 success, 2 invalid input, 3 numerical failure (including a
failed check suite), 64 usage error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Callable

import jsonschema
import numpy as np

from ._numerics import irfftn
from .errors import AnisoHeatError, ConvergenceError, PVNotStabilizedError, ValidationError
from .fields import SpaceTimeField
from .kernel import (
    GridProfile,
    KernelProfile,
    SpatialGrid,
    build_profile,
    cancellation_integral,
    decay_slope,
    profile_equation_residual,
    spherical_average,
)
from .product_ops import BlockPartition, ProductProfile, product_profile
from .sigma_geometry import holder_seminorm
from .solver import (
    Forcing,
    PvParams,
    named_forcing,
    solve_forced,
    solve_forced_spectral,
    solve_homogeneous,
)
from .spectral_measure import measure_from_spec
from .symbol import SymbolField

__all__ = ["main", "run_command", "load_config", "config_hash", "EXIT_OK", "EXIT_INVALID", "EXIT_NUMERIC", "EXIT_USAGE"]

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64

COMMANDS = ("kernel", "decay", "cancel", "solve", "holder", "check")
USAGE = (
    "usage: aniso-heat {kernel,decay,cancel,solve,holder,check} --config PATH "
    "[--out DIR] [--format csv]"
)


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(message)


def _schema() -> dict:
    text = resources.files("aniso_heat").joinpath("schema/config.schema.json").read_text()
    return json.loads(text)


def config_hash(config: dict) -> str:
    """SHA-256 of the config serialized with sorted keys and no whitespace."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def load_config(path) -> dict:
    """Read and schema-validate a JSON config.

    Raises
    ------
    ValidationError
        Message starts with the JSON path of the offending entry.
    """
    path = Path(path)
    try:
        config = json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"$: config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"$: invalid JSON ({exc})") from None
    validator = jsonschema.Draft202012Validator(_schema())
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        err = jsonschema.exceptions.best_match(errors)
        raise ValidationError(f"{err.json_path}: {err.message}")
    return config


# ----------------------------------------------------------------------
# operator construction


def _grid_from(spec: dict | None, dimension: int) -> SpatialGrid | None:
    if not spec:
        return None
    n = int(spec.get("n", 0))
    if not n:
        raise ValidationError("$.grid.n: required when a grid is given")
    hw = float(spec.get("half_width", 0.0))
    if not hw:
        raise ValidationError("$.grid.half_width: required when a grid is given")
    return SpatialGrid(dimension, n, hw)


def build_operator(config: dict) -> tuple[KernelProfile, SymbolField]:
    """Profile and symbol of the configured operator."""
    op = config["operator"]
    sigma = float(op["sigma"])
    if "blocks" in op:
        part = BlockPartition(tuple(op["blocks"]), sigma)
        grids = None
        if config.get("grid"):
            grids = [_grid_from(config["grid"], b) for b in part.sizes]
        prof = product_profile(part, grids)
        return prof, prof.symbol
    try:
        measure = measure_from_spec(op["measure"], sigma)
    except ValidationError as exc:
        raise ValidationError(f"$.operator.measure: {exc}") from None
    symbol = SymbolField(measure, sigma)
    grid = _grid_from(config.get("grid"), measure.dimension)
    return build_profile(symbol, grid), symbol


def _forcing(spec: dict, dimension: int, sigma: float, base: Path) -> Forcing | SpaceTimeField:
    if "name" in spec:
        return named_forcing(spec["name"], dimension, sigma, **spec.get("params", {}))
    return read_forcing_csv(base / spec["csv"], dimension, sigma, spec.get("holder"))


def read_forcing_csv(path, dimension: int, sigma: float, holder=None) -> SpaceTimeField:
    """Read rows ``(t, x_1..x_N, value)`` on a full cubic lattice."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"$.task.solve.forcing.csv: file {path} not found")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[1] != dimension + 2:
        raise ValidationError(f"forcing csv: expected {dimension + 2} columns, got {data.shape[1]}")
    times = np.unique(data[:, 0])
    axis = np.unique(data[:, 1])
    n = axis.size
    if data.shape[0] != times.size * n**dimension:
        raise ValidationError("forcing csv: rows do not form a full lattice")
    h = axis[1] - axis[0]
    grid = SpatialGrid(dimension, n, -float(axis[0]))
    if not math.isclose(grid.h, h, rel_tol=1e-9):
        raise ValidationError("forcing csv: lattice must be -L + j h with h = 2L/n")
    order = np.lexsort(tuple(data[:, k] for k in range(dimension, -1, -1)))
    vals = data[order, -1].reshape((times.size,) + grid.shape)
    return SpaceTimeField(grid, times, vals, sigma, "forcing", holder=None if holder is None else tuple(holder))


# ----------------------------------------------------------------------
# output


def _write_csv(path: Path, header: list[str], rows: np.ndarray) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, np.asarray(rows, dtype=float), delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def _lattice_rows(grid: SpatialGrid, columns: list[np.ndarray]) -> np.ndarray:
    return np.column_stack([grid.points()] + [c.reshape(-1) for c in columns])


def _coords(n: int) -> list[str]:
    return [f"x{k + 1}" for k in range(n)]


# ----------------------------------------------------------------------
# tasks


def _task_kernel(config, prof, symbol, out: Path) -> dict:
    spec = config.get("task", {}).get("kernel", {})
    comps = spec.get("components", ["phi", "Lphi", "L2phi"])
    N = prof.dimension
    grid = _grid_from(spec.get("output_grid"), N)
    if grid is None:
        grid = SpatialGrid(N, 128, min(16.0, prof.half_width / 2))
    cols = [prof.evaluate(c, grid.points()) for c in comps]
    path = _write_csv(out / "kernel.csv", _coords(N) + comps, _lattice_rows(grid, cols))
    summary = {"phi_at_origin": float(prof.evaluate("phi", np.zeros((1, N)))[0]), "outputs": [str(path)]}
    if isinstance(prof, GridProfile):
        rep = prof.invariant_report()
        summary.update({k: (bool(v) if isinstance(v, (bool, np.bool_)) else float(v)) for k, v in rep.items()})
    return summary


def _task_decay(config, prof, symbol, out: Path) -> dict:
    spec = config.get("task", {}).get("decay", {})
    r_min = float(spec.get("r_min", 3.0))
    r_max = float(spec.get("r_max", 30.0))
    num = int(spec.get("num_r", 16))
    radii = np.geomspace(r_min, r_max, num)
    avg_phi = np.array([spherical_average(prof, "phi", r) for r in radii])
    avg_l = np.array([spherical_average(prof, "abs_Lphi", r) for r in radii])
    path = _write_csv(out / "decay.csv", ["r", "avg_phi", "avg_absLphi"], np.column_stack([radii, avg_phi, avg_l]))
    return {
        "slope_phi": decay_slope(prof, "phi", r_min, r_max, num),
        "slope_absLphi": decay_slope(prof, "abs_Lphi", r_min, r_max, num),
        "predicted": -(prof.dimension + prof.sigma),
        "outputs": [str(path)],
    }


def _task_cancel(config, prof, symbol, out: Path) -> dict:
    spec = config.get("task", {}).get("cancel", {})
    pairs = spec.get("pairs", [[1.0, 2.0], [1.0, 4.0]])
    rows = []
    for a, b in pairs:
        res = cancellation_integral(prof, float(a), float(b))
        rows.append([a, b, res.value, res.abs_value, res.ratio])
    path = _write_csv(out / "cancel.csv", ["a", "b", "integral", "abs_integral", "ratio"], np.array(rows))
    return {"max_ratio": float(max(r[4] for r in rows)), "outputs": [str(path)]}


def _pv_params(spec: dict) -> PvParams:
    kw = dict(spec or {})
    if "eps_ladder" in kw:
        kw["eps_ladder"] = tuple(kw["eps_ladder"])
    return PvParams(**kw)


def _task_solve(config, prof, symbol, out: Path, base: Path) -> dict:
    spec = config["task"]["solve"]
    N, sigma = prof.dimension, prof.sigma
    f = _forcing(spec["forcing"], N, sigma, base)
    method = spec.get("method", "pv")
    targets = _grid_from(spec.get("targets"), N)
    times = spec.get("times")
    if method == "spectral":
        if isinstance(f, SpaceTimeField):
            u = solve_forced_spectral(symbol, f)
        else:
            if targets is None or times is None:
                raise ValidationError("$.task.solve: spectral method needs targets and times")
            u = solve_forced_spectral(symbol, f, targets, times, substeps=8)
    else:
        u = solve_forced(prof, f, _pv_params(spec.get("pv")), targets, times)
    path = _write_csv(out / "solution.csv", ["t"] + _coords(N) + ["u"], u.to_rows())
    summary = {"method": method, "sup_u": float(np.abs(u.values).max()), "outputs": [str(path)]}
    if u.diagnostics:
        summary["pv_ratios"] = u.diagnostics.get("ratios")
    return summary


def _task_holder(config, prof, symbol, out: Path, base: Path) -> dict:
    spec = config["task"]["holder"]
    N, sigma = prof.dimension, prof.sigma
    f = _forcing(spec["forcing"], N, sigma, base)
    if isinstance(f, SpaceTimeField):
        raise ValidationError("$.task.holder.forcing: a named forcing is required")
    box = _grid_from(spec.get("box"), N) or SpatialGrid(N, 64, 4.0)
    steps = int(spec.get("steps", 16))
    times = np.linspace(0.0, float(spec.get("t_end", 1.0)), steps + 1)
    u = solve_forced_spectral(symbol, f, box, times)
    alpha = float(spec["alpha"])
    budget = int(spec.get("pair_budget", 200_000))
    seed = int(config.get("seed", 12345))
    fs = f.sample(box, times, sigma)
    hu = holder_seminorm(u, alpha, budget, seed)
    hf = holder_seminorm(fs, alpha, budget, seed)
    path = _write_csv(out / "holder_solution.csv", ["t"] + _coords(N) + ["u"], u.to_rows())
    return {"alpha": alpha, "holder_u": hu, "holder_f": hf, "ratio": hu / hf if hf else None, "outputs": [str(path)]}


def _task_check(config, prof, symbol, out: Path) -> dict:
    suites: dict[str, bool] = {}
    details: dict[str, float] = {}
    blocks = prof.blocks if isinstance(prof, ProductProfile) else [prof]
    for k, blk in enumerate(blocks):
        rep = blk.invariant_report()
        suites[f"profile_invariants[{k}]"] = bool(rep["ok"])
        details[f"mass_error[{k}]"] = float(rep["mass_error"])
    res = cancellation_integral(prof, 1.0, 2.0)
    suites["cancellation"] = res.ratio <= 1e-3
    details["cancellation_ratio"] = res.ratio
    peq = profile_equation_residual(prof)
    phi_max = float(prof.evaluate("phi", np.zeros((1, prof.dimension)))[0])
    suites["profile_equation"] = peq <= 1e-3 * phi_max
    details["profile_equation_residual"] = peq
    # semigroup and mass conservation on the first block's grid
    blk = blocks[0]
    u = solve_homogeneous(blk, blk.phi, [1.0])
    g = blk.grid
    direct = irfftn(np.exp(-2.0 * blk.multiplier), g.shape) / g.h**g.dimension
    direct = np.fft.fftshift(direct)
    sg_err = float(np.abs(u.values[0] - direct).max())
    suites["semigroup"] = sg_err <= 1e-8 * float(blk.phi.max())
    details["semigroup_error"] = sg_err
    mass_err = abs(float(u.values[0].sum() - blk.phi.sum()) * blk.grid.cell_volume)
    suites["mass_conservation"] = mass_err <= 1e-8
    details["mass_conservation_error"] = mass_err
    if prof.dimension == 1:
        const = named_forcing("sin-traveling", 1, prof.sigma, amplitude=0.0).plus_constant(1.0)
        uc = solve_forced(prof, const, PvParams(richardson=False), SpatialGrid(1, 8, 4.0), [1.0])
        details["constant_forcing_sup"] = float(np.abs(uc.values).max())
        suites["constant_forcing"] = details["constant_forcing_sup"] <= 1e-6
    rows = [[i, float(v)] for i, v in enumerate(suites.values())]
    path = _write_csv(out / "check.csv", ["suite_index", "passed"], np.array(rows))
    return {"suites": suites, "all_passed": all(suites.values()), "details": details, "outputs": [str(path)]}


_TASKS: dict[str, Callable] = {
    "kernel": _task_kernel,
    "decay": _task_decay,
    "cancel": _task_cancel,
    "check": _task_check,
}


def run_command(argv: list[str] | None = None, stdout=None) -> int:
    """Run one subcommand; returns the exit code."""
    stdout = stdout or sys.stdout
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _Parser(prog="aniso-heat", add_help=False)
    parser.add_argument("command")
    parser.add_argument("--config", required=True)
    parser.add_argument("--out")
    parser.add_argument("--format", choices=["csv"], default="csv")
    try:
        if not argv or argv[0] not in COMMANDS:
            raise _Usage(f"unknown subcommand {argv[0] if argv else ''!r}")
        args = parser.parse_args(argv)
    except _Usage as exc:
        print(f"{USAGE}\nerror: {exc}", file=sys.stderr)
        return EXIT_USAGE
    summary: dict[str, Any] = {"command": args.command}
    try:
        config = load_config(args.config)
        summary["config_sha256"] = config_hash(config)
        base = Path(args.config).resolve().parent
        out = Path(args.out) if args.out else base / config.get("output_dir", "out")
        prof, symbol = build_operator(config)
        task = config.get("task", {})
        if args.command in ("solve", "holder") and args.command not in task:
            raise ValidationError(f"$.task.{args.command}: section required for this subcommand")
        if args.command == "solve":
            result = _task_solve(config, prof, symbol, out, base)
        elif args.command == "holder":
            result = _task_holder(config, prof, symbol, out, base)
        else:
            result = _TASKS[args.command](config, prof, symbol, out)
        summary.update(result)
        failed = args.command == "check" and not result["all_passed"]
        summary["status"] = "failed" if failed else "ok"
        code = EXIT_NUMERIC if failed else EXIT_OK
    except (PVNotStabilizedError, ConvergenceError) as exc:
        summary.update(status="error", error=str(exc))
        if isinstance(exc, PVNotStabilizedError):
            summary["diagnostics"] = exc.diagnostics
        code = EXIT_NUMERIC
    except (ValidationError, AnisoHeatError, ValueError) as exc:
        summary.update(status="error", error=str(exc))
        code = EXIT_INVALID
    print(json.dumps(summary, sort_keys=True, default=_jsonable), file=stdout)
    return code


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return str(obj)


def main() -> None:
    sys.exit(run_command())
