"""Command-line front end.

Subcommands: evaluate, optimize, simulate, asymptotics.  Every run
resolves its configuration from defaults, then an optional JSON config
file, then explicit flags (flags win), and echoes the resolved values
into its payload.  Exit codes: 0 success, 2 invalid input, 3 resource
budget exceeded.
"""

from __future__ import annotations

import argparse
import csv
import functools
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import asymptotics as asym
from .errors import LoccestError, ResourceLimitError, ValidationError
from .estimator import (
    GuessRule,
    OPTIMAL_GUESS,
    fidelity_exact_aggregated,
    fidelity_exact_tree,
    fidelity_exact_two_stage,
)
from .geometry import Geometry, make_quadrature, vector_to_angles
from .montecarlo import McConfig, simulate_fidelity
from .optimizer import (
    Gauge,
    OptimizationConfig,
    REFERENCE_N4_ANGLES,
    n4_ansatz_tree,
    optimize_one_step_adaptive,
    optimize_tree,
)
from .strategies import (
    FixedStrategy,
    StrategyTree,
    history_to_bitstring,
    history_to_int,
    make_fixed_axes,
    make_two_stage,
    tree_from_fixed,
)

OUTPUT_DIR_ENV = "LOCCEST_OUTPUT_DIR"
BUILTINS = ("fixed-axes", "optimal-n2", "optimal-n3", "n4-ansatz", "two-stage")
OPTIMIZE_DEFAULT_BUDGET = 6

COMMON_DEFAULTS = {
    "geometry": "full",
    "format": "human",
    "output_dir": None,
    "plot": True,
    "threads": 1,
}

COMMAND_DEFAULTS = {
    "evaluate": {**COMMON_DEFAULTS, "builtin": None, "strategy_file": None,
                 "guess": "og", "per_axis": 1, "alpha": REFERENCE_N4_ANGLES[0],
                 "beta": REFERENCE_N4_ANGLES[1], "gamma": REFERENCE_N4_ANGLES[2],
                 "n": 6, "n0": 2, "lam": 1.0, "degree": None},
    "optimize": {**COMMON_DEFAULTS, "n": 2, "mode": "tree", "restarts": 8,
                 "seed": 123456789, "f_tol": 1e-10, "max_iter": 400,
                 "gauge": "fix-root", "allow_large": False},
    "simulate": {**COMMON_DEFAULTS, "builtin": None, "strategy_file": None,
                 "guess": "og", "per_axis": 1, "alpha": REFERENCE_N4_ANGLES[0],
                 "beta": REFERENCE_N4_ANGLES[1], "gamma": REFERENCE_N4_ANGLES[2],
                 "n": 6, "n0": 2, "lam": 1.0, "samples": 100_000,
                 "seed": 715517, "batch_size": 1 << 16, "trace": False},
    "asymptotics": {**COMMON_DEFAULTS, "scheme": "2d-og", "n_grid": None,
                    "order": 2, "mc_samples": asym.DEFAULT_MC_SAMPLES,
                    "mc_seed": asym.DEFAULT_MC_SEED},
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="loccest",
        description="Evaluate, optimize, and simulate local-measurement "
                    "estimation strategies for a pure qubit state.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--geometry", choices=["planar", "full"])
        p.add_argument("--format", choices=["json", "csv", "human"])
        p.add_argument("--output-dir", dest="output_dir")
        p.add_argument("--plot", action=argparse.BooleanOptionalAction)
        p.add_argument("--threads", type=int)
        p.add_argument("--config", dest="config_file")

    def add_strategy_args(p):
        p.add_argument("--builtin", choices=BUILTINS)
        p.add_argument("--strategy-file", dest="strategy_file")
        p.add_argument("--guess", choices=["og", "cl"])
        p.add_argument("--per-axis", dest="per_axis", type=int)
        p.add_argument("--alpha", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--gamma", type=float)
        p.add_argument("--n", type=int)
        p.add_argument("--n0", type=int)
        p.add_argument("--lam", "--lambda", dest="lam", type=float)

    p_eval = sub.add_parser("evaluate", help="exact average fidelity")
    add_common(p_eval)
    add_strategy_args(p_eval)
    p_eval.add_argument("--degree", type=int,
                        help="quadrature degree override (default N+1)")

    p_opt = sub.add_parser("optimize", help="maximize fidelity over a tree")
    add_common(p_opt)
    p_opt.add_argument("--n", type=int)
    p_opt.add_argument("--mode", choices=["tree", "one-step"])
    p_opt.add_argument("--restarts", type=int)
    p_opt.add_argument("--seed", type=int)
    p_opt.add_argument("--f-tol", dest="f_tol", type=float)
    p_opt.add_argument("--max-iter", dest="max_iter", type=int)
    p_opt.add_argument("--gauge", choices=["fix-root", "free"])
    p_opt.add_argument("--allow-large", dest="allow_large",
                       action=argparse.BooleanOptionalAction,
                       help="acknowledge the cost of N beyond the default "
                            "budget")

    p_sim = sub.add_parser("simulate", help="Monte Carlo fidelity estimate")
    add_common(p_sim)
    add_strategy_args(p_sim)
    p_sim.add_argument("--samples", type=int)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--batch-size", dest="batch_size", type=int)
    p_sim.add_argument("--trace", action=argparse.BooleanOptionalAction,
                       help="record per-sample rows (small runs only)")

    p_asym = sub.add_parser("asymptotics",
                            help="coefficient series and extrapolation")
    add_common(p_asym)
    p_asym.add_argument("--scheme", choices=sorted(asym.SCHEMES))
    p_asym.add_argument("--n-grid", dest="n_grid",
                        help="comma-separated copy counts")
    p_asym.add_argument("--order", type=int)
    p_asym.add_argument("--mc-samples", dest="mc_samples", type=int)
    p_asym.add_argument("--mc-seed", dest="mc_seed", type=int)
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    resolved = dict(COMMAND_DEFAULTS[command])
    config_file = getattr(args, "config_file", None)
    if config_file:
        try:
            with open(config_file) as fh:
                loaded = json.load(fh)
        except OSError as exc:
            raise ValidationError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"config JSON parse error at line {exc.lineno}, column "
                f"{exc.colno}: {exc.msg}") from exc
        if not isinstance(loaded, dict):
            raise ValidationError("config file must hold a JSON object")
        for key, value in loaded.items():
            key = key.replace("-", "_")
            if key not in resolved:
                raise ValidationError(
                    f"config key {key!r} unknown for command {command!r}")
            resolved[key] = value
    for key, value in vars(args).items():
        if key in resolved and value is not None:
            resolved[key] = value
    if resolved.get("output_dir") is None:
        resolved["output_dir"] = os.environ.get(OUTPUT_DIR_ENV)
    return resolved


@functools.lru_cache(maxsize=8)
def _cached_pilot(geometry_name: str, pilot_size: int) -> StrategyTree:
    return optimize_one_step_adaptive(Geometry.parse(geometry_name),
                                      pilot_size).strategy


def _optimal_n2_tree(geometry: Geometry) -> StrategyTree:
    if geometry is Geometry.PLANAR:
        root, branch = np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    else:
        root, branch = np.array([0.0, 0.0, 1.0]), np.array([1.0, 0.0, 0.0])
    return StrategyTree(geometry, 2, {(): root, (0,): branch.copy(),
                                      (1,): branch.copy()})


def build_strategy(cfg: dict):
    geometry = Geometry.parse(cfg["geometry"])
    if cfg.get("strategy_file"):
        try:
            text = Path(cfg["strategy_file"]).read_text()
        except OSError as exc:
            raise ValidationError(f"cannot read strategy file: {exc}") from exc
        return StrategyTree.from_json(text)
    builtin = cfg.get("builtin")
    if builtin is None:
        raise ValidationError("pass --builtin or --strategy-file")
    if builtin == "fixed-axes":
        return make_fixed_axes(geometry, int(cfg["per_axis"]))
    if builtin == "optimal-n2":
        return _optimal_n2_tree(geometry)
    if builtin == "optimal-n3":
        if geometry is Geometry.PLANAR:
            raise ValidationError(
                "optimal-n3 needs three orthogonal axes; use full geometry")
        return tree_from_fixed(make_fixed_axes(geometry, 1))
    if builtin == "n4-ansatz":
        if geometry is Geometry.PLANAR:
            raise ValidationError("n4-ansatz is a full-geometry strategy")
        return n4_ansatz_tree(float(cfg["alpha"]), float(cfg["beta"]),
                              float(cfg["gamma"]))
    if builtin == "two-stage":
        copies, pilot_size = int(cfg["n"]), int(cfg["n0"])
        pilot = _cached_pilot(geometry.value, pilot_size)
        return make_two_stage(geometry, copies, pilot_size,
                              float(cfg["lam"]), pilot)
    raise ValidationError(f"unknown builtin {builtin!r}")


def _output_dir(cfg: dict) -> Path | None:
    if cfg.get("output_dir"):
        path = Path(cfg["output_dir"])
        path.mkdir(parents=True, exist_ok=True)
        return path
    return None


def _write(path: Path, text: str) -> None:
    path.write_text(text)


def _emit(cfg: dict, payload: dict, csv_text: str | None,
          human_lines: list[str]) -> None:
    fmt = cfg["format"]
    if fmt == "json":
        print(json.dumps(payload, indent=2))
    elif fmt == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        for line in human_lines:
            print(line)


def cmd_evaluate(cfg: dict) -> int:
    strategy = build_strategy(cfg)
    guess = GuessRule.parse(cfg["guess"])
    geometry = strategy.geometry
    copies = strategy.copies
    degree = cfg["degree"] if cfg.get("degree") else copies + 1
    rule = make_quadrature(geometry, int(degree))
    if isinstance(strategy, StrategyTree):
        report = fidelity_exact_tree(strategy, guess, rule)
    elif isinstance(strategy, FixedStrategy):
        report = fidelity_exact_aggregated(strategy, guess, rule)
    else:
        report = fidelity_exact_two_stage(strategy, rule)
    payload = {"config": cfg, "report": report.to_json_obj()}
    out = _output_dir(cfg)
    if out is not None:
        _write(out / "evaluate_report.json", json.dumps(payload, indent=2))
        _write(out / "evaluate_report.csv", report.to_csv())
        if cfg["plot"]:
            from .plots import plot_branch_report

            plot_branch_report(report, out / "evaluate_report.png")
    _emit(cfg, payload, report.to_csv(), [
        f"F = {report.F!r}",
        f"N = {report.N}, geometry = {report.geometry.value}, "
        f"method = {report.method}, degree = {report.quadrature_degree}",
        f"branches = {len(report.per_branch)}",
    ])
    return 0


def _strategy_angles(tree: StrategyTree) -> list[dict]:
    rows = []
    for h in sorted(tree.directions, key=lambda h: (len(h),
                                                    history_to_int(h))):
        polar, azimuth = vector_to_angles(tree.geometry, tree.directions[h])
        rows.append({"history": history_to_bitstring(h), "polar": polar,
                     "azimuth": azimuth,
                     "direction": [float(x) for x in tree.directions[h]]})
    return rows


def cmd_optimize(cfg: dict) -> int:
    geometry = Geometry.parse(cfg["geometry"])
    copies = int(cfg["n"])
    if copies > OPTIMIZE_DEFAULT_BUDGET and not cfg["allow_large"]:
        raise ValidationError(
            f"N = {copies} exceeds the default budget "
            f"{OPTIMIZE_DEFAULT_BUDGET}; pass --allow-large to acknowledge")
    opt_cfg = OptimizationConfig(
        max_iterations=int(cfg["max_iter"]), f_tolerance=float(cfg["f_tol"]),
        restarts=int(cfg["restarts"]), seed=int(cfg["seed"]),
        gauge=Gauge(cfg["gauge"]))
    if cfg["mode"] == "one-step":
        result = optimize_one_step_adaptive(geometry, copies, opt_cfg)
    else:
        result = optimize_tree(geometry, copies, OPTIMAL_GUESS, opt_cfg)
    payload = {
        "config": cfg,
        "result": {
            "F": result.F, "N": copies, "geometry": geometry.value,
            "mode": cfg["mode"], "converged": result.converged,
            "iterations": result.iterations,
            "best_restart": result.best_restart,
            "angles": _strategy_angles(result.strategy),
        },
    }
    out = _output_dir(cfg)
    if out is not None:
        _write(out / "optimize_result.json", json.dumps(payload, indent=2))
        table_path = out / "fidelity_table.csv"
        is_new = not table_path.exists()
        with open(table_path, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            if is_new:
                writer.writerow(["N", "F", "geometry", "mode", "converged",
                                 "iterations", "restarts", "seed"])
            writer.writerow([copies, repr(result.F), geometry.value,
                             cfg["mode"], result.converged,
                             result.iterations, cfg["restarts"], cfg["seed"]])
        if cfg["plot"]:
            rows = _read_table_rows(table_path, geometry.value, cfg["mode"])
            if rows:
                from .plots import plot_fidelity_table

                plot_fidelity_table(rows, out / "fidelity_table.png")
    _emit(cfg, payload, None, [
        f"F = {result.F!r}",
        f"N = {copies}, mode = {cfg['mode']}, converged = {result.converged},"
        f" sweeps = {result.iterations}, best restart = "
        f"{result.best_restart}",
    ])
    return 0


def _read_table_rows(path: Path, geometry: str,
                     mode: str) -> list[tuple[int, float]]:
    rows = []
    with open(path, newline="") as fh:
        for record in csv.DictReader(fh):
            if record["geometry"] == geometry and record["mode"] == mode:
                rows.append((int(record["N"]), float(record["F"])))
    best: dict[int, float] = {}
    for n, f in rows:
        best[n] = max(best.get(n, 0.0), f)
    return sorted(best.items())


def cmd_simulate(cfg: dict) -> int:
    strategy = build_strategy(cfg)
    guess = GuessRule.parse(cfg["guess"])
    mc_cfg = McConfig(int(cfg["samples"]), int(cfg["seed"]),
                      int(cfg["batch_size"]))
    result = simulate_fidelity(strategy, guess, mc_cfg,
                               trace=bool(cfg["trace"]))
    payload = {"config": cfg, "result": result.to_json_obj()}
    out = _output_dir(cfg)
    if out is not None:
        _write(out / "simulate_result.json", json.dumps(payload, indent=2))
        if result.trace is not None:
            buf = io.StringIO()
            writer = csv.writer(buf, lineterminator="\n")
            writer.writerow(["n_x", "n_y", "n_z", "outcome", "guess_x",
                             "guess_y", "guess_z", "fidelity"])
            for row in result.trace:
                writer.writerow([repr(float(v)) for v in row.state]
                                + [row.outcome]
                                + [repr(float(v)) for v in row.guess]
                                + [repr(row.fidelity)])
            _write(out / "simulate_trace.csv", buf.getvalue())
    _emit(cfg, payload, None, [
        f"F_hat = {result.mean!r} +- {result.stderr!r}",
        f"samples = {result.samples}, seed = {result.seed}",
    ])
    return 0


def cmd_asymptotics(cfg: dict) -> int:
    scheme = cfg["scheme"]
    grid = None
    if cfg.get("n_grid"):
        if isinstance(cfg["n_grid"], str):
            try:
                grid = tuple(int(tok) for tok in cfg["n_grid"].split(","))
            except ValueError:
                raise ValidationError(
                    f"--n-grid must be comma-separated integers, got "
                    f"{cfg['n_grid']!r}") from None
        else:
            grid = tuple(int(v) for v in cfg["n_grid"])
    series = asym.build_series(scheme, grid, mc_samples=int(cfg["mc_samples"]),
                               mc_seed=int(cfg["mc_seed"]))
    comparison = asym.compare_cm_bound(series, order=int(cfg["order"]))
    payload = {"config": cfg, "summary": comparison.to_json_obj(),
               "series": [{"N": e.copies, "F": e.fidelity,
                           "c_N": e.coefficient, "stderr": e.stderr}
                          for e in series.entries]}
    out = _output_dir(cfg)
    if out is not None:
        _write(out / f"asymptotics_{scheme}.csv", series.to_csv())
        _write(out / f"asymptotics_{scheme}_summary.json",
               json.dumps(payload, indent=2))
        if cfg["plot"]:
            from .plots import plot_coefficient_series

            plot_coefficient_series(series, comparison,
                                    out / f"asymptotics_{scheme}.png")
    _emit(cfg, payload, series.to_csv(), [
        f"scheme = {scheme}",
        f"c_extrapolated = {comparison.c_extrapolated!r} "
        f"(expected {comparison.expected_c!r})",
        f"cm_coefficient = {comparison.cm_coefficient!r}, ratio = "
        f"{comparison.ratio!r}",
        f"saturates_cm = {comparison.saturates_cm}, pass = "
        f"{comparison.passed}",
    ])
    return 0


COMMANDS = {
    "evaluate": cmd_evaluate,
    "optimize": cmd_optimize,
    "simulate": cmd_simulate,
    "asymptotics": cmd_asymptotics,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args.command, args)
        return COMMANDS[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ResourceLimitError as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return 3
    except LoccestError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
