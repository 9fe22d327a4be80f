"""Command-line front end.

Subcommands: simulate, estimate, bench, converge, eigscan, compare.
Flags may come from a flat key=value config file (--config); explicit flags
override the file. Exit codes: 0 success, 2 configuration/input error,
1 runtime estimation error. Diagnostics go to stderr, data to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bench import (
    EML_REFERENCE,
    AllPathsFailedError,
    BasisFactory,
    CsvSource,
    SimSource,
    Variant,
    compare_variants,
    convergence_study,
    eigscan,
    run_batch,
    write_records_csv,
)
from .data import SnapshotCsvError, read_snapshot_csv, write_snapshot_csv
from .koopman import IllConditionedMassError, TruncationUnavailableError
from .models import get_model
from .objectives import OBJECTIVE_KINDS, make_objective_spec
from .optimize import GradientUnavailableError, OptimizerConfig, estimate
from .simulate import SimConfig, simulate_snapshots

__all__ = ["main", "build_parser"]


class ConfigError(Exception):
    pass


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated floats, got {text!r}")


def _int_list(text: str) -> list:
    try:
        return [int(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _int_range(text: str) -> list:
    """Either 'a:b' (inclusive) or a comma-separated list."""
    if ":" in text:
        lo, hi = text.split(":", 1)
        try:
            return list(range(int(lo), int(hi) + 1))
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected lo:hi, got {text!r}")
    return _int_list(text)


def _x0_value(text: str):
    if text == "stationary":
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"x0 must be a number or 'stationary', got {text!r}")


def _scheme(text: str) -> str:
    mapping = {"exact": "exact_ou", "exact_ou": "exact_ou", "milstein": "milstein"}
    if text not in mapping:
        raise argparse.ArgumentTypeError("scheme must be 'exact' or 'milstein'")
    return mapping[text]


def _add_sim_flags(p, with_paths=True):
    p.add_argument("--theta", type=_float_list, required=True, help="true parameters, comma separated")
    p.add_argument("--T", type=int, required=True, dest="n_points", help="snapshot pairs per path")
    p.add_argument("--dt", type=float, required=True, help="snapshot spacing")
    if with_paths:
        p.add_argument("--paths", type=int, default=1, help="number of sample paths")
    p.add_argument("--x0", type=_x0_value, default=0.0, help="initial state or 'stationary'")
    p.add_argument("--scheme", type=_scheme, default="exact_ou")
    p.add_argument("--internal-dt", type=float, default=None, help="Milstein sub-step")


def _add_basis_flags(p):
    p.add_argument("--basis", choices=["rbf", "chebyshev", "legendre"], default="rbf")
    p.add_argument("--n", type=int, default=3, dest="n_basis", help="number of basis functions")
    p.add_argument("--rbf-mode", choices=["data", "fixed"], default="data")


def _add_optimizer_flags(p):
    p.add_argument("--objective", choices=list(OBJECTIVE_KINDS), default="frobenius")
    p.add_argument("--trunc", type=int, default=None, dest="j_trunc",
                   help="eigen-truncation rank J (frobenius objective)")
    p.add_argument("--line-search", choices=["backtracking", "hager-zhang"], default=None)
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)


def _add_common(p):
    p.add_argument("--config", default=None, help="flat key=value file; flags override")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes (default: hardware count)")
    p.add_argument("--out", default=None, help="output path or prefix")
    p.add_argument("--format", choices=["json", "csv"], default="json")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="koopsde",
        description="SDE parameter estimation by Koopman matrix matching",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate snapshot data to CSV")
    p.add_argument("--model", choices=["ou", "bmr"], required=True)
    _add_sim_flags(p)
    _add_common(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("estimate", help="estimate parameters from a snapshot CSV")
    p.add_argument("--model", choices=["ou", "bmr"], default="ou")
    p.add_argument("--data", required=True, help="snapshot CSV (header path_id,index,x,y)")
    p.add_argument("--dt", type=float, default=None,
                   help="snapshot spacing; defaults to the CSV sidecar value")
    p.add_argument("--init", type=_float_list, required=True, help="initial parameter guess")
    _add_basis_flags(p)
    _add_optimizer_flags(p)
    p.add_argument("--failure-rule", choices=["none", "abs_greater_one"], default="none")
    _add_common(p)
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("bench", help="per-path batch statistics (bias/RMSE/failures)")
    p.add_argument("--model", choices=["ou", "bmr"], required=True)
    p.add_argument("--data", default=None, help="ingest CSV instead of simulating")
    _add_sim_flags(p)
    p.add_argument("--init", type=_float_list, default=None, help="default: the true theta")
    _add_basis_flags(p)
    _add_optimizer_flags(p)
    p.add_argument("--failure-rule", choices=["none", "abs_greater_one"],
                   default="abs_greater_one")
    _add_common(p)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("converge", help="RMSE against data amount T = base * 2^j")
    p.add_argument("--model", choices=["ou", "bmr"], required=True)
    p.add_argument("--j-list", type=_int_range, default=[0, 1, 2, 3, 4])
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--base-T", type=int, default=500, dest="base_points")
    p.add_argument("--theta", type=_float_list, required=True)
    p.add_argument("--dt", type=float, required=True)
    p.add_argument("--x0", type=_x0_value, default=None)
    p.add_argument("--scheme", type=_scheme, default="exact_ou")
    p.add_argument("--internal-dt", type=float, default=None)
    p.add_argument("--init", type=_float_list, default=None)
    _add_basis_flags(p)
    _add_optimizer_flags(p)
    p.add_argument("--failure-rule", choices=["none", "abs_greater_one"],
                   default="abs_greater_one")
    p.add_argument("--plot-data", default=None, help="write figure-ready long CSV here")
    _add_common(p)
    p.set_defaults(func=_cmd_converge)

    p = sub.add_parser("eigscan", help="estimate over an (N, J) eigen-truncation grid")
    p.add_argument("--model", choices=["ou", "bmr"], required=True)
    p.add_argument("--data", default=None, help="ingest CSV instead of simulating")
    _add_sim_flags(p, with_paths=False)
    p.add_argument("--n-range", type=_int_range, required=True)
    p.add_argument("--j-range", type=_int_range, required=True)
    p.add_argument("--band", type=_float_list, default=[0.9, 1.1])
    p.add_argument("--init", type=_float_list, default=None)
    p.add_argument("--basis", choices=["rbf", "chebyshev", "legendre"], default="legendre")
    p.add_argument("--rbf-mode", choices=["data", "fixed"], default="fixed")
    _add_optimizer_flags(p)
    p.add_argument("--plot-data", default=None)
    _add_common(p)
    p.set_defaults(func=_cmd_eigscan)

    p = sub.add_parser("compare", help="paired comparison of objective variants")
    p.add_argument("--model", choices=["ou", "bmr"], required=True)
    p.add_argument("--variants", default="frobenius,constrained",
                   help="comma-separated objective kinds")
    _add_sim_flags(p)
    p.add_argument("--init", type=_float_list, default=None)
    _add_basis_flags(p)
    p.add_argument("--failure-rule", choices=["none", "abs_greater_one"],
                   default="abs_greater_one")
    p.add_argument("--fd-step", type=float, default=1e-6)
    p.add_argument("--grad-tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=200)
    _add_common(p)
    p.set_defaults(func=_cmd_compare)

    return parser


# ---------------------------------------------------------------------------
# config file handling


def _load_config(path: str) -> dict:
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}")
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _apply_config(parser: argparse.ArgumentParser, argv: list) -> None:
    """Install config-file values as subparser defaults so flags override them."""
    if "--config" not in argv:
        return
    path = argv[argv.index("--config") + 1] if argv.index("--config") + 1 < len(argv) else None
    if path is None:
        raise ConfigError("--config needs a file path")
    command = next((tok for tok in argv if not tok.startswith("-")), None)
    sub_actions = [a for a in parser._actions if isinstance(a, argparse._SubParsersAction)]
    if command is None or command not in sub_actions[0].choices:
        raise ConfigError("config requires a valid subcommand")
    sub = sub_actions[0].choices[command]
    known = {}
    for action in sub._actions:
        if action.dest == "help":
            continue
        known[action.dest] = action
        for opt in action.option_strings:
            known[opt.lstrip("-").replace("-", "_")] = action
    values = _load_config(path)
    defaults = {}
    for key, raw in values.items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
        action = known[key]
        try:
            defaults[action.dest] = action.type(raw) if action.type is not None else raw
        except (argparse.ArgumentTypeError, ValueError) as exc:
            raise ConfigError(f"config key {key!r}: {exc}")
        action.required = False
    sub.set_defaults(**defaults)


def _threads(args) -> int:
    if args.threads is not None:
        return max(1, args.threads)
    return os.cpu_count() or 1


def _info(msg: str) -> None:
    print(msg, file=sys.stderr)


def _write_json(obj, out_path):
    text = json.dumps(obj, indent=2)
    if out_path is None:
        print(text)
    else:
        Path(out_path).write_text(text + "\n")


# ---------------------------------------------------------------------------
# subcommands


def _sim_config(args, n_paths=None) -> SimConfig:
    return SimConfig(
        theta=np.asarray(args.theta, dtype=float),
        t_step=args.dt,
        n_points=args.n_points,
        n_paths=n_paths if n_paths is not None else getattr(args, "paths", 1),
        x0=args.x0,
        seed=args.seed,
        scheme=args.scheme,
        internal_dt=args.internal_dt,
    )


def _cmd_simulate(args) -> int:
    model = get_model(args.model)
    data = simulate_snapshots(model, _sim_config(args))
    if args.out is None:
        sys.stdout.write("path_id,index,x,y\n")
        for k in range(data.n_paths):
            sl = data.path_slice(k)
            for i, (xv, yv) in enumerate(zip(data.x[sl], data.y[sl])):
                sys.stdout.write(f"{k},{i},{float(xv)!r},{float(yv)!r}\n")
    else:
        write_snapshot_csv(data, args.out)
        _info(f"wrote {data.n_pairs} pairs over {data.n_paths} path(s) to {args.out}")
    return 0


def _cmd_estimate(args) -> int:
    model = get_model(args.model)
    data = read_snapshot_csv(args.data, t_step=args.dt)
    basis = BasisFactory(args.basis, args.n_basis, args.rbf_mode)(data.x)
    spec = make_objective_spec(args.objective, model, basis, data, j_trunc=args.j_trunc)
    cfg = OptimizerConfig(
        theta_init=np.asarray(args.init, dtype=float),
        line_search=args.line_search,
        fd_step=args.fd_step,
        grad_tol=args.grad_tol,
        max_iter=args.max_iter,
    )
    result = estimate(spec, cfg, failure_rule=args.failure_rule)
    _info(
        f"theta_hat={np.array2string(result.theta_hat, precision=6)} "
        f"objective={result.objective_value:.6e} converged={result.converged}"
    )
    if args.format == "csv" and args.out is not None:
        from .bench import PathRecord

        record = PathRecord(0, result.theta_hat, result.objective_value,
                            result.converged, result.failed, result.iterations,
                            result.wall_time)
        write_records_csv([record], args.out, model.dim_theta)
    else:
        _write_json(result.to_json(), args.out)
    return 0


def _source_from_args(args, model):
    if getattr(args, "data", None):
        return CsvSource(args.data, t_step=args.dt)
    return SimSource(
        model_name=model.name,
        theta=tuple(args.theta),
        t_step=args.dt,
        n_points=args.n_points,
        n_paths=args.paths,
        x0=args.x0,
        seed=args.seed,
        scheme=args.scheme,
        internal_dt=args.internal_dt,
    )


def _cmd_bench(args) -> int:
    model = get_model(args.model)
    source = _source_from_args(args, model)
    stats, records = run_batch(
        model,
        np.asarray(args.theta, dtype=float),
        source,
        BasisFactory(args.basis, args.n_basis, args.rbf_mode),
        objective=args.objective,
        n_paths=getattr(source, "n_paths", args.paths),
        theta_init=None if args.init is None else np.asarray(args.init, dtype=float),
        j_trunc=args.j_trunc,
        failure_rule=args.failure_rule,
        line_search=args.line_search,
        fd_step=args.fd_step,
        grad_tol=args.grad_tol,
        max_iter=args.max_iter,
        n_jobs=_threads(args),
    )
    _info(f"bias={stats.bias} rmse={stats.rmse} failures={stats.n_fail}/{stats.n_paths}")
    summary = stats.to_json()
    if model.name == "ou":
        summary["eml_reference"] = {k: list(v) for k, v in EML_REFERENCE.items()}
    if args.out is not None:
        write_records_csv(records, f"{args.out}.csv", model.dim_theta)
        _write_json(summary, f"{args.out}.json")
    else:
        _write_json(summary, None)
    return 0


def _cmd_converge(args) -> int:
    model = get_model(args.model)
    result = convergence_study(
        model,
        np.asarray(args.theta, dtype=float),
        args.j_list,
        args.replicates,
        BasisFactory(args.basis, args.n_basis, args.rbf_mode),
        objective=args.objective,
        t_step=args.dt,
        base_points=args.base_points,
        x0=args.x0,
        seed=args.seed,
        scheme=args.scheme,
        internal_dt=args.internal_dt,
        theta_init=None if args.init is None else np.asarray(args.init, dtype=float),
        j_trunc=args.j_trunc,
        failure_rule=args.failure_rule,
        line_search=args.line_search,
        fd_step=args.fd_step,
        grad_tol=args.grad_tol,
        max_iter=args.max_iter,
        n_jobs=_threads(args),
    )
    for j, (slope, se) in enumerate(zip(result.slopes, result.slope_se)):
        _info(f"theta_{j + 1}: slope {slope:+.3f} (se {se:.3f})")
    if args.plot_data is not None:
        result.write_plot_csv(args.plot_data)
    if args.out is not None:
        _write_json(result.to_json(), f"{args.out}.json")
        result.write_plot_csv(f"{args.out}.csv")
    else:
        _write_json(result.to_json(), None)
    return 0


def _cmd_eigscan(args) -> int:
    model = get_model(args.model)
    if args.data:
        data = read_snapshot_csv(args.data, t_step=args.dt)
    else:
        data = simulate_snapshots(model, _sim_config(args, n_paths=1))
    grid = eigscan(
        model,
        np.asarray(args.theta, dtype=float),
        data,
        args.basis,
        args.n_range,
        args.j_range,
        objective=args.objective,
        theta_init=None if args.init is None else np.asarray(args.init, dtype=float),
        band=tuple(args.band),
        rbf_mode=args.rbf_mode,
        line_search=args.line_search,
        fd_step=args.fd_step,
        grad_tol=args.grad_tol,
        max_iter=args.max_iter,
        n_jobs=_threads(args),
    )
    n_in = sum(1 for v in grid.in_band.values() if v)
    _info(f"{len(grid.estimates)} cells estimated, {n_in} inside band {grid.band}")
    if args.plot_data is not None:
        grid.write_plot_csv(args.plot_data)
    if args.out is not None:
        _write_json(grid.to_json(), f"{args.out}.json")
        grid.write_plot_csv(f"{args.out}.csv")
    else:
        _write_json(grid.to_json(), None)
    return 0


def _cmd_compare(args) -> int:
    model = get_model(args.model)
    kinds = [v.strip() for v in args.variants.split(",") if v.strip()]
    for kind in kinds:
        if kind not in OBJECTIVE_KINDS:
            raise ConfigError(f"unknown objective variant {kind!r}")
    variants = [Variant(name=kind, objective=kind) for kind in kinds]
    source = _source_from_args(args, model)
    table = compare_variants(
        model,
        np.asarray(args.theta, dtype=float),
        source,
        BasisFactory(args.basis, args.n_basis, args.rbf_mode),
        variants,
        n_paths=args.paths,
        theta_init=None if args.init is None else np.asarray(args.init, dtype=float),
        failure_rule=args.failure_rule,
        fd_step=args.fd_step,
        grad_tol=args.grad_tol,
        max_iter=args.max_iter,
        n_jobs=_threads(args),
    )
    summary = {}
    for name, (stats, records) in table.items():
        _info(f"{name}: rmse={stats.rmse} failures={stats.n_fail}/{stats.n_paths}")
        summary[name] = stats.to_json()
        if args.out is not None:
            write_records_csv(records, f"{args.out}.{name}.csv", model.dim_theta)
    _write_json(summary, None if args.out is None else f"{args.out}.json")
    return 0


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    try:
        _apply_config(parser, argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (SnapshotCsvError, FileNotFoundError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return 2
    except (IllConditionedMassError, TruncationUnavailableError,
            GradientUnavailableError, AllPathsFailedError) as exc:
        print(f"estimation error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
