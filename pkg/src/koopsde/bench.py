"""Benchmark harness: batch estimation, convergence studies, eigen-truncation
grids, and paired objective comparisons.

Work is split path-by-path (or grid-cell by grid-cell) and merged in task
order, so results do not depend on the worker count. Every task derives its
random stream from the task index alone.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field, replace

import numpy as np
from joblib import Parallel, delayed

from .basis import BasisSet, build_basis
from .data import SnapshotData, read_snapshot_csv
from .koopman import (
    EigenTruncation,
    IllConditionedMassError,
    TruncationUnavailableError,
)
from .models import SdeModel, get_model
from .objectives import make_objective_spec
from .optimize import GradientUnavailableError, OptimizerConfig, estimate
from .simulate import SimConfig, simulate_path

__all__ = [
    "AllPathsFailedError",
    "BatchStats",
    "PathRecord",
    "SimSource",
    "CsvSource",
    "BasisFactory",
    "Variant",
    "ConvergenceResult",
    "GridResult",
    "compute_batch_stats",
    "run_batch",
    "convergence_study",
    "eigscan",
    "compare_variants",
    "write_records_csv",
    "read_records_csv",
]


class AllPathsFailedError(RuntimeError):
    def __init__(self, n_fail: int):
        super().__init__(f"all {n_fail} paths were classified as failures")
        self.n_fail = n_fail


# Exact-maximum-likelihood baseline for the OU batch protocol
# (theta* = (0.2, 0.08, 0.03), 501 points at spacing 1/12). Quoted reference
# values from the external comparison study; never recomputed here.
EML_REFERENCE = {
    "bias": (0.1101, -0.0006, 0.0001),
    "rmse": (0.1780, 0.0227, 0.0010),
}


@dataclass
class BatchStats:
    """Per-parameter bias and RMSE over the non-failed paths."""

    bias: np.ndarray
    rmse: np.ndarray
    n_fail: int
    n_paths: int
    theta_true: np.ndarray

    def to_json(self) -> dict:
        return {
            "bias": [float(v) for v in self.bias],
            "rmse": [float(v) for v in self.rmse],
            "n_fail": int(self.n_fail),
            "n_paths": int(self.n_paths),
            "theta_true": [float(v) for v in self.theta_true],
        }


@dataclass
class PathRecord:
    path_id: int
    theta_hat: np.ndarray
    objective: float
    converged: bool
    failed: bool
    iterations: int
    wall_time: float


def compute_batch_stats(records, theta_true) -> BatchStats:
    theta_true = np.asarray(theta_true, dtype=float)
    ok = [r for r in records if not r.failed]
    if not ok:
        raise AllPathsFailedError(len(records))
    errors = np.array([r.theta_hat for r in ok]) - theta_true
    return BatchStats(
        bias=errors.mean(axis=0),
        rmse=np.sqrt((errors**2).mean(axis=0)),
        n_fail=len(records) - len(ok),
        n_paths=len(records),
        theta_true=theta_true,
    )


# ---------------------------------------------------------------------------
# data sources and basis construction (picklable for worker processes)


@dataclass(frozen=True)
class SimSource:
    """Per-path simulated data; path k is a pure function of (seed, k)."""

    model_name: str
    theta: tuple
    t_step: float
    n_points: int
    n_paths: int
    x0: float | str = 0.0
    seed: int = 0
    scheme: str = "exact_ou"
    internal_dt: float | None = None

    def config(self) -> SimConfig:
        return SimConfig(
            theta=np.asarray(self.theta, dtype=float),
            t_step=self.t_step,
            n_points=self.n_points,
            n_paths=self.n_paths,
            x0=self.x0,
            seed=self.seed,
            scheme=self.scheme,
            internal_dt=self.internal_dt,
        )

    def __call__(self, k: int) -> SnapshotData:
        return simulate_path(get_model(self.model_name), self.config(), k)


class CsvSource:
    """Snapshot CSV ingest; each stored path becomes one task."""

    def __init__(self, csv_path, t_step: float | None = None):
        self.csv_path = str(csv_path)
        self.data = read_snapshot_csv(csv_path, t_step=t_step)

    @property
    def n_paths(self) -> int:
        return self.data.n_paths

    def __call__(self, k: int) -> SnapshotData:
        return self.data.path(k)


@dataclass(frozen=True)
class BasisFactory:
    """Builds the per-path basis; optionally frozen to a reference basis."""

    family: str
    n_basis: int
    rbf_mode: str = "data"
    frozen: BasisSet | None = None

    def __call__(self, x_data) -> BasisSet:
        if self.frozen is not None:
            return self.frozen
        return build_basis(self.family, self.n_basis, x_data=x_data, rbf_mode=self.rbf_mode)

    def freeze_from(self, x_data) -> "BasisFactory":
        return replace(self, frozen=self(x_data))


# ---------------------------------------------------------------------------
# batch estimation


def _opt_config(theta_init, line_search, fd_step, grad_tol, max_iter) -> OptimizerConfig:
    return OptimizerConfig(
        theta_init=theta_init,
        line_search=line_search,
        fd_step=fd_step,
        grad_tol=grad_tol,
        max_iter=max_iter,
    )


def _estimate_one(source, k, model, basis_factory, objective, j_trunc, opt_cfg, failure_rule):
    """One path: simulate/ingest, capture, minimise. Returns (record, data hash)."""
    data = source(k)
    digest = hashlib.sha256(data.x.tobytes() + data.y.tobytes()).hexdigest()
    try:
        basis = basis_factory(data.x)
        spec = make_objective_spec(objective, model, basis, data, j_trunc=j_trunc)
        res = estimate(spec, opt_cfg, failure_rule=failure_rule)
    except (IllConditionedMassError, TruncationUnavailableError, GradientUnavailableError):
        record = PathRecord(
            path_id=k,
            theta_hat=np.full(model.dim_theta, np.nan),
            objective=math.inf,
            converged=False,
            failed=True,
            iterations=0,
            wall_time=0.0,
        )
        return record, digest
    record = PathRecord(
        path_id=k,
        theta_hat=res.theta_hat,
        objective=res.objective_value,
        converged=res.converged,
        failed=res.failed,
        iterations=res.iterations,
        wall_time=res.wall_time,
    )
    return record, digest


def run_batch(
    model: SdeModel,
    theta_true,
    source,
    basis_factory: BasisFactory,
    objective: str = "frobenius",
    n_paths: int | None = None,
    theta_init=None,
    j_trunc: int | None = None,
    failure_rule: str = "abs_greater_one",
    line_search: str | None = None,
    fd_step: float = 1e-6,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
    n_jobs: int = 1,
):
    """Estimate every path independently and aggregate bias/RMSE statistics.

    ``theta_init`` defaults to the true parameter, matching the batch
    protocol the statistics are reported for.
    """
    theta_true = model.check_theta(theta_true)
    init = theta_true if theta_init is None else model.check_theta(theta_init)
    if n_paths is None:
        n_paths = source.n_paths
    opt_cfg = _opt_config(init, line_search, fd_step, grad_tol, max_iter)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_estimate_one)(
            source, k, model, basis_factory, objective, j_trunc, opt_cfg, failure_rule
        )
        for k in range(n_paths)
    )
    records = [rec for rec, _ in results]
    return compute_batch_stats(records, theta_true), records


# ---------------------------------------------------------------------------
# convergence study


@dataclass
class ConvergenceResult:
    t_values: np.ndarray
    rmse: np.ndarray  # (n_T, dim_theta) over non-failed replicates
    n_fail: np.ndarray  # (n_T,)
    slopes: np.ndarray  # (dim_theta,) log-log least squares
    slope_se: np.ndarray
    theta_true: np.ndarray
    estimates: np.ndarray = field(repr=False, default=None)  # (n_T, n_rep, dim)
    failed: np.ndarray = field(repr=False, default=None)  # (n_T, n_rep)

    def to_json(self) -> dict:
        return {
            "t_values": [int(t) for t in self.t_values],
            "rmse": self.rmse.tolist(),
            "n_fail": [int(v) for v in self.n_fail],
            "slopes": [float(s) for s in self.slopes],
            "slope_se": [float(s) for s in self.slope_se],
            "theta_true": [float(v) for v in self.theta_true],
        }

    def write_plot_csv(self, path) -> None:
        """Long-format CSV with one (T, parameter) RMSE per row."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["t", "param", "rmse"])
            for i, t in enumerate(self.t_values):
                for j in range(self.rmse.shape[1]):
                    writer.writerow([int(t), f"theta_{j + 1}", repr(float(self.rmse[i, j]))])


def loglog_slope(t_values, values):
    """Least-squares slope of log(values) against log(t), with its SE.

    Returns (nan, nan) when a value is zero (noiseless degenerate studies).
    """
    x = np.log(np.asarray(t_values, dtype=float))
    with np.errstate(divide="ignore"):
        y = np.log(np.asarray(values, dtype=float))
    if not np.all(np.isfinite(y)):
        return math.nan, math.nan
    xc = x - x.mean()
    spread = float(np.dot(xc, xc))
    if spread == 0.0:
        return math.nan, math.nan
    slope = float(np.dot(xc, y - y.mean()) / spread)
    intercept = y.mean() - slope * x.mean()
    resid = y - (intercept + slope * x)
    dof = max(len(x) - 2, 1)
    se = float(np.sqrt(np.dot(resid, resid) / dof / spread))
    return slope, se


def _converge_one(model, cfg_max, r, t_values, basis_factory, objective, j_trunc,
                  opt_cfg, failure_rule):
    """One replicate: a single long path, estimated on nested prefixes."""
    full = simulate_path(model, cfg_max, r)
    thetas = np.full((len(t_values), model.dim_theta), np.nan)
    failed = np.ones(len(t_values), dtype=bool)
    for i, t in enumerate(t_values):
        data = full.prefix(int(t))
        try:
            basis = basis_factory(data.x)
            spec = make_objective_spec(objective, model, basis, data, j_trunc=j_trunc)
            res = estimate(spec, opt_cfg, failure_rule=failure_rule)
        except (IllConditionedMassError, TruncationUnavailableError, GradientUnavailableError):
            continue
        thetas[i] = res.theta_hat
        failed[i] = res.failed
    return thetas, failed


def convergence_study(
    model: SdeModel,
    theta_true,
    j_values,
    n_replicates: int,
    basis_factory: BasisFactory,
    objective: str = "frobenius",
    t_step: float = 1.0 / 12.0,
    base_points: int = 500,
    x0: float | str | None = None,
    seed: int = 0,
    scheme: str = "exact_ou",
    internal_dt: float | None = None,
    theta_init=None,
    j_trunc: int | None = None,
    failure_rule: str = "abs_greater_one",
    line_search: str | None = None,
    fd_step: float = 1e-6,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
    n_jobs: int = 1,
) -> ConvergenceResult:
    """RMSE against data amount T = base_points * 2^j, with log-log slopes.

    Each replicate is one long path; the smaller data amounts are its nested
    prefixes. ``x0`` defaults to the long-term mean of the process.
    """
    theta_true = model.check_theta(theta_true)
    init = theta_true if theta_init is None else model.check_theta(theta_init)
    if x0 is None:
        x0 = float(theta_true[1]) if model.name == "ou" else 0.0
    t_values = np.array([base_points * 2**j for j in j_values], dtype=int)
    cfg_max = SimConfig(
        theta=theta_true,
        t_step=t_step,
        n_points=int(t_values.max()),
        n_paths=n_replicates,
        x0=x0,
        seed=seed,
        scheme=scheme,
        internal_dt=internal_dt,
    )
    opt_cfg = _opt_config(init, line_search, fd_step, grad_tol, max_iter)
    results = Parallel(n_jobs=n_jobs)(
        delayed(_converge_one)(
            model, cfg_max, r, t_values, basis_factory, objective, j_trunc,
            opt_cfg, failure_rule,
        )
        for r in range(n_replicates)
    )
    estimates = np.stack([thetas for thetas, _ in results], axis=1)  # (n_T, n_rep, dim)
    failed = np.stack([flags for _, flags in results], axis=1)  # (n_T, n_rep)

    dim = model.dim_theta
    rmse = np.empty((len(t_values), dim))
    n_fail = np.empty(len(t_values), dtype=int)
    for i in range(len(t_values)):
        ok = ~failed[i]
        n_fail[i] = int(np.count_nonzero(failed[i]))
        if not ok.any():
            raise AllPathsFailedError(n_fail[i])
        err = estimates[i, ok] - theta_true
        rmse[i] = np.sqrt((err**2).mean(axis=0))

    slopes = np.empty(dim)
    slope_se = np.empty(dim)
    for j in range(dim):
        slopes[j], slope_se[j] = loglog_slope(t_values, rmse[:, j])
    return ConvergenceResult(
        t_values=t_values,
        rmse=rmse,
        n_fail=n_fail,
        slopes=slopes,
        slope_se=slope_se,
        theta_true=theta_true,
        estimates=estimates,
        failed=failed,
    )


# ---------------------------------------------------------------------------
# eigen-truncation grid


@dataclass
class GridResult:
    n_values: list
    j_values: list
    band: tuple
    estimates: dict  # (n, j) -> theta_hat, only for j <= n
    in_band: dict  # (n, j) -> bool
    errors: dict  # (n, j) -> str, cells whose estimation failed

    def to_json(self) -> dict:
        return {
            "n_values": [int(n) for n in self.n_values],
            "j_values": [int(j) for j in self.j_values],
            "band": [float(b) for b in self.band],
            "cells": [
                {
                    "n": int(n),
                    "j": int(j),
                    "theta_hat": [float(v) for v in th],
                    "in_band": bool(self.in_band[(n, j)]),
                }
                for (n, j), th in sorted(self.estimates.items())
            ],
            "errors": {f"{n},{j}": msg for (n, j), msg in sorted(self.errors.items())},
        }

    def write_plot_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "j", "param", "estimate", "in_band"])
            for (n, j), th in sorted(self.estimates.items()):
                for p, v in enumerate(th):
                    writer.writerow([n, j, f"theta_{p + 1}", repr(float(v)),
                                     int(self.in_band[(n, j)])])


def _eigscan_one_n(model, data, basis_family, rbf_mode, n, j_values, objective,
                   opt_cfg, band):
    """All admissible J cells for one basis size; assembly happens once."""
    cells = []
    try:
        basis = build_basis(basis_family, int(n), x_data=data.x, rbf_mode=rbf_mode)
        spec_full = make_objective_spec(objective, model, basis, data)
    except (IllConditionedMassError, ValueError) as exc:
        return [((int(n), int(j)), None, f"{type(exc).__name__}: {exc}")
                for j in j_values if j <= n]
    decomp = None
    for j in j_values:
        if j > n:
            continue
        key = (int(n), int(j))
        try:
            if j == n:
                spec = spec_full
            else:
                if decomp is None:
                    decomp = EigenTruncation(spec_full.koop.edmd)
                spec = replace(
                    spec_full,
                    target=decomp.truncate(int(j)),
                    projector=decomp.projector(int(j)),
                    j_trunc=int(j),
                )
            res = estimate(spec, opt_cfg)
        except (IllConditionedMassError, TruncationUnavailableError,
                GradientUnavailableError) as exc:
            cells.append((key, None, f"{type(exc).__name__}: {exc}"))
            continue
        cells.append((key, res.theta_hat, None))
    return cells


def eigscan(
    model: SdeModel,
    theta_true,
    data: SnapshotData,
    basis_family: str,
    n_values,
    j_values,
    objective: str = "frobenius",
    theta_init=None,
    band: tuple = (0.9, 1.1),
    rbf_mode: str = "fixed",
    line_search: str | None = None,
    fd_step: float = 1e-6,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
    n_jobs: int = 1,
) -> GridResult:
    """One estimate per (N, J) cell with J <= N, on a shared dataset."""
    theta_true = model.check_theta(theta_true)
    init = theta_true if theta_init is None else model.check_theta(theta_init)
    opt_cfg = _opt_config(init, line_search, fd_step, grad_tol, max_iter)
    per_n = Parallel(n_jobs=n_jobs)(
        delayed(_eigscan_one_n)(
            model, data, basis_family, rbf_mode, n, list(j_values), objective,
            opt_cfg, band,
        )
        for n in n_values
    )
    estimates, in_band, errors = {}, {}, {}
    lo, hi = band
    for cells in per_n:
        for key, theta_hat, err in cells:
            if err is not None:
                errors[key] = err
                continue
            estimates[key] = theta_hat
            in_band[key] = bool(np.all((theta_hat > lo) & (theta_hat < hi)))
    return GridResult(
        n_values=list(n_values),
        j_values=list(j_values),
        band=band,
        estimates=estimates,
        in_band=in_band,
        errors=errors,
    )


# ---------------------------------------------------------------------------
# paired variant comparison


@dataclass(frozen=True)
class Variant:
    name: str
    objective: str = "frobenius"
    line_search: str | None = None
    j_trunc: int | None = None


def compare_variants(
    model: SdeModel,
    theta_true,
    source,
    basis_factory: BasisFactory,
    variants,
    n_paths: int | None = None,
    theta_init=None,
    failure_rule: str = "abs_greater_one",
    fd_step: float = 1e-6,
    grad_tol: float = 1e-8,
    max_iter: int = 200,
    n_jobs: int = 1,
) -> dict:
    """Run several variants against the same per-path datasets.

    The per-path data hashes must agree across variants; a mismatch means the
    pairing contract was broken and raises RuntimeError.
    """
    theta_true = model.check_theta(theta_true)
    init = theta_true if theta_init is None else model.check_theta(theta_init)
    if n_paths is None:
        n_paths = source.n_paths
    out = {}
    digests = {}
    for variant in variants:
        opt_cfg = _opt_config(init, variant.line_search, fd_step, grad_tol, max_iter)
        results = Parallel(n_jobs=n_jobs)(
            delayed(_estimate_one)(
                source, k, model, basis_factory, variant.objective,
                variant.j_trunc, opt_cfg, failure_rule,
            )
            for k in range(n_paths)
        )
        records = [rec for rec, _ in results]
        digests[variant.name] = [digest for _, digest in results]
        out[variant.name] = (compute_batch_stats(records, theta_true), records)
    reference = next(iter(digests.values()))
    for name, digest_list in digests.items():
        if digest_list != reference:
            raise RuntimeError(f"variant {name!r} saw different data than its peers")
    return out


# ---------------------------------------------------------------------------
# per-path record serialisation


def write_records_csv(records, path, dim_theta: int) -> None:
    header = (
        ["path_id"]
        + [f"theta_{j + 1}" for j in range(dim_theta)]
        + ["objective", "converged", "failed", "iters", "wall_time"]
    )
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for r in records:
            writer.writerow(
                [r.path_id]
                + [repr(float(v)) for v in r.theta_hat]
                + [repr(float(r.objective)), int(r.converged), int(r.failed),
                   r.iterations, repr(float(r.wall_time))]
            )


def read_records_csv(path) -> list:
    records = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        dim = sum(1 for name in header if name.startswith("theta_"))
        for row in reader:
            if not row:
                continue
            records.append(
                PathRecord(
                    path_id=int(row[0]),
                    theta_hat=np.array([float(v) for v in row[1 : 1 + dim]]),
                    objective=float(row[1 + dim]),
                    converged=bool(int(row[2 + dim])),
                    failed=bool(int(row[3 + dim])),
                    iterations=int(row[4 + dim]),
                    wall_time=float(row[5 + dim]),
                )
            )
    return records
