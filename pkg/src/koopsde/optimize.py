"""Quasi-Newton minimisation of the parameter objectives.

BFGS with finite-difference gradients and a choice of two line searches:
interpolating backtracking (default) and a Hager-Zhang style bracketing
search with approximate-Wolfe acceptance, which the constrained objective
needs to avoid divergence. Objectives may return +inf as an out-of-domain
sentinel; the line searches back off from such points.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .objectives import ObjectiveSpec, gmm_weight_update, objective_value, with_gmm_weight

__all__ = [
    "OptimizerConfig",
    "EstimateResult",
    "GradientUnavailableError",
    "fd_gradient",
    "minimize_bfgs",
    "estimate",
    "estimate_gmm_reweighted",
    "classify_failure",
]

LINE_SEARCHES = ("backtracking", "hager-zhang")
FAILURE_RULES = ("none", "abs_greater_one")


class GradientUnavailableError(RuntimeError):
    """Both finite-difference probes hit non-finite objective values."""


class _LineSearchFailure(Exception):
    pass


@dataclass
class OptimizerConfig:
    """Settings for :func:`estimate`.

    ``line_search=None`` resolves per objective kind: hager-zhang for the
    constrained objective, backtracking otherwise.
    """

    theta_init: np.ndarray
    line_search: str | None = None
    fd_step: float = 1e-6
    grad_tol: float = 1e-8
    max_iter: int = 200

    def __post_init__(self):
        self.theta_init = np.atleast_1d(np.asarray(self.theta_init, dtype=float))
        if self.theta_init.ndim != 1 or not np.all(np.isfinite(self.theta_init)):
            raise ValueError("theta_init must be a finite parameter vector")
        if self.fd_step <= 0 or self.grad_tol <= 0 or self.max_iter <= 0:
            raise ValueError("fd_step, grad_tol, and max_iter must be positive")
        if self.line_search is not None and self.line_search not in LINE_SEARCHES:
            raise ValueError(f"line_search must be one of {LINE_SEARCHES}")


@dataclass
class EstimateResult:
    theta_hat: np.ndarray
    objective_value: float
    iterations: int
    converged: bool
    failed: bool
    gradient_norm: float
    wall_time: float
    n_evals: int = 0

    def to_json(self) -> dict:
        return {
            "theta_hat": [float(v) for v in self.theta_hat],
            "objective_value": float(self.objective_value),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "failed": bool(self.failed),
            "gradient_norm": float(self.gradient_norm),
            "wall_time": float(self.wall_time),
            "n_evals": int(self.n_evals),
        }


def fd_gradient(func, theta, fd_step: float = 1e-6, f0: float | None = None) -> np.ndarray:
    """Central differences with per-coordinate step fd_step * max(1, |theta_j|).

    Falls back to a one-sided difference when a probe hits the +inf sentinel;
    raises :class:`GradientUnavailableError` when both sides are unusable.
    """
    theta = np.asarray(theta, dtype=float)
    if f0 is None:
        f0 = func(theta)
    if not np.isfinite(f0):
        raise ValueError("objective must be finite at the expansion point")
    grad = np.empty(theta.size)
    for j in range(theta.size):
        h = fd_step * max(1.0, abs(theta[j]))
        up = theta.copy()
        up[j] += h
        down = theta.copy()
        down[j] -= h
        f_up, f_down = func(up), func(down)
        if np.isfinite(f_up) and np.isfinite(f_down):
            grad[j] = (f_up - f_down) / (2.0 * h)
        elif np.isfinite(f_up):
            grad[j] = (f_up - f0) / h
        elif np.isfinite(f_down):
            grad[j] = (f0 - f_down) / h
        else:
            raise GradientUnavailableError(f"no finite probe along coordinate {j}")
    return grad


def _cubic_step(f0, g0, a1, f1, a0, f0b):
    """Minimiser of the cubic through (0, f0) with slope g0, (a1, f1), (a0, f0b)."""
    d1 = f1 - f0 - g0 * a1
    d2 = f0b - f0 - g0 * a0
    denom = a1**2 * a0**2 * (a1 - a0)
    if denom == 0:
        return math.nan
    ca = (a0**2 * d1 - a1**2 * d2) / denom
    cb = (-(a0**3) * d1 + a1**3 * d2) / denom
    if abs(ca) < 1e-300:
        return -g0 / (2.0 * cb) if cb != 0 else math.nan
    disc = cb * cb - 3.0 * ca * g0
    if disc < 0:
        return math.nan
    return (-cb + math.sqrt(disc)) / (3.0 * ca)


def _backtracking_interpolation(phi, phi0, dphi0, alpha0=1.0, c1=1e-4, max_probes=60):
    """Armijo backtracking, shrinking by quadratic then cubic interpolation."""
    alpha = alpha0
    f_cur = phi(alpha)
    prev = None
    for _ in range(max_probes):
        if np.isfinite(f_cur) and f_cur <= phi0 + c1 * alpha * dphi0:
            return alpha, f_cur
        if not np.isfinite(f_cur):
            new = 0.5 * alpha
        elif prev is None:
            denom = 2.0 * (f_cur - phi0 - dphi0 * alpha)
            new = -dphi0 * alpha**2 / denom if denom > 0 else 0.5 * alpha
        else:
            new = _cubic_step(phi0, dphi0, alpha, f_cur, prev[0], prev[1])
        if not np.isfinite(new):
            new = 0.5 * alpha
        new = min(max(new, 0.1 * alpha), 0.5 * alpha)
        if np.isfinite(f_cur):
            prev = (alpha, f_cur)
        alpha = new
        if alpha < 1e-16:
            raise _LineSearchFailure
        f_cur = phi(alpha)
    raise _LineSearchFailure


def _hager_zhang(phi, dphi, phi0, dphi0, alpha0=1.0, delta=0.1, sigma=0.9,
                 expansion=5.0, max_rounds=40):
    """Bracketing line search with (approximate) Wolfe acceptance.

    Interval handling follows the Hager-Zhang scheme: expand until the slope
    turns nonnegative, shrink by bisection when the function rises above its
    start value, then take safeguarded secant steps. Accepted points always
    satisfy phi(alpha) <= phi(0), keeping the iterate sequence monotone.
    """

    def probe(t):
        ft = phi(t)
        dft = dphi(t, ft) if np.isfinite(ft) else math.nan
        return ft, dft

    def good(t, ft, dft):
        if not (np.isfinite(ft) and np.isfinite(dft)):
            return False
        wolfe = ft <= phi0 + delta * t * dphi0 and dft >= sigma * dphi0
        approx = (2.0 * delta - 1.0) * dphi0 >= dft >= sigma * dphi0 and ft <= phi0
        return wolfe or approx

    def shrink(a, fa, da, b):
        # drive the right end to nonnegative slope while keeping phi(a) <= phi0
        for _ in range(max_rounds):
            mid = 0.5 * (a + b)
            fm, dm = probe(mid)
            if good(mid, fm, dm):
                return None, (mid, fm)
            if not np.isfinite(fm):
                b = mid
            elif dm >= 0:
                return (a, fa, da, mid, fm, dm), None
            elif fm <= phi0:
                a, fa, da = mid, fm, dm
            else:
                b = mid
            if b - a < 1e-16:
                break
        raise _LineSearchFailure

    # bracketing phase
    a, fa, da = 0.0, phi0, dphi0
    b = fb = db = None
    c = alpha0
    accepted = None
    for _ in range(max_rounds):
        fc, dc = probe(c)
        if good(c, fc, dc):
            accepted = (c, fc)
            break
        if not np.isfinite(fc) or (np.isfinite(fc) and fc > phi0 and dc < 0):
            interval, accepted = shrink(a, fa, da, c)
            if accepted is None:
                a, fa, da, b, fb, db = interval
            break
        if dc >= 0:
            b, fb, db = c, fc, dc
            break
        a, fa, da = c, fc, dc
        c *= expansion
    if accepted is not None:
        return accepted
    if b is None:
        raise _LineSearchFailure

    # secant phase on [a, b] with da < 0 <= db and phi(a) <= phi0
    for _ in range(max_rounds):
        width = b - a
        denom = db - da
        c = (a * db - b * da) / denom if denom > 0 else 0.5 * (a + b)
        if not a < c < b:
            c = 0.5 * (a + b)
        fc, dc = probe(c)
        if good(c, fc, dc):
            return c, fc
        if not np.isfinite(fc) or (fc > phi0 and dc < 0):
            interval, accepted = shrink(a, fa, da, c)
            if accepted is not None:
                return accepted
            a, fa, da, b, fb, db = interval
        elif dc >= 0:
            b, fb, db = c, fc, dc
        else:
            a, fa, da = c, fc, dc
        if b - a > 0.66 * width:
            mid = 0.5 * (a + b)
            fm, dm = probe(mid)
            if good(mid, fm, dm):
                return mid, fm
            if not np.isfinite(fm) or (fm > phi0 and dm < 0):
                interval, accepted = shrink(a, fa, da, mid)
                if accepted is not None:
                    return accepted
                a, fa, da, b, fb, db = interval
            elif dm >= 0:
                b, fb, db = mid, fm, dm
            else:
                a, fa, da = mid, fm, dm
        if b - a < 1e-16:
            break
    # fall back to the best admissible left end if it made progress
    if a > 0 and fa < phi0:
        return a, fa
    raise _LineSearchFailure


@dataclass
class BfgsResult:
    x: np.ndarray
    fval: float
    iterations: int
    converged: bool
    gradient_norm: float
    n_evals: int


def minimize_bfgs(func, theta0, line_search="backtracking", fd_step=1e-6,
                  grad_tol=1e-8, max_iter=200, callback=None) -> BfgsResult:
    """BFGS with identity initial inverse Hessian and best-iterate fallback.

    Line-search or gradient failures end the run with ``converged=False`` and
    the best iterate found so far; they never raise. ``callback`` is invoked
    with (x, fval) after every accepted step.
    """
    n_evals = 0

    def f(x):
        nonlocal n_evals
        n_evals += 1
        return func(x)

    x = np.asarray(theta0, dtype=float).copy()
    fval = f(x)
    if not np.isfinite(fval):
        raise ValueError("objective is not finite at theta_init")
    grad = fd_gradient(f, x, fd_step, f0=fval)
    grad_norm = float(np.linalg.norm(grad))
    if grad_norm <= grad_tol:
        return BfgsResult(x, fval, 0, True, grad_norm, n_evals)

    dim = x.size
    eye = np.eye(dim)
    hinv = eye.copy()
    converged = False
    iterations = 0
    for it in range(1, max_iter + 1):
        direction = -hinv @ grad
        slope = float(grad @ direction)
        if slope >= 0:
            hinv = eye.copy()
            direction = -grad
            slope = -float(grad @ grad)
            if slope >= 0:
                break

        def phi(alpha):
            return f(x + alpha * direction)

        def dphi(alpha, f_alpha):
            h = fd_step * max(1.0, abs(alpha))
            f_up, f_down = phi(alpha + h), phi(alpha - h)
            if np.isfinite(f_up) and np.isfinite(f_down):
                return (f_up - f_down) / (2.0 * h)
            if np.isfinite(f_up):
                return (f_up - f_alpha) / h
            if np.isfinite(f_down):
                return (f_alpha - f_down) / h
            return math.nan

        try:
            if line_search == "hager-zhang":
                alpha, f_new = _hager_zhang(phi, dphi, fval, slope)
            else:
                alpha, f_new = _backtracking_interpolation(phi, fval, slope)
        except _LineSearchFailure:
            break

        step = alpha * direction
        x_new = x + step
        iterations = it
        if callback is not None:
            callback(x_new, f_new)
        try:
            grad_new = fd_gradient(f, x_new, fd_step, f0=f_new)
        except GradientUnavailableError:
            x, fval = x_new, f_new
            grad_norm = math.nan
            break

        y = grad_new - grad
        sy = float(step @ y)
        if sy > 1e-10 * np.linalg.norm(step) * np.linalg.norm(y):
            if it == 1:
                hinv = (sy / float(y @ y)) * eye
            rho = 1.0 / sy
            left = eye - rho * np.outer(step, y)
            hinv = left @ hinv @ left.T + rho * np.outer(step, step)

        x, fval, grad = x_new, f_new, grad_new
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm <= grad_tol:
            converged = True
            break

    return BfgsResult(x, fval, iterations, converged, grad_norm, n_evals)


def classify_failure(theta_hat, rule: str = "abs_greater_one") -> bool:
    """The reporting rule that flags estimates with any |theta_j| > 1."""
    if rule == "none":
        return False
    if rule == "abs_greater_one":
        return bool(np.max(np.abs(np.asarray(theta_hat, dtype=float))) > 1.0)
    raise ValueError(f"rule must be one of {FAILURE_RULES}")


def resolve_line_search(cfg: OptimizerConfig, kind: str) -> str:
    if cfg.line_search is not None:
        return cfg.line_search
    return "hager-zhang" if kind == "constrained" else "backtracking"


def estimate(spec: ObjectiveSpec, cfg: OptimizerConfig,
             failure_rule: str = "none") -> EstimateResult:
    """Minimise the captured objective from cfg.theta_init."""
    start = time.perf_counter()
    outcome = minimize_bfgs(
        lambda th: objective_value(spec, th),
        cfg.theta_init,
        line_search=resolve_line_search(cfg, spec.kind),
        fd_step=cfg.fd_step,
        grad_tol=cfg.grad_tol,
        max_iter=cfg.max_iter,
    )
    theta_hat = spec.model.canonicalize(outcome.x)
    return EstimateResult(
        theta_hat=theta_hat,
        objective_value=outcome.fval,
        iterations=outcome.iterations,
        converged=outcome.converged,
        failed=classify_failure(theta_hat, failure_rule),
        gradient_norm=outcome.gradient_norm,
        wall_time=time.perf_counter() - start,
        n_evals=outcome.n_evals,
    )


def estimate_gmm_reweighted(spec: ObjectiveSpec, cfg: OptimizerConfig,
                            failure_rule: str = "none"):
    """Two-pass GMM: estimate, refresh the weighting covariance, re-estimate."""
    if spec.kind != "gmm":
        raise ValueError("reweighted estimation applies to the gmm objective")
    first = estimate(spec, cfg, failure_rule)
    weight = gmm_weight_update(spec, first.theta_hat)
    second_spec = with_gmm_weight(spec, weight)
    second_cfg = OptimizerConfig(
        theta_init=first.theta_hat,
        line_search=cfg.line_search,
        fd_step=cfg.fd_step,
        grad_tol=cfg.grad_tol,
        max_iter=cfg.max_iter,
    )
    return estimate(second_spec, second_cfg, failure_rule), weight
