import math

import numpy as np
import pytest

from koopsde import (
    GradientUnavailableError,
    OptimizerConfig,
    SimSource,
    build_basis,
    classify_failure,
    estimate,
    estimate_gmm_reweighted,
    fd_gradient,
    koopman_matrix_at,
    make_objective_spec,
    minimize_bfgs,
    ornstein_uhlenbeck,
    with_target,
)
from koopsde.objectives import objective_value

THETA_OU = np.array([0.2, 0.08, 0.03])


def _planted_spec(kind="frobenius", theta0=THETA_OU, seed=8, n_points=400):
    model = ornstein_uhlenbeck()
    data = SimSource("ou", tuple(THETA_OU), 1 / 12, n_points, 1, x0="stationary", seed=seed)(0)
    basis = build_basis("rbf", 3, x_data=data.x)
    spec = make_objective_spec(kind, model, basis, data)
    return with_target(spec, koopman_matrix_at(spec, np.asarray(theta0)))


def test_fd_gradient_on_a_quadratic():
    center = np.array([1.0, -2.0, 0.5])
    grad = fd_gradient(lambda th: float(np.sum((th - center) ** 2)), np.zeros(3))
    np.testing.assert_allclose(grad, -2.0 * center, atol=1e-6)


def test_fd_gradient_of_a_constant_is_zero():
    grad = fd_gradient(lambda th: 3.7, np.array([0.3, -0.4]))
    np.testing.assert_array_equal(grad, np.zeros(2))


def test_fd_gradient_small_at_planted_minimum():
    spec = _planted_spec()
    grad = fd_gradient(lambda th: objective_value(spec, th), THETA_OU)
    assert np.linalg.norm(grad) <= 1e-5


def test_fd_gradient_one_sided_fallback():
    wall = 0.5

    def func(th):
        return math.inf if th[0] > wall else float(th[0] ** 2)

    grad = fd_gradient(func, np.array([wall]), fd_step=1e-6)
    assert grad[0] == pytest.approx(2 * wall, rel=1e-4)


def test_fd_gradient_unavailable_when_both_sides_blow_up():
    def func(th):
        return math.inf if abs(th[0] - 1.0) > 1e-12 else 0.0

    with pytest.raises(GradientUnavailableError):
        fd_gradient(func, np.array([1.0]))


@pytest.mark.parametrize("line_search", ["backtracking", "hager-zhang"])
def test_bfgs_minimises_a_quadratic(line_search):
    center = np.array([2.0, -1.0])
    out = minimize_bfgs(lambda th: float(np.sum((th - center) ** 2)),
                        np.zeros(2), line_search=line_search)
    assert out.converged
    np.testing.assert_allclose(out.x, center, atol=1e-6)


@pytest.mark.parametrize("line_search", ["backtracking", "hager-zhang"])
def test_bfgs_solves_rosenbrock(line_search):
    def rosen(th):
        return float(100.0 * (th[1] - th[0] ** 2) ** 2 + (1.0 - th[0]) ** 2)

    out = minimize_bfgs(rosen, np.array([-1.2, 1.0]), line_search=line_search,
                        max_iter=500, grad_tol=1e-7)
    np.testing.assert_allclose(out.x, [1.0, 1.0], atol=1e-4)


def test_bfgs_handles_sentinel_regions():
    # minimum sits close to the infeasible half-space; line search must back off
    def func(th):
        if th[0] <= 0:
            return math.inf
        return float((th[0] - 0.05) ** 2 + th[1] ** 2)

    out = minimize_bfgs(func, np.array([1.0, 1.0]))
    np.testing.assert_allclose(out.x, [0.05, 0.0], atol=1e-5)


def test_accepted_iterates_are_monotone():
    spec = _planted_spec(seed=10)
    values = []
    minimize_bfgs(lambda th: objective_value(spec, th),
                  np.array([0.3, 0.02, 0.05]),
                  callback=lambda x, f: values.append(f))
    assert len(values) >= 2
    assert all(b <= a + 1e-15 for a, b in zip(values, values[1:]))


def test_estimate_at_planted_optimum_stops_immediately():
    spec = _planted_spec()
    res = estimate(spec, OptimizerConfig(theta_init=THETA_OU))
    assert res.iterations == 0
    assert res.converged
    np.testing.assert_array_equal(res.theta_hat, THETA_OU)


def test_estimate_is_deterministic():
    spec = _planted_spec(seed=12)
    cfg = OptimizerConfig(theta_init=np.array([0.25, 0.05, 0.04]))
    a = estimate(spec, cfg)
    b = estimate(spec, cfg)
    assert np.array_equal(a.theta_hat, b.theta_hat)
    assert a.objective_value == b.objective_value
    assert a.iterations == b.iterations
    assert a.converged == b.converged
    assert a.gradient_norm == b.gradient_norm


def test_planted_recovery_from_nearby_inits():
    model = ornstein_uhlenbeck()
    data = SimSource("ou", tuple(THETA_OU), 1 / 12, 400, 1, x0="stationary", seed=8)(0)
    basis = build_basis("rbf", 3, x_data=data.x)
    base = make_objective_spec("frobenius", model, basis, data)
    rng = np.random.default_rng(314)
    hits = 0
    for _ in range(100):
        theta0 = np.array([rng.uniform(0.1, 1.0), rng.uniform(-0.5, 0.5),
                           rng.uniform(0.01, 0.1)])
        spec = with_target(base, koopman_matrix_at(base, theta0))
        init = theta0 * (1.0 + rng.uniform(-0.2, 0.2, 3))
        res = estimate(spec, OptimizerConfig(theta_init=init))
        if np.max(np.abs(res.theta_hat - model.canonicalize(theta0))) <= 1e-4:
            hits += 1
    assert hits == 100


def test_estimate_canonicalizes_volatility_sign():
    spec = _planted_spec(theta0=[0.3, 0.05, 0.04])
    res = estimate(spec, OptimizerConfig(theta_init=np.array([0.3, 0.05, -0.04])))
    assert res.theta_hat[2] > 0


def test_classify_failure_rules():
    assert not classify_failure([0.2, 0.08, 0.03])
    assert classify_failure([0.2, -3.7, 0.03])
    assert not classify_failure([0.2, -3.7, 0.03], rule="none")
    assert classify_failure([1.0 + 1e-9, 0.0, 0.0])
    with pytest.raises(ValueError):
        classify_failure([0.0], rule="bogus")


def test_estimate_flags_failures_when_rule_enabled():
    spec = _planted_spec(theta0=[0.3, 1.4, 0.05], seed=13)
    cfg = OptimizerConfig(theta_init=np.array([0.3, 1.4, 0.05]))
    assert estimate(spec, cfg, failure_rule="abs_greater_one").failed
    assert not estimate(spec, cfg, failure_rule="none").failed


def test_estimate_requires_finite_start():
    spec = _planted_spec()
    with pytest.raises(ValueError, match="finite"):
        estimate(spec, OptimizerConfig(theta_init=np.array([-1.0, 0.0, 0.03])))


def test_constrained_kind_defaults_to_hager_zhang():
    from koopsde.optimize import resolve_line_search

    cfg = OptimizerConfig(theta_init=THETA_OU)
    assert resolve_line_search(cfg, "constrained") == "hager-zhang"
    assert resolve_line_search(cfg, "frobenius") == "backtracking"
    cfg2 = OptimizerConfig(theta_init=THETA_OU, line_search="backtracking")
    assert resolve_line_search(cfg2, "constrained") == "backtracking"


def test_gmm_two_pass_reweighting_runs():
    model = ornstein_uhlenbeck()
    data = SimSource("ou", tuple(THETA_OU), 1 / 12, 600, 1, x0="stationary", seed=14)(0)
    basis = build_basis("rbf", 3, x_data=data.x)
    spec = make_objective_spec("gmm", model, basis, data)
    result, weight = estimate_gmm_reweighted(spec, OptimizerConfig(theta_init=THETA_OU))
    assert weight.shape == (3, 3)
    np.testing.assert_array_equal(weight, weight.T)
    assert np.all(np.isfinite(result.theta_hat))


def test_result_json_schema():
    spec = _planted_spec()
    res = estimate(spec, OptimizerConfig(theta_init=THETA_OU))
    payload = res.to_json()
    assert set(payload) == {
        "theta_hat", "objective_value", "iterations", "converged", "failed",
        "gradient_norm", "wall_time", "n_evals",
    }
    assert isinstance(payload["theta_hat"], list)
