import math

import numpy as np
import pytest

from koopsde import (
    SimConfig,
    bounded_mean_reversion,
    milstein_step,
    ornstein_uhlenbeck,
    ou_exact_step,
    simulate_path,
    simulate_snapshots,
)
from _oracles import euler_reference_bmr, ou_conditional_moments

THETA_OU = np.array([0.2, 0.08, 0.03])


def test_exact_step_fixed_point_of_conditional_mean():
    # x = theta2 makes the decay term vanish: draws are centred at 0.08
    rng = np.random.default_rng(1)
    draws = np.array([ou_exact_step(0.08, THETA_OU, 0.5, rng) for _ in range(20000)])
    _, var = ou_conditional_moments(THETA_OU, 0.08, 0.5)
    se = math.sqrt(var / draws.size)
    assert abs(draws.mean() - 0.08) < 5 * se


def test_exact_step_conditional_mean_value():
    rng = np.random.default_rng(2)
    t = 1.0 / 12.0
    draws = np.array([ou_exact_step(0.2, THETA_OU, t, rng) for _ in range(200000)])
    expected = 0.08 + 0.12 * math.exp(-1.0 / 60.0)  # ~0.19802
    assert expected == pytest.approx(0.1980165744, abs=1e-9)
    _, var = ou_conditional_moments(THETA_OU, 0.2, t)
    se = math.sqrt(var / draws.size)
    assert abs(draws.mean() - expected) < 5 * se


def test_exact_step_long_time_variance_is_stationary():
    rng = np.random.default_rng(3)
    draws = np.array([ou_exact_step(0.5, THETA_OU, 200.0, rng) for _ in range(100000)])
    target = 0.03**2 / (2 * 0.2)
    assert target == pytest.approx(0.00225)
    # variance-of-variance for a Gaussian sample: 2 sigma^4 / n
    se = math.sqrt(2.0 * target**2 / draws.size)
    assert abs(draws.var() - target) < 5 * se


def test_exact_step_moment_check():
    rng = np.random.default_rng(4)
    x, t = 0.11, 1.0 / 12.0
    draws = np.array([ou_exact_step(x, THETA_OU, t, rng) for _ in range(100000)])
    mean, var = ou_conditional_moments(THETA_OU, x, t)
    mean_se = math.sqrt(var / draws.size)
    var_se = math.sqrt(2.0 * var**2 / draws.size)
    assert abs(draws.mean() - mean) < 5 * mean_se
    assert abs(draws.var() - var) < 5 * var_se


def test_exact_step_rejects_bad_input():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        ou_exact_step(np.nan, THETA_OU, 0.1, rng)
    with pytest.raises(ValueError):
        ou_exact_step(0.0, [0.2, np.inf, 0.03], 0.1, rng)
    with pytest.raises(ValueError):
        ou_exact_step(0.0, [-0.2, 0.08, 0.03], 0.1, rng)


def test_milstein_bmr_pure_diffusion_at_origin():
    # drift and correction both vanish at x = 0: update is sqrt(2) dW exactly
    m = bounded_mean_reversion()
    dw = 0.0173
    out = milstein_step(0.0, m, [1.0, 1.0], dt=0.01, dw=dw)
    assert out == pytest.approx(math.sqrt(2.0) * dw, rel=1e-12)


def test_milstein_deterministic_part():
    m = bounded_mean_reversion()
    theta = np.array([1.2, 0.7])
    x, dt = 0.4, 0.01
    out = milstein_step(x, m, theta, dt=dt, dw=0.0)
    # dW = 0 leaves x + a dt - (b b'/2) dt
    expected = x + m.drift(x, theta) * dt - (-theta[1] * x) * dt
    assert out == pytest.approx(expected, rel=1e-12)


def test_milstein_reduces_to_euler_for_constant_volatility():
    m = ornstein_uhlenbeck()
    x, dt, dw = 0.1, 0.02, -0.005
    out = milstein_step(x, m, THETA_OU, dt=dt, dw=dw)
    expected = x + 0.2 * (0.08 - x) * dt + 0.03 * dw
    assert out == pytest.approx(expected, rel=1e-12)


def test_milstein_rejects_states_outside_the_space():
    m = bounded_mean_reversion()
    with pytest.raises(ValueError, match="state space"):
        milstein_step(1.5, m, [1.0, 1.0], dt=0.01, dw=0.0)


def test_minimal_path():
    m = ornstein_uhlenbeck()
    cfg = SimConfig(theta=THETA_OU, t_step=0.1, n_points=1, n_paths=1, x0=0.3, seed=9)
    data = simulate_snapshots(m, cfg)
    assert data.x.tolist() == [0.3]
    assert data.y.shape == (1,)
    assert np.isfinite(data.y[0]) and data.y[0] != 0.3


def test_paper_protocol_shape():
    m = ornstein_uhlenbeck()
    cfg = SimConfig(theta=THETA_OU, t_step=1 / 12, n_points=501, n_paths=4,
                    x0="stationary", seed=5)
    data = simulate_snapshots(m, cfg)
    assert data.n_pairs == 4 * 501
    assert data.n_paths == 4
    assert data.metadata["scheme"] == "exact_ou"


def test_seeded_determinism_is_bitwise():
    m = ornstein_uhlenbeck()
    cfg = SimConfig(theta=THETA_OU, t_step=1 / 12, n_points=50, n_paths=3,
                    x0="stationary", seed=33)
    a = simulate_snapshots(m, cfg)
    b = simulate_snapshots(m, cfg)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)


def test_sample_path_consistency():
    m = ornstein_uhlenbeck()
    cfg = SimConfig(theta=THETA_OU, t_step=1 / 12, n_points=100, n_paths=2, x0=0.1, seed=7)
    data = simulate_snapshots(m, cfg)
    for k in range(2):
        path = data.path(k)
        assert np.array_equal(path.x[1:], path.y[:-1])


def test_single_path_matches_its_batch_slice():
    m = bounded_mean_reversion()
    cfg = SimConfig(theta=[1.0, 1.0], t_step=0.125, n_points=40, n_paths=5, x0=0.0,
                    seed=12, scheme="milstein", internal_dt=0.03125)
    batch = simulate_snapshots(m, cfg)
    one = simulate_path(m, cfg, 3)
    sl = batch.path_slice(3)
    assert np.array_equal(one.x, batch.x[sl])
    assert np.array_equal(one.y, batch.y[sl])


def test_milstein_substep_validation():
    with pytest.raises(ValueError, match="integer multiple"):
        SimConfig(theta=[1.0, 1.0], t_step=0.1, n_points=5, scheme="milstein",
                  internal_dt=0.03)
    with pytest.raises(ValueError, match=r"\(0, t_step\]"):
        SimConfig(theta=[1.0, 1.0], t_step=0.1, n_points=5, scheme="milstein",
                  internal_dt=0.2)


def test_exact_scheme_rejected_for_bmr():
    m = bounded_mean_reversion()
    cfg = SimConfig(theta=[1.0, 1.0], t_step=0.1, n_points=5, scheme="exact_ou")
    with pytest.raises(ValueError, match="only valid for the OU model"):
        simulate_snapshots(m, cfg)


def test_clamp_counting_near_the_boundary():
    # a coarse step from far out in the state space overshoots and gets clamped
    m = bounded_mean_reversion()
    cfg = SimConfig(theta=[0.1, 2.0], t_step=0.5, n_points=200, n_paths=1, x0=0.95,
                    seed=2, scheme="milstein", internal_dt=0.5)
    data = simulate_snapshots(m, cfg)
    assert data.metadata["clamp_count"] > 0
    assert np.all(np.abs(data.y) < 1.0)


def test_milstein_weak_accuracy_against_dense_euler():
    # second moment at t=1 versus an independent Euler reference at dt = 2^-14
    m = bounded_mean_reversion()
    theta = np.array([1.0, 1.0])
    n_paths = 10000
    cfg = SimConfig(theta=theta, t_step=1.0, n_points=1, n_paths=n_paths, x0=0.0,
                    seed=21, scheme="milstein", internal_dt=2.0**-10)
    milstein_end = simulate_snapshots(m, cfg).y
    euler_end = euler_reference_bmr(theta, n_paths, 2.0**-14, 1.0, seed=977)
    m2_mil = np.mean(milstein_end**2)
    m2_eul = np.mean(euler_end**2)
    se = math.sqrt(np.var(milstein_end**2) / n_paths + np.var(euler_end**2) / n_paths)
    assert abs(m2_mil - m2_eul) < 3 * se


def test_stationary_x0_only_for_ou():
    m = bounded_mean_reversion()
    cfg = SimConfig(theta=[1.0, 1.0], t_step=0.1, n_points=5, x0="stationary",
                    scheme="milstein", internal_dt=0.1)
    with pytest.raises(ValueError, match="stationary"):
        simulate_snapshots(m, cfg)
