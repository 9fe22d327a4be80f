import numpy as np
import pytest
import scipy.linalg

from koopsde import (
    BasisSet,
    EigenTruncation,
    IllConditionedMassError,
    KoopmanMatrices,
    SnapshotData,
    TruncationUnavailableError,
    assemble,
    bounded_mean_reversion,
    build_basis,
    eigen_truncate,
    generator_template,
    koopman_to_json,
    make_rbf_centers,
    ornstein_uhlenbeck,
    perron_frobenius_matrix,
    projected_koopman_matrix,
    read_matrix_csv,
    write_matrix_csv,
)
from koopsde.bench import loglog_slope
from _oracles import (
    khat_scaling_study,
    ou_conditional_moments,
    ou_rbf_cross_matrix,
    ou_rbf_cross_matrix_stationary,
    stationary_ou_dataset,
)

THETA_OU = np.array([0.2, 0.08, 0.03])


def _random_data(n, seed=0, lo=-1.0, hi=1.0):
    rng = np.random.default_rng(seed)
    return SnapshotData(x=rng.uniform(lo, hi, n), y=rng.uniform(lo, hi, n), t_step=0.1)


def test_constant_basis_is_koopman_invariant():
    data = _random_data(20)
    koop = assemble(build_basis("chebyshev", 1), data)
    np.testing.assert_allclose(koop.mass, [[1.0]])
    np.testing.assert_allclose(koop.cross, [[1.0]])
    np.testing.assert_allclose(koop.edmd, [[1.0]])


def test_doubling_map_edmd_matrix():
    data = SnapshotData(x=[1.0, 2.0], y=[2.0, 4.0], t_step=1.0)
    with pytest.warns(UserWarning):
        koop = assemble(build_basis("chebyshev", 2), data)
    np.testing.assert_allclose(koop.edmd, [[1.0, 0.0], [0.0, 2.0]], atol=1e-12)


def test_edmd_times_mass_equals_cross():
    data = _random_data(300, seed=1)
    koop = assemble(build_basis("legendre", 5), data)
    resid = koop.edmd @ koop.mass - koop.cross
    assert np.linalg.norm(resid) <= 1e-8 * np.linalg.norm(koop.cross)


def test_mass_symmetry_is_exact():
    data = _random_data(500, seed=2)
    koop = assemble(build_basis("rbf", 4, x_data=data.x), data)
    assert np.max(np.abs(koop.mass - koop.mass.T)) == 0.0


def test_ill_conditioned_mass_reports_condition_number():
    data = SnapshotData(x=[0.5, 0.5, 0.5], y=[0.1, 0.2, 0.3], t_step=0.1)
    with pytest.raises(IllConditionedMassError) as err:
        assemble(build_basis("legendre", 3), data)
    assert err.value.cond_mass > 1e12 or np.isinf(err.value.cond_mass)


def test_cross_matrix_matches_gaussian_oracle_in_expectation():
    # paired comparison: E[Khat - K_analytic(same data)] = 0 entrywise
    n_sets, t_pts = 200, 300
    t_step = 1.0 / 12.0
    diffs = np.empty((n_sets, 3, 3))
    for s in range(n_sets):
        rng = np.random.default_rng(np.random.SeedSequence(50, spawn_key=(s,)))
        x, y = stationary_ou_dataset(THETA_OU, t_step, t_pts, rng)
        centers, scale = make_rbf_centers(x, 3)
        basis = BasisSet("rbf", 3, centers=centers, length_scale=scale)
        koop = assemble(basis, SnapshotData(x=x, y=y, t_step=t_step))
        diffs[s] = koop.cross - ou_rbf_cross_matrix(THETA_OU, t_step, x, centers, scale)
    mean = diffs.mean(axis=0)
    se = diffs.std(axis=0, ddof=1) / np.sqrt(n_sets)
    assert np.all(np.abs(mean) < 3 * se + 1e-12)


def test_cross_matrix_unbiased_for_frozen_basis():
    # 500 datasets with a frozen basis against the stationary-measure quadrature oracle
    n_sets, t_pts = 500, 200
    t_step = 1.0 / 12.0
    sd = np.sqrt(THETA_OU[2] ** 2 / (2 * THETA_OU[0]))
    centers = np.linspace(THETA_OU[1] - 2 * sd, THETA_OU[1] + 2 * sd, 3)
    scale = 1.0 / (centers[1] - centers[0])
    basis = BasisSet("rbf", 3, centers=centers, length_scale=scale)
    khats = np.empty((n_sets, 3, 3))
    for s in range(n_sets):
        rng = np.random.default_rng(np.random.SeedSequence(60, spawn_key=(s,)))
        x, y = stationary_ou_dataset(THETA_OU, t_step, t_pts, rng)
        khats[s] = assemble(basis, SnapshotData(x=x, y=y, t_step=t_step)).cross
    oracle = ou_rbf_cross_matrix_stationary(THETA_OU, t_step, centers, scale)
    se = khats.std(axis=0, ddof=1) / np.sqrt(n_sets)
    assert np.all(np.abs(khats.mean(axis=0) - oracle) < 4 * se)


def test_cross_matrix_error_decays_inversely_with_data():
    t_values = [500, 1000, 2000, 4000, 8000, 16000]
    means = khat_scaling_study(THETA_OU, 1.0 / 12.0, t_values, n_replicates=200)
    slope, _ = loglog_slope(t_values, means)
    assert -1.2 <= slope <= -0.8


def test_deterministic_flow_makes_projection_exact():
    # noiseless OU flow with the monomial span is reproduced exactly (Prop-style identity)
    rng = np.random.default_rng(11)
    x = rng.uniform(-1.0, 1.0, 400)
    t_step = 1.0 / 12.0
    mean, _ = ou_conditional_moments([0.2, 0.08, 0.0], x, t_step)
    data = SnapshotData(x=x, y=mean, t_step=t_step)
    basis = build_basis("chebyshev", 2)
    model = ornstein_uhlenbeck()
    koop = assemble(basis, data)
    template = generator_template(basis, data, model)
    implied = projected_koopman_matrix(template, koop.mass, [0.2, 0.08, 0.0], t_step)
    assert np.linalg.norm(koop.edmd - implied) <= 1e-9


def test_template_rows_vanish_for_constant_functions():
    data = _random_data(50, seed=3)
    template = generator_template(build_basis("chebyshev", 4), data, ornstein_uhlenbeck())
    for mat in template.matrices:
        np.testing.assert_array_equal(mat[0], np.zeros(4))


def test_bmr_legendre_generator_is_diagonal():
    data = _random_data(2000, seed=4)
    basis = build_basis("legendre", 8)
    model = bounded_mean_reversion()
    koop = assemble(basis, data)
    template = generator_template(basis, data, model)
    cho = scipy.linalg.cho_factor(koop.mass, lower=True)
    gen = scipy.linalg.cho_solve(cho, template.build([1.0, 1.0]).T).T
    expected = np.diag([-n * (n + 1.0) for n in range(8)])
    assert np.max(np.abs(gen - expected)) < 1e-8


def test_ou_monomial_generator_is_exact():
    data = _random_data(200, seed=5)
    basis = build_basis("chebyshev", 2)
    model = ornstein_uhlenbeck()
    koop = assemble(basis, data)
    template = generator_template(basis, data, model)
    cho = scipy.linalg.cho_factor(koop.mass, lower=True)
    gen = scipy.linalg.cho_solve(cho, template.build(THETA_OU).T).T
    expected = np.array([[0.0, 0.0], [0.2 * 0.08, -0.2]])
    assert np.max(np.abs(gen - expected)) < 1e-12


def test_zero_generator_exponentiates_to_identity():
    data = _random_data(100, seed=6)
    basis = build_basis("legendre", 4)
    template = generator_template(basis, data, ornstein_uhlenbeck())
    koop = assemble(basis, data)
    out = projected_koopman_matrix(template, koop.mass, [0.0, 0.0, 0.0], 0.7)
    np.testing.assert_allclose(out, np.eye(4), atol=1e-14)


def test_ou_monomial_koopman_closed_form():
    data = _random_data(200, seed=7)
    basis = build_basis("chebyshev", 2)
    koop = assemble(basis, data)
    template = generator_template(basis, data, ornstein_uhlenbeck())
    t = 0.4
    out = projected_koopman_matrix(template, koop.mass, THETA_OU, t)
    decay = np.exp(-0.2 * t)
    expected = np.array([[1.0, 0.0], [0.08 * (1 - decay), decay]])
    assert np.max(np.abs(out - expected)) < 1e-10


def test_bmr_legendre_koopman_is_diagonal_exponential():
    data = _random_data(2000, seed=8)
    basis = build_basis("legendre", 6)
    koop = assemble(basis, data)
    template = generator_template(basis, data, bounded_mean_reversion())
    t = 0.05
    out = projected_koopman_matrix(template, koop.mass, [1.0, 1.0], t)
    expected = np.diag([np.exp(-n * (n + 1.0) * t) for n in range(6)])
    assert np.max(np.abs(out - expected)) < 1e-8


def test_eigen_truncate_diagonal():
    out = eigen_truncate(np.diag([1.0, 0.5, 0.1]), 2)
    np.testing.assert_allclose(out, np.diag([1.0, 0.5, 0.0]), atol=1e-12)


def test_eigen_truncate_full_rank_reconstruction():
    rng = np.random.default_rng(9)
    mat = rng.standard_normal((6, 6))
    out = eigen_truncate(mat, 6)
    assert np.linalg.norm(out - mat) <= 1e-8 * np.linalg.norm(mat)
    via_decomp = EigenTruncation(mat).truncate(6)
    assert np.linalg.norm(via_decomp - mat) <= 1e-8 * np.linalg.norm(mat)


def test_eigen_truncate_keeps_conjugate_pairs_together():
    mat = np.array([[0.0, -0.5], [0.5, 0.0]]) + np.eye(2)
    decomp = EigenTruncation(mat)
    j_eff, bumped = decomp.effective_rank(1)
    assert j_eff == 2 and bumped
    out = decomp.truncate(1)
    assert out.dtype.kind == "f"
    np.testing.assert_allclose(out, mat, atol=1e-12)


def test_eigen_truncate_eigenvalues_sorted_and_biorthogonal():
    rng = np.random.default_rng(10)
    mat = rng.standard_normal((5, 5))
    decomp = EigenTruncation(mat)
    mods = np.abs(decomp.eigenvalues)
    assert np.all(np.diff(mods) <= 1e-12)
    np.testing.assert_allclose(decomp.left @ decomp.right, np.eye(5), atol=1e-10)
    proj = decomp.projector(3)
    np.testing.assert_allclose(proj @ proj, proj, atol=1e-10)


def test_eigen_truncate_defective_matrix():
    with pytest.raises(TruncationUnavailableError):
        eigen_truncate(np.array([[1.0, 1.0], [0.0, 1.0]]), 1)


def test_perron_frobenius_constant_basis():
    koop = assemble(build_basis("chebyshev", 1), _random_data(10))
    np.testing.assert_allclose(perron_frobenius_matrix(koop), [[1.0]])


def test_perron_frobenius_self_adjoint_case():
    cross = np.array([[0.9, 0.2], [0.2, 0.7]])
    koop = KoopmanMatrices(mass=np.eye(2), cross=cross, edmd=cross, t_step=0.1,
                           cond_mass=1.0)
    np.testing.assert_allclose(perron_frobenius_matrix(koop), cross, atol=1e-14)


def test_perron_frobenius_shares_the_edmd_spectrum():
    rng = np.random.default_rng(12)
    half = rng.standard_normal((4, 4))
    mass = half @ half.T + 4 * np.eye(4)
    cross = rng.standard_normal((4, 4))
    cho = scipy.linalg.cho_factor(mass, lower=True)
    edmd = scipy.linalg.cho_solve(cho, cross.T).T
    koop = KoopmanMatrices(mass=mass, cross=cross, edmd=edmd, t_step=0.1, cond_mass=1.0)
    pf = perron_frobenius_matrix(koop)
    eig_a = np.sort_complex(np.linalg.eigvals(edmd))
    eig_pf = np.sort_complex(np.linalg.eigvals(pf))
    assert np.max(np.abs(eig_a - eig_pf)) < 1e-8


def test_multi_path_assembly_accumulates_over_concatenation():
    # matrices over concatenated paths equal the pair-count-weighted average
    rng = np.random.default_rng(15)
    basis = build_basis("legendre", 3)
    parts = [
        SnapshotData(x=rng.uniform(-1, 1, n), y=rng.uniform(-1, 1, n), t_step=0.1)
        for n in (30, 70)
    ]
    merged = SnapshotData(
        x=np.concatenate([p.x for p in parts]),
        y=np.concatenate([p.y for p in parts]),
        t_step=0.1,
        path_boundaries=[0, 30],
    )
    whole = assemble(basis, merged)
    weighted_mass = sum(p.n_pairs * assemble(basis, p).mass for p in parts) / 100
    weighted_cross = sum(p.n_pairs * assemble(basis, p).cross for p in parts) / 100
    np.testing.assert_allclose(whole.mass, weighted_mass, rtol=1e-12)
    np.testing.assert_allclose(whole.cross, weighted_cross, rtol=1e-12)


def test_matrix_csv_round_trip(tmp_path):
    rng = np.random.default_rng(13)
    mat = rng.standard_normal((3, 3))
    path = tmp_path / "mass.csv"
    write_matrix_csv(path, mat, 0.25)
    back, t_step = read_matrix_csv(path)
    np.testing.assert_array_equal(back, mat)
    assert t_step == 0.25


def test_koopman_json_bundle():
    koop = assemble(build_basis("legendre", 3), _random_data(40, seed=14))
    bundle = koopman_to_json(koop)
    assert bundle["n"] == 3 and bundle["t_step"] == 0.1
    np.testing.assert_allclose(np.asarray(bundle["edmd"]), koop.edmd)
