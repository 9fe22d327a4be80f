"""koopsde: SDE parameter estimation by matching Koopman matrix representations.

The data-driven EDMD matrix of snapshot pairs is compared against the
generator-implied matrix exponential exp(t L(theta) M^{-1}); minimising their
distance over theta recovers the SDE parameters. Includes exact and Milstein
simulators, three basis families, four objective variants, a quasi-Newton
driver, a scikit-learn style estimator, and a benchmark harness.
"""

from .basis import (
    BasisSet,
    basis_from_json,
    basis_to_json,
    build_basis,
    build_snapshot_matrices,
    eval_basis,
    make_rbf_centers,
    make_rbf_centers_fixed,
)
from .bench import (
    EML_REFERENCE,
    AllPathsFailedError,
    BasisFactory,
    BatchStats,
    ConvergenceResult,
    CsvSource,
    GridResult,
    PathRecord,
    SimSource,
    Variant,
    compare_variants,
    compute_batch_stats,
    convergence_study,
    eigscan,
    read_records_csv,
    run_batch,
    write_records_csv,
)
from .data import SnapshotCsvError, SnapshotData, read_snapshot_csv, write_snapshot_csv
from .estimator import KoopmanSdeEstimator
from .koopman import (
    EigenTruncation,
    GeneratorTemplate,
    IllConditionedMassError,
    KoopmanMatrices,
    NonFiniteMatrixError,
    TruncationUnavailableError,
    assemble,
    eigen_truncate,
    generator_template,
    koopman_to_json,
    perron_frobenius_matrix,
    projected_koopman_matrix,
    read_matrix_csv,
    write_matrix_csv,
)
from .models import (
    GeneratorCoefficients,
    GeneratorTerm,
    SdeModel,
    bounded_mean_reversion,
    generator_apply,
    generator_coefficients,
    get_model,
    ornstein_uhlenbeck,
)
from .objectives import (
    OBJECTIVE_KINDS,
    ObjectiveSpec,
    constrained_edmd_objective,
    frobenius_objective,
    gmm_objective,
    gmm_weight_update,
    koopman_matrix_at,
    make_objective_spec,
    objective_value,
    operator_norm_objective,
    with_gmm_weight,
    with_target,
)
from .optimize import (
    EstimateResult,
    GradientUnavailableError,
    OptimizerConfig,
    classify_failure,
    estimate,
    estimate_gmm_reweighted,
    fd_gradient,
    minimize_bfgs,
)
from .simulate import SimConfig, milstein_step, ou_exact_step, simulate_path, simulate_snapshots

__version__ = "0.1.0"
