"""Scalar objectives over parameter space.

Four variants share the captured matrices of one dataset:

* ``frobenius``     -- || exp(t L(theta) M^{-1}) - A_J ||_F^2
* ``operator``      -- the same mismatch in the mass-weighted operator norm
* ``constrained``   -- sum_j || K(theta) psi(x_j) - psi(y_j) ||_2^2
* ``gmm``           -- || (1/T) sum_j [K(theta) psi(x_j) - psi(y_j)] || (weighted)

Frobenius and operator evaluations only touch N x N matrices, so their cost
is independent of the number of snapshots; constrained and gmm sweep the
captured snapshot matrices. Parameter vectors outside the admissible set and
overflows of the matrix exponential yield the +inf sentinel so line searches
can back off instead of crashing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .basis import BasisSet, build_snapshot_matrices
from .data import SnapshotData
from .koopman import (
    EigenTruncation,
    GeneratorTemplate,
    KoopmanMatrices,
    NonFiniteMatrixError,
    assemble,
    generator_template,
    _projected_koopman,
    _solve_mass,
)
from .models import SdeModel

__all__ = [
    "ObjectiveSpec",
    "OBJECTIVE_KINDS",
    "make_objective_spec",
    "objective_value",
    "koopman_matrix_at",
    "frobenius_objective",
    "operator_norm_objective",
    "constrained_edmd_objective",
    "gmm_objective",
    "gmm_weight_update",
    "with_target",
    "with_gmm_weight",
]

OBJECTIVE_KINDS = ("frobenius", "operator", "constrained", "gmm")

GMM_RIDGE = 1e-10


@dataclass(frozen=True)
class ObjectiveSpec:
    """Captured state needed to evaluate one objective kind."""

    kind: str
    model: SdeModel
    t_step: float
    koop: KoopmanMatrices
    template: GeneratorTemplate
    target: np.ndarray
    mass_cho: tuple
    j_trunc: int | None = None
    j_effective: int | None = None
    # spectral projector of the data matrix onto its J dominant modes; the
    # frobenius mismatch is measured inside this subspace so that truncation
    # excludes (rather than zeroes) the discarded modes
    projector: np.ndarray | None = None
    psi_x: np.ndarray | None = None
    psi_y: np.ndarray | None = None
    gmm_weight: np.ndarray | None = None
    gmm_weight_cho: tuple | None = None
    mass_sqrt: np.ndarray | None = None
    mass_inv_sqrt: np.ndarray | None = None

    @property
    def n_basis(self) -> int:
        return self.koop.n_basis


def make_objective_spec(
    kind: str,
    model: SdeModel,
    basis: BasisSet,
    data: SnapshotData,
    j_trunc: int | None = None,
    gmm_weight: np.ndarray | None = None,
) -> ObjectiveSpec:
    """Assemble matrices from data and capture everything the objective needs."""
    if kind not in OBJECTIVE_KINDS:
        raise ValueError(f"kind must be one of {OBJECTIVE_KINDS}")
    koop = assemble(basis, data)
    template = generator_template(basis, data, model)
    mass_cho, _ = _solve_mass(koop.mass)

    target = koop.edmd
    j_eff = None
    projector = None
    if kind == "frobenius" and j_trunc is not None and j_trunc != koop.n_basis:
        decomp = EigenTruncation(koop.edmd)
        j_eff, _ = decomp.effective_rank(j_trunc)
        target = decomp.truncate(j_trunc)
        projector = decomp.projector(j_trunc)

    psi_x = psi_y = None
    if kind in ("constrained", "gmm"):
        psi_x, psi_y = build_snapshot_matrices(basis, data)

    mass_sqrt = mass_inv_sqrt = None
    if kind == "operator":
        mass_sqrt, mass_inv_sqrt = _mass_square_roots(koop.mass)

    weight_cho = None
    if gmm_weight is not None:
        gmm_weight = np.asarray(gmm_weight, dtype=float)
        weight_cho = _factor_weight(gmm_weight)

    return ObjectiveSpec(
        kind=kind,
        model=model,
        t_step=data.t_step,
        koop=koop,
        template=template,
        target=target,
        mass_cho=mass_cho,
        j_trunc=j_trunc,
        j_effective=j_eff,
        projector=projector,
        psi_x=psi_x,
        psi_y=psi_y,
        gmm_weight=gmm_weight,
        gmm_weight_cho=weight_cho,
        mass_sqrt=mass_sqrt,
        mass_inv_sqrt=mass_inv_sqrt,
    )


def _mass_square_roots(mass: np.ndarray):
    eigs, vecs = scipy.linalg.eigh(mass)
    if eigs[0] <= 0:
        raise ValueError("mass matrix is not symmetric positive definite")
    root = np.sqrt(eigs)
    return (vecs * root) @ vecs.T, (vecs / root) @ vecs.T


def _factor_weight(weight: np.ndarray):
    try:
        return scipy.linalg.cho_factor(weight, lower=True)
    except scipy.linalg.LinAlgError:
        raise ValueError("GMM weight matrix is singular or not SPD") from None


def with_target(spec: ObjectiveSpec, target: np.ndarray) -> ObjectiveSpec:
    """Spec with a replaced data-side matrix (planted-solution studies)."""
    return replace(spec, target=np.asarray(target, dtype=float))


def with_gmm_weight(spec: ObjectiveSpec, weight: np.ndarray) -> ObjectiveSpec:
    weight = np.asarray(weight, dtype=float)
    return replace(spec, gmm_weight=weight, gmm_weight_cho=_factor_weight(weight))


def koopman_matrix_at(spec: ObjectiveSpec, theta) -> np.ndarray | None:
    """exp(t L(theta) M^{-1}), or None when theta is outside the admissible
    set or the exponential is non-finite (sentinel contract)."""
    theta = np.asarray(theta, dtype=float)
    if not spec.model.in_param_space(theta):
        return None
    try:
        return _projected_koopman(spec.template, spec.mass_cho, theta, spec.t_step)
    except NonFiniteMatrixError:
        return None


def frobenius_objective(spec: ObjectiveSpec, theta) -> float:
    koop = koopman_matrix_at(spec, theta)
    if koop is None:
        return math.inf
    diff = koop - spec.target
    if spec.projector is not None:
        diff = diff @ spec.projector
    return float(np.sum(diff * diff))


def operator_norm_objective(spec: ObjectiveSpec, theta) -> float:
    """Largest singular value of M^{1/2} (K(theta) - A) M^{-1/2}."""
    if spec.mass_sqrt is None:
        raise ValueError("spec was not captured for the operator-norm objective")
    koop = koopman_matrix_at(spec, theta)
    if koop is None:
        return math.inf
    diff = koop - spec.target
    sv = scipy.linalg.svdvals(spec.mass_sqrt @ diff @ spec.mass_inv_sqrt)
    return float(sv[0])


def constrained_edmd_objective(spec: ObjectiveSpec, theta) -> float:
    if spec.psi_x is None:
        raise ValueError("spec was not captured with snapshot matrices")
    koop = koopman_matrix_at(spec, theta)
    if koop is None:
        return math.inf
    resid = koop @ spec.psi_x - spec.psi_y
    return float(np.sum(resid * resid))


def gmm_objective(spec: ObjectiveSpec, theta) -> float:
    """Weighted norm of the mean moment residual; the sum over data is taken
    inside the norm, unlike the constrained objective."""
    if spec.psi_x is None:
        raise ValueError("spec was not captured with snapshot matrices")
    koop = koopman_matrix_at(spec, theta)
    if koop is None:
        return math.inf
    resid = koop @ spec.psi_x - spec.psi_y
    mean = resid.mean(axis=1)
    if spec.gmm_weight_cho is None:
        return float(math.sqrt(np.dot(mean, mean)))
    solved = scipy.linalg.cho_solve(spec.gmm_weight_cho, mean)
    return float(math.sqrt(np.dot(mean, solved)))


def gmm_weight_update(spec: ObjectiveSpec, theta) -> np.ndarray:
    """Empirical covariance of the moment residuals at theta, ridge-stabilised."""
    if spec.psi_x is None:
        raise ValueError("spec was not captured with snapshot matrices")
    koop = koopman_matrix_at(spec, theta)
    if koop is None:
        raise ValueError("theta is outside the admissible parameter set")
    resid = koop @ spec.psi_x - spec.psi_y
    cov = np.einsum("it,jt->ij", resid, resid) / resid.shape[1]
    cov = 0.5 * (cov + cov.T)
    ridge = GMM_RIDGE * np.trace(cov) / cov.shape[0]
    return cov + ridge * np.eye(cov.shape[0])


_DISPATCH = {
    "frobenius": frobenius_objective,
    "operator": operator_norm_objective,
    "constrained": constrained_edmd_objective,
    "gmm": gmm_objective,
}


def objective_value(spec: ObjectiveSpec, theta) -> float:
    return _DISPATCH[spec.kind](spec, theta)
