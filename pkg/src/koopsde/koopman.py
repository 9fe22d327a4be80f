"""Empirical Koopman matrices and their generator-implied counterparts.

Given snapshot matrices Psi(X), Psi(Y) this module assembles

    M = (1/T) Psi(X) Psi(X)^T        (mass / Gramian)
    Khat = (1/T) Psi(Y) Psi(X)^T     (cross matrix)
    A = Khat M^{-1}                  (EDMD matrix)

and the per-coefficient generator integrals that let L(theta) be rebuilt by
scalar-matrix combinations. The model-implied Koopman matrix is
exp(t L(theta) M^{-1}), computed with scaling-and-squaring (Pade).

Gram-type reductions over snapshots are accumulated with a fixed sequential
einsum so results do not depend on BLAS threading.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import BasisSet, build_snapshot_matrices, eval_basis
from .data import SnapshotData
from .models import SdeModel

__all__ = [
    "KoopmanMatrices",
    "GeneratorTemplate",
    "EigenTruncation",
    "IllConditionedMassError",
    "TruncationUnavailableError",
    "NonFiniteMatrixError",
    "assemble",
    "generator_template",
    "projected_koopman_matrix",
    "eigen_truncate",
    "perron_frobenius_matrix",
    "write_matrix_csv",
    "read_matrix_csv",
    "koopman_to_json",
]

MASS_COND_LIMIT = 1e12
EIGVEC_COND_LIMIT = 1e10


class IllConditionedMassError(ValueError):
    """Mass matrix condition number beyond the solvable range."""

    def __init__(self, cond_mass: float):
        super().__init__(f"mass matrix is ill-conditioned (cond = {cond_mass:.3e})")
        self.cond_mass = cond_mass


class TruncationUnavailableError(RuntimeError):
    """Eigendecomposition too ill-conditioned for a usable truncation."""


class NonFiniteMatrixError(FloatingPointError):
    """A matrix operation overflowed to non-finite values."""


@dataclass(frozen=True)
class KoopmanMatrices:
    mass: np.ndarray
    cross: np.ndarray
    edmd: np.ndarray
    t_step: float
    cond_mass: float

    @property
    def n_basis(self) -> int:
        return self.mass.shape[0]


def _gram(left: np.ndarray, right: np.ndarray) -> np.ndarray:
    # sequential reduction over snapshots; deterministic across thread counts
    return np.einsum("it,jt->ij", left, right) / left.shape[1]


def _solve_mass(mass: np.ndarray):
    """Cholesky factor of M, with the condition number from its spectrum."""
    eigs = scipy.linalg.eigvalsh(mass)
    if eigs[-1] <= 0:
        raise IllConditionedMassError(np.inf)
    cond = np.inf if eigs[0] <= 0 else float(eigs[-1] / eigs[0])
    if not np.isfinite(cond) or cond > MASS_COND_LIMIT:
        raise IllConditionedMassError(cond)
    cho = scipy.linalg.cho_factor(mass, lower=True)
    return cho, cond


def apply_mass_inverse_right(mat: np.ndarray, cho) -> np.ndarray:
    """B M^{-1} through the symmetric factorisation, never an explicit inverse."""
    return scipy.linalg.cho_solve(cho, mat.T).T


def assemble(basis: BasisSet, data: SnapshotData) -> KoopmanMatrices:
    """Mass, cross, and EDMD matrices of a snapshot dataset."""
    psi_x, psi_y = build_snapshot_matrices(basis, data)
    raw = _gram(psi_x, psi_x)
    mass = 0.5 * (raw + raw.T)
    cross = _gram(psi_y, psi_x)
    cho, cond = _solve_mass(mass)
    edmd = apply_mass_inverse_right(cross, cho)
    return KoopmanMatrices(mass=mass, cross=cross, edmd=edmd, t_step=data.t_step, cond_mass=cond)


@dataclass(frozen=True)
class GeneratorTemplate:
    """Precomputed generator integrals, one matrix per model term.

    ``build(theta)`` reconstructs L(theta) exactly as the coefficient-weighted
    sum of the stored matrices, so objective evaluations never touch the data
    again.
    """

    model: SdeModel
    matrices: tuple

    def build(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        out = np.zeros_like(self.matrices[0])
        for term, mat in zip(self.model.generator_terms, self.matrices):
            out = out + term.coeff(theta) * mat
        return out


def generator_template(basis: BasisSet, data: SnapshotData, model: SdeModel) -> GeneratorTemplate:
    """Precompute integral(weight_m(x) psi^(order_m)(x) psi(x)^T dmu) per term."""
    psi0 = eval_basis(basis, data.x, 0)
    derivs = {}
    for term in model.generator_terms:
        if term.order not in derivs:
            derivs[term.order] = eval_basis(basis, data.x, term.order)
    mats = []
    for term in model.generator_terms:
        weighted = derivs[term.order] * term.weight(data.x)[None, :]
        mats.append(_gram(weighted, psi0))
    return GeneratorTemplate(model=model, matrices=tuple(mats))


def projected_koopman_matrix(
    template: GeneratorTemplate, mass: np.ndarray, theta, t_step: float
) -> np.ndarray:
    """exp(t L(theta) M^{-1}); raises NonFiniteMatrixError on overflow."""
    cho, _ = _solve_mass(mass)
    return _projected_koopman(template, cho, theta, t_step)


def _projected_koopman(template: GeneratorTemplate, mass_cho, theta, t_step: float) -> np.ndarray:
    gen = apply_mass_inverse_right(template.build(theta), mass_cho)
    if not np.all(np.isfinite(gen)):
        raise NonFiniteMatrixError("generator matrix is not finite")
    with np.errstate(over="ignore", invalid="ignore"):
        out = scipy.linalg.expm(t_step * gen)
    if not np.all(np.isfinite(out)):
        raise NonFiniteMatrixError("matrix exponential overflowed")
    return out


class EigenTruncation:
    """Sorted eigendecomposition of a real matrix with rank-J reconstruction.

    Eigenvalues are ordered by descending modulus; left vectors are the rows
    of V^{-1}, so w_i^T v_j = delta_ij holds by construction.
    """

    def __init__(self, mat: np.ndarray):
        mat = np.asarray(mat, dtype=float)
        eigvals, right = np.linalg.eig(mat)
        cond = np.linalg.cond(right)
        if not np.isfinite(cond) or cond >= EIGVEC_COND_LIMIT:
            raise TruncationUnavailableError(
                f"eigenvector matrix condition {cond:.3e} exceeds {EIGVEC_COND_LIMIT:.0e}"
            )
        order = np.argsort(-np.abs(eigvals), kind="stable")
        self.eigenvalues = eigvals[order]
        self.right = right[:, order]
        self.left = np.linalg.inv(self.right)
        self.n = mat.shape[0]

    def effective_rank(self, j_trunc: int) -> tuple[int, bool]:
        """Bump J by one when the cut would split a conjugate pair."""
        if not 1 <= j_trunc <= self.n:
            raise ValueError(f"j_trunc must lie in [1, {self.n}]")
        j = j_trunc
        if j < self.n:
            lam = self.eigenvalues
            if abs(lam[j - 1].imag) > 0 and np.isclose(lam[j], lam[j - 1].conjugate()):
                return j + 1, True
        return j, False

    def truncate(self, j_trunc: int) -> np.ndarray:
        j, _ = self.effective_rank(j_trunc)
        out = (self.right[:, :j] * self.eigenvalues[:j]) @ self.left[:j, :]
        return out.real

    def projector(self, j_trunc: int) -> np.ndarray:
        """Spectral projector onto the span of the J dominant modes."""
        j, _ = self.effective_rank(j_trunc)
        return (self.right[:, :j] @ self.left[:j, :]).real


def eigen_truncate(mat: np.ndarray, j_trunc: int) -> np.ndarray:
    """Rank-J spectral reconstruction keeping dominant eigenvalues.

    J = N returns the matrix itself (no decomposition round-trip).
    """
    mat = np.asarray(mat, dtype=float)
    if j_trunc == mat.shape[0]:
        return mat.copy()
    return EigenTruncation(mat).truncate(j_trunc)


def perron_frobenius_matrix(koop: KoopmanMatrices) -> np.ndarray:
    """The forward-operator matrix Khat^T M^{-1}."""
    cho, _ = _solve_mass(koop.mass)
    return apply_mass_inverse_right(koop.cross.T, cho)


def write_matrix_csv(path, mat: np.ndarray, t_step: float) -> None:
    """Row-major CSV: header ``n,t_step``, one line of values, then the rows."""
    mat = np.asarray(mat, dtype=float)
    with open(path, "w") as fh:
        fh.write("n,t_step\n")
        fh.write(f"{mat.shape[0]},{float(t_step)!r}\n")
        for row in mat:
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def read_matrix_csv(path) -> tuple[np.ndarray, float]:
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "n,t_step":
            raise ValueError(f"{path}: expected header 'n,t_step'")
        n_str, t_str = fh.readline().strip().split(",")
        n, t_step = int(n_str), float(t_str)
        rows = [[float(v) for v in fh.readline().strip().split(",")] for _ in range(n)]
    mat = np.asarray(rows)
    if mat.shape != (n, n):
        raise ValueError(f"{path}: expected a {n}x{n} matrix")
    return mat, t_step


def koopman_to_json(koop: KoopmanMatrices) -> dict:
    return {
        "n": koop.n_basis,
        "t_step": koop.t_step,
        "cond_mass": koop.cond_mass,
        "mass": koop.mass.tolist(),
        "cross": koop.cross.tolist(),
        "edmd": koop.edmd.tolist(),
    }
