"""Basis families: Gaussian RBFs, Chebyshev and Legendre polynomials.

All families evaluate pointwise or batched to order-0/1/2 (value, first and
second derivative). Polynomials use their three-term recurrences, with the
derivative recurrences obtained by differentiating term by term; RBFs use the
closed-form derivatives of the Gaussian.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np

from .data import SnapshotData

__all__ = [
    "BasisSet",
    "eval_basis",
    "make_rbf_centers",
    "make_rbf_centers_fixed",
    "build_basis",
    "build_snapshot_matrices",
    "basis_to_json",
    "basis_from_json",
]

_FAMILIES = ("rbf", "chebyshev", "legendre")


@dataclass(frozen=True)
class BasisSet:
    """An ordered family of N linearly independent basis functions."""

    family: str
    n_basis: int
    centers: np.ndarray | None = None
    length_scale: float | None = None
    domain: tuple = (-1.0, 1.0)

    def __post_init__(self):
        if self.family not in _FAMILIES:
            raise ValueError(f"family must be one of {_FAMILIES}")
        if self.n_basis < 1:
            raise ValueError("n_basis must be positive")
        if self.family == "rbf":
            if self.centers is None or self.length_scale is None:
                raise ValueError("RBF basis needs centers and length_scale")
            centers = np.asarray(self.centers, dtype=float)
            if centers.shape != (self.n_basis,):
                raise ValueError("centers must have length n_basis")
            if np.any(np.diff(centers) <= 0):
                raise ValueError("RBF centers must be strictly increasing")
            if self.length_scale <= 0:
                raise ValueError("length_scale must be positive")
            object.__setattr__(self, "centers", centers)


def make_rbf_centers(x_data, n_basis: int) -> tuple[np.ndarray, float]:
    """Data-adaptive centers: equally spaced, one spacing inside the data range.

    With spacing ``dx = (max - min) / (N + 1)`` the first and last centers sit
    at ``min + dx`` and ``max - dx``; the length scale is ``1 / dx``.
    """
    if n_basis < 2:
        raise ValueError("need at least two basis functions")
    x_data = np.asarray(x_data, dtype=float)
    lo, hi = float(np.min(x_data)), float(np.max(x_data))
    if not hi > lo:
        raise ValueError("degenerate data: max(x) must exceed min(x)")
    dx = (hi - lo) / (n_basis + 1)
    centers = lo + dx * np.arange(1, n_basis + 1)
    return centers, 1.0 / dx


def make_rbf_centers_fixed(n_basis: int) -> tuple[np.ndarray, float]:
    """Deterministic centers spread over [-1, 1], spacing-sized length scale."""
    if n_basis < 2:
        raise ValueError("need at least two basis functions")
    centers = -1.0 + 2.0 * np.arange(n_basis) / (n_basis - 1)
    return centers, 2.0 / (n_basis - 1)


def build_basis(family: str, n_basis: int, x_data=None, rbf_mode: str = "data") -> BasisSet:
    """Convenience constructor used by the CLI and the bench harness."""
    family = family.lower()
    if family == "rbf":
        if rbf_mode == "data":
            if x_data is None:
                raise ValueError("rbf_mode='data' needs x_data")
            centers, scale = make_rbf_centers(x_data, n_basis)
        elif rbf_mode == "fixed":
            centers, scale = make_rbf_centers_fixed(n_basis)
        else:
            raise ValueError("rbf_mode must be 'data' or 'fixed'")
        return BasisSet(family="rbf", n_basis=n_basis, centers=centers, length_scale=scale)
    return BasisSet(family=family, n_basis=n_basis)


def eval_basis(basis: BasisSet, x, order: int = 0) -> np.ndarray:
    """Evaluate all basis functions (or a derivative order) at x.

    Returns shape (N,) for scalar x and (N, len(x)) for arrays.
    """
    if order not in (0, 1, 2):
        raise ValueError("order must be 0, 1 or 2")
    scalar = np.isscalar(x) or np.ndim(x) == 0
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if basis.family == "rbf":
        out = _rbf_eval(basis, x, order)
    else:
        lo, hi = basis.domain
        if np.any(x < lo - 1e-12) or np.any(x > hi + 1e-12):
            warnings.warn(
                f"{basis.family} basis evaluated outside [{lo}, {hi}]; "
                "values are extrapolated as-is",
                stacklevel=2,
            )
        out = _poly_eval(basis, x, order)
    return out[:, 0] if scalar else out


def _rbf_eval(basis: BasisSet, x, order):
    l2 = basis.length_scale**2
    diff = x[None, :] - basis.centers[:, None]
    g = np.exp(-l2 * diff**2)
    if order == 0:
        return g
    if order == 1:
        return -2.0 * l2 * diff * g
    return (4.0 * l2**2 * diff**2 - 2.0 * l2) * g


def _poly_eval(basis: BasisSet, x, order):
    n, t = basis.n_basis, x.size
    p = np.zeros((n, t))
    dp = np.zeros((n, t)) if order >= 1 else None
    d2p = np.zeros((n, t)) if order == 2 else None
    p[0] = 1.0
    if n > 1:
        p[1] = x
        if order >= 1:
            dp[1] = 1.0
    for k in range(1, n - 1):
        if basis.family == "chebyshev":
            p[k + 1] = 2.0 * x * p[k] - p[k - 1]
            if order >= 1:
                dp[k + 1] = 2.0 * p[k] + 2.0 * x * dp[k] - dp[k - 1]
            if order == 2:
                d2p[k + 1] = 4.0 * dp[k] + 2.0 * x * d2p[k] - d2p[k - 1]
        else:  # legendre, degree index k
            a = (2.0 * k + 1.0) / (k + 1.0)
            b = k / (k + 1.0)
            p[k + 1] = a * x * p[k] - b * p[k - 1]
            if order >= 1:
                dp[k + 1] = a * (p[k] + x * dp[k]) - b * dp[k - 1]
            if order == 2:
                d2p[k + 1] = a * (2.0 * dp[k] + x * d2p[k]) - b * d2p[k - 1]
    if order == 0:
        return p
    return dp if order == 1 else d2p


def build_snapshot_matrices(basis: BasisSet, data: SnapshotData):
    """Stack basis evaluations columnwise: column j of PsiX is psi(x_j)."""
    psi_x = eval_basis(basis, data.x, 0)
    psi_y = eval_basis(basis, data.y, 0)
    return psi_x, psi_y


def basis_to_json(basis: BasisSet) -> str:
    obj = {"family": basis.family, "n_basis": basis.n_basis}
    if basis.family == "rbf":
        obj["centers"] = [float(c) for c in basis.centers]
        obj["length_scale"] = float(basis.length_scale)
    return json.dumps(obj)


def basis_from_json(text: str) -> BasisSet:
    obj = json.loads(text)
    centers = obj.get("centers")
    return BasisSet(
        family=obj["family"],
        n_basis=int(obj["n_basis"]),
        centers=None if centers is None else np.asarray(centers, dtype=float),
        length_scale=obj.get("length_scale"),
    )
