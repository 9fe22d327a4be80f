"""Parameterised one-dimensional SDE families.

Each model describes the Ito equation

    dX_t = a(X_t; theta) dt + b(X_t; theta) dW_t

through its drift ``a``, volatility ``b``, and the coefficients of its
infinitesimal generator

    L(theta) g = a g' + (b^2 / 2) g''.

The generator is linear in a small set of scalar functions of theta, which is
what makes the precomputed generator templates in :mod:`koopsde.koopman`
possible: ``L(theta) = sum_m coeff_m(theta) * integral(weight_m * psi^(order_m) psi^T)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "GeneratorTerm",
    "GeneratorCoefficients",
    "SdeModel",
    "ornstein_uhlenbeck",
    "bounded_mean_reversion",
    "get_model",
    "generator_coefficients",
    "generator_apply",
]


@dataclass(frozen=True)
class GeneratorTerm:
    """One scalar-times-matrix term of the generator.

    ``coeff`` maps theta to a scalar, ``weight`` is a state-dependent factor
    (vectorised over x), and ``order`` selects the basis-derivative order the
    term acts on (1 for d/dx, 2 for d^2/dx^2).
    """

    coeff: Callable[[np.ndarray], float]
    weight: Callable[[np.ndarray], np.ndarray]
    order: int


@dataclass(frozen=True)
class GeneratorCoefficients:
    """Generator written as c_drift * d/dx + c_diff * d^2/dx^2."""

    c_drift: Callable[[float], float]
    c_diff: Callable[[float], float]


@dataclass(frozen=True)
class SdeModel:
    """A named, parameterised scalar SDE.

    Attributes
    ----------
    name : str
        Model identifier, ``"ou"`` or ``"bmr"``.
    dim_theta : int
        Length of the parameter vector.
    drift, volatility : callables
        ``a(x, theta)`` and ``b(x, theta)``; vectorised in ``x``.
    milstein_correction : callable
        The analytic ``b b' / 2`` entering the Milstein scheme.
    generator_terms : sequence of GeneratorTerm
        Decomposition of L(theta) into theta-scalars times state integrals.
    state_space : (float, float)
        Closed interval the process lives on (infinite endpoints allowed).
    """

    name: str
    dim_theta: int
    drift: Callable
    volatility: Callable
    milstein_correction: Callable
    generator_terms: Sequence[GeneratorTerm] = field(repr=False)
    state_space: tuple = (-math.inf, math.inf)

    def in_param_space(self, theta) -> bool:
        """Whether theta lies in the admissible parameter set."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim_theta,) or not np.all(np.isfinite(theta)):
            return False
        if self.name == "ou":
            return theta[0] > 0.0
        if self.name == "bmr":
            return theta[0] > 0.0 and theta[1] > 0.0
        return True

    def check_theta(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim_theta,):
            raise ValueError(
                f"model {self.name!r} expects {self.dim_theta} parameters, "
                f"got shape {theta.shape}"
            )
        return theta

    def canonicalize(self, theta) -> np.ndarray:
        """Resolve sign ambiguities of parameters the dynamics cannot identify.

        OU volatility enters only through theta3^2, so -theta3 and theta3
        describe the same law; estimates are reported with theta3 >= 0.
        """
        theta = self.check_theta(theta).copy()
        if self.name == "ou":
            theta[2] = abs(theta[2])
        return theta


def ornstein_uhlenbeck() -> SdeModel:
    """Mean-reverting process dX = theta1 (theta2 - X) dt + theta3 dW on R."""

    def drift(x, theta):
        return theta[0] * (theta[1] - x)

    def volatility(x, theta):
        return theta[2] * np.ones_like(np.asarray(x, dtype=float))

    def correction(x, theta):
        # constant volatility: b' = 0, Milstein reduces to Euler-Maruyama
        return np.zeros_like(np.asarray(x, dtype=float))

    terms = (
        GeneratorTerm(lambda th: th[0] * th[1], lambda x: np.ones_like(x), 1),
        GeneratorTerm(lambda th: -th[0], lambda x: x, 1),
        GeneratorTerm(lambda th: 0.5 * th[2] ** 2, lambda x: np.ones_like(x), 2),
    )
    return SdeModel(
        name="ou",
        dim_theta=3,
        drift=drift,
        volatility=volatility,
        milstein_correction=correction,
        generator_terms=terms,
    )


def bounded_mean_reversion() -> SdeModel:
    """dX = -2 theta1 X dt + sqrt(2 theta2 (1 - X^2)) dW, confined to (-1, 1)."""

    def drift(x, theta):
        return -2.0 * theta[0] * x

    def volatility(x, theta):
        inside = 2.0 * theta[1] * (1.0 - np.asarray(x, dtype=float) ** 2)
        return np.sqrt(inside)

    def correction(x, theta):
        # b b'/2 = -theta2 * x, exact; avoids the 1/sqrt(1-x^2) blow-up
        return -theta[1] * np.asarray(x, dtype=float)

    terms = (
        GeneratorTerm(lambda th: -2.0 * th[0], lambda x: x, 1),
        GeneratorTerm(lambda th: th[1], lambda x: 1.0 - x**2, 2),
    )
    return SdeModel(
        name="bmr",
        dim_theta=2,
        drift=drift,
        volatility=volatility,
        milstein_correction=correction,
        generator_terms=terms,
        state_space=(-1.0, 1.0),
    )


_MODELS = {"ou": ornstein_uhlenbeck, "bmr": bounded_mean_reversion}


def get_model(name: str) -> SdeModel:
    try:
        return _MODELS[name.lower()]()
    except KeyError:
        raise ValueError(f"unknown model {name!r}; choose from {sorted(_MODELS)}") from None


def generator_coefficients(model: SdeModel, theta) -> GeneratorCoefficients:
    """The drift and diffusion coefficients of L(theta) for a fixed theta."""
    theta = model.check_theta(theta)

    def c_drift(x):
        return model.drift(x, theta)

    def c_diff(x):
        return 0.5 * model.volatility(x, theta) ** 2

    return GeneratorCoefficients(c_drift=c_drift, c_diff=c_diff)


def generator_apply(model: SdeModel, theta, x: float, dg, d2g) -> float:
    """Apply the generator to a function given its derivative callables.

    ``dg`` and ``d2g`` evaluate g' and g''; returns
    a(x; theta) g'(x) + (b(x; theta)^2 / 2) g''(x).
    """
    theta = model.check_theta(theta)
    a = model.drift(x, theta)
    half_b2 = 0.5 * model.volatility(x, theta) ** 2
    return float(a * dg(x) + half_b2 * d2g(x))
