"""Exponential-family building blocks for the penalized GLM solver.

Each family is determined by its log-partition function A: the mean of the
response is A'(eta) and the variance is A''(eta), with eta the linear
predictor.  Only the canonical-link families used elsewhere in the package
are provided: logistic (Bernoulli), gaussian (unit variance), and poisson.

All functions are vectorized over eta.  The negative log-likelihood here is
the scaled objective used by the solver,

    nll(beta, b0) = -(1/n) * [ Y'eta - sum_i A(eta_i) ],    eta = Z beta + b0,

which drops the carrier h(y) terms; they do not depend on the parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

# exp() overflows float64 just above this; poisson linear predictors are
# clamped here rather than letting inf propagate into the solver.
_POISSON_ETA_MAX = 700.0


@dataclass(frozen=True)
class Family:
    """An exponential family with canonical link, defined by A(eta)."""

    name: str

    def log_partition(self, eta: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def mean(self, eta: np.ndarray) -> np.ndarray:
        """A'(eta), the mean response at linear predictor eta."""
        raise NotImplementedError

    def variance(self, eta: np.ndarray) -> np.ndarray:
        """A''(eta), the response variance at linear predictor eta."""
        raise NotImplementedError

    def link(self, mu: float) -> float:
        """Canonical link: map a mean into the linear-predictor scale."""
        raise NotImplementedError

    def validate_response(self, y: np.ndarray) -> None:
        if not np.all(np.isfinite(y)):
            raise ValueError(f"{self.name} response contains non-finite values")


@dataclass(frozen=True)
class Logistic(Family):
    name: str = "logistic"

    def log_partition(self, eta):
        # log(1 + e^eta) without overflow; for large eta this is
        # eta + log1p(e^-eta), which logaddexp computes internally.
        return np.logaddexp(0.0, eta)

    def mean(self, eta):
        return expit(eta)

    def variance(self, eta):
        mu = expit(eta)
        return mu * (1.0 - mu)

    def link(self, mu):
        eps = 1e-12
        mu = min(max(float(mu), eps), 1.0 - eps)
        return float(np.log(mu / (1.0 - mu)))

    def validate_response(self, y):
        super().validate_response(y)
        if not np.all((y == 0.0) | (y == 1.0)):
            raise ValueError("logistic response must be coded 0/1")


@dataclass(frozen=True)
class Gaussian(Family):
    name: str = "gaussian"

    def log_partition(self, eta):
        return 0.5 * np.square(eta)

    def mean(self, eta):
        return np.asarray(eta, dtype=float)

    def variance(self, eta):
        return np.ones_like(np.asarray(eta, dtype=float))

    def link(self, mu):
        return float(mu)


@dataclass(frozen=True)
class Poisson(Family):
    name: str = "poisson"

    def log_partition(self, eta):
        return np.exp(self._clamp(eta))

    def mean(self, eta):
        return np.exp(self._clamp(eta))

    def variance(self, eta):
        return np.exp(self._clamp(eta))

    def link(self, mu):
        if mu <= 0:
            raise ValueError("poisson mean must be positive to take log link")
        return float(np.log(mu))

    def validate_response(self, y):
        super().validate_response(y)
        if np.any(y < 0):
            raise ValueError("poisson response must be nonnegative")

    @staticmethod
    def _clamp(eta):
        eta = np.asarray(eta, dtype=float)
        if np.any(eta > _POISSON_ETA_MAX):
            warnings.warn(
                "poisson linear predictor exceeded %g; clamping" % _POISSON_ETA_MAX,
                RuntimeWarning,
                stacklevel=3,
            )
            eta = np.minimum(eta, _POISSON_ETA_MAX)
        return eta


_FAMILIES = {"logistic": Logistic(), "gaussian": Gaussian(), "poisson": Poisson()}


def get_family(name: str) -> Family:
    """Look up a family by name ('logistic', 'gaussian', 'poisson')."""
    try:
        return _FAMILIES[name]
    except KeyError:
        raise ValueError(
            f"unknown family {name!r}; choose from {sorted(_FAMILIES)}"
        ) from None


@dataclass
class Dataset:
    """A design matrix (log-compositions or any covariates) plus response.

    has_intercept controls whether downstream fits carry an unpenalized,
    unconstrained intercept alongside the coefficient vector.
    """

    y: np.ndarray
    Z: np.ndarray
    has_intercept: bool = True
    names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).ravel()
        self.Z = np.asarray(self.Z, dtype=float)
        if self.Z.ndim != 2:
            raise ValueError("Z must be a 2-d array")
        n, p = self.Z.shape
        if n < 1 or p < 1:
            raise ValueError("Z must have at least one row and one column")
        if self.y.shape[0] != n:
            raise ValueError(
                f"response length {self.y.shape[0]} does not match {n} rows of Z"
            )
        if not np.all(np.isfinite(self.Z)):
            raise ValueError("Z contains non-finite values")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("y contains non-finite values")
        if not self.names:
            self.names = [f"z{j + 1}" for j in range(p)]
        elif len(self.names) != p:
            raise ValueError("names length does not match number of columns")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]


def linear_predictor(Z: np.ndarray, beta: np.ndarray, intercept: float = 0.0) -> np.ndarray:
    return Z @ beta + intercept


def neg_loglik(
    family: Family,
    beta: np.ndarray,
    intercept: float,
    y: np.ndarray,
    Z: np.ndarray,
) -> float:
    """-(1/n)[Y'eta - sum_i A(eta_i)], the smooth part of the fit objective."""
    eta = linear_predictor(Z, beta, intercept)
    n = Z.shape[0]
    return float(-(y @ eta - np.sum(family.log_partition(eta))) / n)


def score(
    family: Family,
    beta: np.ndarray,
    intercept: float,
    y: np.ndarray,
    Z: np.ndarray,
) -> np.ndarray:
    """Gradient of -n * neg_loglik in (beta, intercept); intercept slot last.

    This is the raw score Z'(Y - mu) stacked with 1'(Y - mu); callers needing
    the gradient of neg_loglik itself should negate and divide by n.
    """
    eta = linear_predictor(Z, beta, intercept)
    resid = y - family.mean(eta)
    return np.concatenate([Z.T @ resid, [np.sum(resid)]])


def information(
    family: Family,
    beta: np.ndarray,
    Z: np.ndarray,
    intercept: float = 0.0,
) -> np.ndarray:
    """Unnormalized Fisher information Z' V Z with V = diag(A''(eta_i)).

    The optional intercept shifts the linear predictor at which the variance
    weights are evaluated; it contributes no extra row or column.
    """
    eta = linear_predictor(Z, beta, intercept)
    v = family.variance(eta)
    return (Z * v[:, None]).T @ Z
