"""Regularization-path fitting and EBIC penalty selection.

The path is a descending log-spaced grid from lambda_max (the smallest
penalty with an all-zero solution) down to 0.01 * lambda_max, fitted with
warm starts.  Each fit is scored by the extended BIC

    EBIC(lam) = -2 loglik + df * log(n) + 2 * df * xi * log(p),

with df the number of nonzero coefficients (intercept excluded) and the
likelihood evaluated without response-only carrier terms.  When several grid
points share a support size, only the first (largest-lambda) one competes,
and EBIC ties resolve toward the larger lambda.
"""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .constraints import ConstraintSet
from .errors import SelectionError
from .families import Dataset, Family, neg_loglik
from .solver import FitResult, SolverOptions, fit


def lambda_max(dataset: Dataset, family: Family, cs: ConstraintSet) -> float:
    """Smallest penalty at which the fitted coefficient vector is all zero.

    Evaluated at beta = 0 with the intercept at the canonical link of the
    response mean (the intercept-only stationary point), so fits at or above
    this value keep beta = 0 exactly.
    """
    family.validate_response(dataset.y)
    Zt = cs.reduce_design(dataset.Z)
    n = Zt.shape[0]
    b0 = family.link(float(np.mean(dataset.y))) if dataset.has_intercept else 0.0
    mu = family.mean(np.full(n, b0))
    grad = cs.project(Zt.T @ (dataset.y - mu) / n)
    return float(np.max(np.abs(grad)))


def xi_rule(n: int, p: int) -> float:
    """EBIC weight xi = 1 - 1/(2 delta) with delta = log p / log n, delta >= 0.5."""
    if n < 2 or p < 1:
        raise ValueError("need n >= 2 and p >= 1")
    delta = np.log(p) / np.log(n)
    delta = max(delta, 0.5)
    return float(1.0 - 1.0 / (2.0 * delta))


def ebic(
    fit_result: FitResult,
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
    xi: float | None = None,
) -> float:
    """Extended BIC of a fitted model; smaller is better."""
    if xi is None:
        xi = xi_rule(dataset.n, dataset.p)
    if not 0.0 <= xi <= 1.0:
        raise ValueError("xi must lie in [0, 1]")
    Zt = cs.reduce_design(dataset.Z)
    intercept = fit_result.intercept if dataset.has_intercept else 0.0
    nll = neg_loglik(family, fit_result.beta, intercept, dataset.y, Zt)
    df = int(np.count_nonzero(fit_result.beta))
    n, p = dataset.n, dataset.p
    return float(2.0 * n * nll + df * np.log(n) + 2.0 * df * xi * np.log(p))


def gamma_rule(lambda_opt: float) -> float:
    """De-biasing QP tolerance tied to the selected penalty: 0.01 * lambda."""
    if lambda_opt <= 0:
        raise ValueError("selected penalty must be positive")
    return 0.01 * lambda_opt


@dataclass
class PathResult:
    """All per-grid-point fits plus the EBIC-selected index."""

    lambdas: np.ndarray
    fits: list[FitResult]
    ebic_values: np.ndarray
    selected_index: int
    xi: float

    @property
    def selected(self) -> FitResult:
        return self.fits[self.selected_index]

    @property
    def lambda_opt(self) -> float:
        return float(self.lambdas[self.selected_index])


def lambda_grid(lam_max: float, grid_size: int = 50) -> np.ndarray:
    """Descending log-spaced grid from lam_max to 0.01 * lam_max."""
    if grid_size < 2:
        raise ValueError("grid must have at least 2 points")
    if lam_max <= 0:
        raise ValueError("lambda_max must be positive")
    return np.geomspace(lam_max, 0.01 * lam_max, grid_size)


def select_lambda(
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
    grid_size: int = 50,
    opts: SolverOptions | None = None,
    xi: float | None = None,
    warm_start: bool = True,
    n_jobs: int = 1,
) -> PathResult:
    """Fit the descending penalty path and pick the EBIC minimizer.

    warm_start=True (default) reuses each solution as the next starting
    point; warm_start=False fits grid points independently and may fan them
    out over n_jobs threads.
    """
    opts = opts or SolverOptions()
    if xi is None:
        xi = xi_rule(dataset.n, dataset.p)
    lam_max = lambda_max(dataset, family, cs)
    lambdas = lambda_grid(lam_max, grid_size)

    fits: list[FitResult] = []
    if warm_start:
        beta0 = None
        intercept0 = None
        t_prev = opts.t0
        for lam in lambdas:
            step_opts = SolverOptions(**{**opts.__dict__, "t0": t_prev})
            res = fit(dataset, family, cs, float(lam), step_opts, beta0, intercept0)
            fits.append(res)
            beta0 = res.beta
            intercept0 = res.intercept if dataset.has_intercept else None
            t_prev = res.final_step
    else:
        def one(lam):
            return fit(dataset, family, cs, float(lam), opts)

        if n_jobs > 1:
            with ThreadPoolExecutor(max_workers=n_jobs) as pool:
                fits = list(pool.map(one, lambdas))
        else:
            fits = [one(lam) for lam in lambdas]

    n_bad = sum(not f.converged for f in fits)
    if n_bad == len(fits):
        raise SelectionError("no fit on the penalty grid converged")
    if n_bad:
        warnings.warn(
            f"{n_bad} of {len(fits)} path fits did not converge",
            RuntimeWarning,
            stacklevel=2,
        )

    values = np.array([ebic(f, dataset, family, cs, xi) for f in fits])

    # one candidate per support size: the largest-lambda representative
    seen: set[int] = set()
    best_idx = None
    for i, f in enumerate(fits):
        df = int(np.count_nonzero(f.beta))
        if df in seen:
            continue
        seen.add(df)
        if best_idx is None or values[i] < values[best_idx]:
            best_idx = i

    return PathResult(
        lambdas=lambdas,
        fits=fits,
        ebic_values=values,
        selected_index=int(best_idx),
        xi=float(xi),
    )
