"""De-biased estimation and confidence intervals for constrained GLM fits.

The penalized estimate beta_hat is corrected with a one-step update

    beta_u = beta_hat + (1/n) M_tilde Zt' (Y - mu(beta_hat)),

where row i of M approximately inverts the weighted Gram matrix
Sigma_hat = Zt' V Zt / n through the quadratic program

    minimize  m' Sigma_hat m
    subject to ||Sigma_hat m - (I - P_C) e_i||_inf <= gamma,

and M_tilde = (I - P_C) M keeps the correction inside the constraint
subspace.  Conditional on the design, beta_u is asymptotically normal with
covariance M_tilde Sigma_hat M_tilde' / n, which yields Wald intervals.

All p row programs share Sigma_hat, so they are solved jointly by an
operator-splitting (ADMM) scheme on the auxiliary variable w = Sigma m,
box-constrained around the target.  The m-update is a fixed linear solve
derived from one symmetric eigendecomposition of Sigma_hat, reused across
rows and iterations; kernel directions of Sigma_hat are pinned to zero, so
returned rows have no component along the constrained directions.

When a row program has not converged within the iteration budget and its
iterate is infeasible, gamma for that row is doubled (warm-started) a
bounded number of times; rows that still fail get no interval.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .constraints import ConstraintSet
from .errors import InferenceError
from .families import Dataset, Family, information
from .solver import FitResult

# eigenvalues below max * this are treated as the kernel of Sigma_hat
_EIG_RTOL = 1e-12


@dataclass
class DebiasOptions:
    admm_rho: float = 1.0
    qp_tol: float = 1e-7
    qp_max_iters: int = 5000
    gamma_growth: float = 2.0
    max_escalations: int = 5
    feas_slack: float = 1e-6
    check_every: int = 10       # iterations between residual checks


@dataclass
class QPReport:
    """Per-row diagnostics of the de-biasing quadratic programs."""

    iterations: int
    gamma_final: np.ndarray
    escalations: np.ndarray
    failed: np.ndarray
    converged: np.ndarray


def sigma_hat(
    fit_result: FitResult,
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
) -> np.ndarray:
    """Weighted Gram matrix Zt' V Zt / n at the fitted coefficients."""
    Zt = cs.reduce_design(dataset.Z)
    intercept = fit_result.intercept if dataset.has_intercept else 0.0
    return information(family, fit_result.beta, Zt, intercept) / dataset.n


class _SigmaEig:
    """Eigendecomposition of Sigma_hat shared across row programs."""

    def __init__(self, sigma: np.ndarray):
        sigma = np.asarray(sigma, dtype=float)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise ValueError("sigma must be square")
        if not np.allclose(sigma, sigma.T, atol=1e-10):
            raise ValueError("sigma must be symmetric")
        lam, Q = np.linalg.eigh(sigma)
        lam = np.maximum(lam, 0.0)
        cut = _EIG_RTOL * (lam[-1] if lam.size else 0.0)
        lam[lam <= cut] = 0.0
        self.lam = lam
        self.Q = Q
        self.positive = lam > 0.0

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Sigma @ X through the eigenbasis."""
        return self.Q @ (self.lam[:, None] * (self.Q.T @ X))


def _solve_columns(
    eig: _SigmaEig,
    B: np.ndarray,
    gamma: np.ndarray,
    opts: DebiasOptions,
) -> tuple[np.ndarray, QPReport]:
    """Solve min x' Sigma x  s.t. ||Sigma x - B[:, j]||_inf <= gamma[j], all j.

    Returns X with column j the solution of program j, plus diagnostics.
    """
    p, ncols = B.shape
    rho = opts.admm_rho
    lam = eig.lam
    Q = eig.Q
    # m-update in the eigenbasis: (2 lam + rho lam^2) xt = rho lam * vt,
    # solved as xt = rho/(2 + rho lam) vt on the positive spectrum
    D = np.where(eig.positive, rho / (2.0 + rho * lam), 0.0)[:, None]

    gamma = np.array(gamma, dtype=float, copy=True)
    gamma0 = gamma.copy()
    escal = np.zeros(ncols, dtype=int)
    W = np.clip(np.zeros((p, ncols)), B - gamma, B + gamma)
    U = np.zeros((p, ncols))
    Xt = np.zeros((p, ncols))         # iterate in the eigenbasis
    S = np.zeros((p, ncols))          # Sigma @ X in the original basis
    done = np.zeros(ncols, dtype=bool)
    total_iters = 0

    for round_no in range(opts.max_escalations + 1):
        W_prev = W.copy()
        for it in range(1, opts.qp_max_iters + 1):
            Xt = D * (Q.T @ (W - U))
            S = Q @ (lam[:, None] * Xt)
            W = np.clip(S + U, B - gamma, B + gamma)
            U += S - W
            total_iters += 1
            if it % opts.check_every == 0 or it == opts.qp_max_iters:
                primal = np.max(np.abs(S - W), axis=0)
                dual = rho * np.max(np.abs(eig.apply(W - W_prev)), axis=0)
                done = (primal <= opts.qp_tol) & (dual <= opts.qp_tol)
                if np.all(done):
                    break
            W_prev = W.copy()

        if np.all(done):
            break
        viol = np.max(np.abs(S - B), axis=0) - gamma
        bad = ~done & (viol > opts.feas_slack)
        if not np.any(bad):
            warnings.warn(
                f"{int(np.sum(~done))} de-biasing row programs stopped at the "
                "iteration budget while feasible; solutions may be loose",
                RuntimeWarning,
                stacklevel=3,
            )
            break
        if round_no == opts.max_escalations:
            warnings.warn(
                f"{int(np.sum(bad))} de-biasing row programs remain infeasible "
                "after exhausting gamma escalations",
                RuntimeWarning,
                stacklevel=3,
            )
            break
        gamma[bad] *= opts.gamma_growth
        escal[bad] += 1
        warnings.warn(
            f"escalated gamma for {int(np.sum(bad))} de-biasing rows "
            f"(round {round_no + 1})",
            RuntimeWarning,
            stacklevel=3,
        )

    X = Q @ Xt
    viol = np.max(np.abs(S - B), axis=0) - gamma
    failed = ~done & (viol > opts.feas_slack)
    report = QPReport(
        iterations=total_iters,
        gamma_final=gamma,
        escalations=escal,
        failed=failed,
        converged=done.copy(),
    )
    return X, report


def solve_debias_row(
    sigma: np.ndarray,
    target: np.ndarray,
    gamma: float,
    opts: DebiasOptions | None = None,
) -> np.ndarray:
    """Solve one row program min m' Sigma m s.t. ||Sigma m - target||_inf <= gamma."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    opts = opts or DebiasOptions()
    eig = _SigmaEig(sigma)
    target = np.asarray(target, dtype=float).reshape(-1, 1)
    X, report = _solve_columns(eig, target, np.array([gamma]), opts)
    if report.failed[0]:
        raise InferenceError(
            f"row program infeasible after {report.escalations[0]} gamma escalations"
        )
    return X[:, 0]


def build_M(
    sigma: np.ndarray,
    cs: ConstraintSet,
    gamma: float | np.ndarray,
    opts: DebiasOptions | None = None,
) -> tuple[np.ndarray, QPReport]:
    """Stack all p row programs with targets (I - P_C) e_i into M (rows m_i)."""
    opts = opts or DebiasOptions()
    eig = _SigmaEig(sigma)
    p = sigma.shape[0]
    B = cs.project(np.eye(p))       # symmetric, so rows == columns
    gamma_vec = np.broadcast_to(np.asarray(gamma, dtype=float), (p,))
    if np.any(gamma_vec <= 0):
        raise ValueError("gamma must be positive")
    X, report = _solve_columns(eig, B, gamma_vec, opts)
    return X.T, report


def build_M_tilde(M: np.ndarray, cs: ConstraintSet) -> np.ndarray:
    """(I - P_C) M: project each column of M onto the constraint subspace."""
    M = np.asarray(M, dtype=float)
    return cs.project(M.T).T


def debias(
    fit_result: FitResult,
    M_tilde: np.ndarray,
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
) -> np.ndarray:
    """One-step corrected estimate beta_hat + (1/n) M_tilde Zt' (Y - mu)."""
    Zt = cs.reduce_design(dataset.Z)
    intercept = fit_result.intercept if dataset.has_intercept else 0.0
    eta = Zt @ fit_result.beta + intercept
    resid = dataset.y - family.mean(eta)
    return fit_result.beta + (M_tilde @ (Zt.T @ resid)) / dataset.n


def confidence_intervals(
    beta_u: np.ndarray,
    M_tilde: np.ndarray,
    sigma: np.ndarray,
    n: int,
    alpha: float = 0.05,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Wald intervals beta_u +- z_{1-alpha/2} sqrt(diag(Mt Sigma Mt')/n)."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    cov_diag = np.einsum("ij,jk,ik->i", M_tilde, sigma, M_tilde)
    if np.any(cov_diag < -1e-10):
        warnings.warn(
            "negative variance estimates clipped to zero", RuntimeWarning, stacklevel=2
        )
    se = np.sqrt(np.maximum(cov_diag, 0.0) / n)
    z = norm.ppf(1.0 - alpha / 2.0)
    return se, beta_u - z * se, beta_u + z * se


@dataclass
class InferenceResult:
    """De-biased estimate with per-coordinate Wald intervals."""

    beta_u: np.ndarray
    se: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    gamma: float
    gamma_final: np.ndarray
    escalations: np.ndarray
    failed: np.ndarray
    qp_iterations: int = 0
    names: list[str] = field(default_factory=list)

    @property
    def selected(self) -> np.ndarray:
        """Coordinates whose interval excludes zero (failed rows excluded)."""
        with np.errstate(invalid="ignore"):
            return ~self.failed & ((self.lower > 0.0) | (self.upper < 0.0))

    def covers(self, truth: np.ndarray) -> np.ndarray:
        with np.errstate(invalid="ignore"):
            return (self.lower <= truth) & (truth <= self.upper)


def run_inference(
    fit_result: FitResult,
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
    gamma: float,
    opts: DebiasOptions | None = None,
    alpha: float = 0.05,
) -> InferenceResult:
    """Full de-biasing pipeline from a penalized fit to confidence intervals.

    Rows whose quadratic program fails even after gamma escalation get NaN
    intervals; if every row fails, an InferenceError is raised.
    """
    opts = opts or DebiasOptions()
    sigma = sigma_hat(fit_result, dataset, family, cs)
    M, report = build_M(sigma, cs, gamma, opts)
    Mt = build_M_tilde(M, cs)
    beta_u = debias(fit_result, Mt, dataset, family, cs)
    se, lower, upper = confidence_intervals(beta_u, Mt, sigma, dataset.n, alpha)
    if np.all(report.failed):
        raise InferenceError("every de-biasing row program failed")
    if np.any(report.failed):
        se = se.copy()
        lower = lower.copy()
        upper = upper.copy()
        se[report.failed] = np.nan
        lower[report.failed] = np.nan
        upper[report.failed] = np.nan
    return InferenceResult(
        beta_u=beta_u,
        se=se,
        lower=lower,
        upper=upper,
        alpha=alpha,
        gamma=float(gamma),
        gamma_final=report.gamma_final,
        escalations=report.escalations,
        failed=report.failed,
        qp_iterations=report.iterations,
        names=list(dataset.names),
    )
