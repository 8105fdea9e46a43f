"""Synthetic log-normal abundance benchmark with grouped zero-sum structure.

Rows of the latent log-abundance matrix are drawn i.i.d. from N(mu, Cov)
with Cov_ij = zeta^|i-j|; abundances are their exponentials, covariates the
log-compositions, and the binary response follows a logistic model with a
sparse coefficient vector that satisfies zero-sum constraints within eight
covariate groups.  A fixed 2:3 case:control split is enforced by quota
sampling: rows are drawn from the model and the first (2/5) n cases and
(3/5) n controls encountered are kept, in draw order.  This mirrors a
case-control study design; slope coefficients keep their prospective
interpretation, with the sampling offset absorbed by the intercept.

All draws come from a seeded PCG64 generator, so outputs are reproducible
byte for byte given (config, seed).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import toeplitz
from scipy.special import expit, logsumexp

from .constraints import ConstraintSet, GroupConstraints, build_group_constraints
from .errors import SimulationError
from .families import Dataset

GENERATOR_ID = "numpy-pcg64"

# sparse truth used throughout the benchmark; entries beyond 16 are zero
_BETA_HEAD = (0.45, -0.4, 0.45, 0.0, -0.5, 0.0, 0.0, 0.0, 0.0, 0.0,
              -0.6, 0.0, 0.3, 0.0, 0.0, 0.3)


def default_beta(p: int) -> np.ndarray:
    """The benchmark coefficient vector padded with zeros to length p."""
    if p < len(_BETA_HEAD):
        raise ValueError(f"p must be at least {len(_BETA_HEAD)}")
    beta = np.zeros(p)
    beta[: len(_BETA_HEAD)] = _BETA_HEAD
    return beta


def true_groups(p: int) -> GroupConstraints:
    """The eight zero-sum groups the benchmark truth satisfies."""
    if p < 41:
        raise ValueError("benchmark groups need p >= 41")
    bounds = [(1, 10), (11, 16), (17, 20), (21, 23),
              (24, 30), (31, 32), (33, 40), (41, p)]
    return GroupConstraints(tuple(tuple(range(a, b + 1)) for a, b in bounds))


def misspecified_groups(p: int) -> GroupConstraints:
    """Deliberately wrong grouping used to probe constraint misspecification."""
    if p < 31:
        raise ValueError("misspecified groups need p >= 31")
    bounds = [(1, 4), (5, 12), (13, 23), (24, 30), (31, p)]
    return GroupConstraints(tuple(tuple(range(a, b + 1)) for a, b in bounds))


CONSTRAINT_MODES = ("multi", "one", "none", "wrong")


def constraint_mode_set(mode: str, p: int) -> ConstraintSet:
    """Constraint set for a benchmark mode: multi, one, none, or wrong."""
    if mode == "multi":
        return build_group_constraints(true_groups(p), p)
    if mode == "one":
        return ConstraintSet.zero_sum(p)
    if mode == "none":
        return ConstraintSet.none(p)
    if mode == "wrong":
        return build_group_constraints(misspecified_groups(p), p)
    raise ValueError(f"unknown constraint mode {mode!r}; choose from {CONSTRAINT_MODES}")


def default_log_mean(p: int) -> np.ndarray:
    """Location vector: p/2 for the first five coordinates, 1 elsewhere."""
    mu = np.ones(p)
    mu[:5] = p / 2.0
    return mu


def draw_log_abundance(
    rng: np.random.Generator, n: int, mu: np.ndarray, zeta: float
) -> np.ndarray:
    """n i.i.d. rows from N(mu, Cov), Cov_ij = zeta^|i-j| (log-abundance scale)."""
    mu = np.asarray(mu, dtype=float)
    p = mu.shape[0]
    if not -1.0 < zeta < 1.0:
        raise ValueError("zeta must lie in (-1, 1)")
    cov = toeplitz(zeta ** np.arange(p))
    L = np.linalg.cholesky(cov)
    return mu + rng.standard_normal((n, p)) @ L.T


@dataclass
class SimulationConfig:
    n: int
    p: int
    seed: int = 0
    zeta: float = 0.2
    intercept: float = -1.0
    case_fraction: float = 0.4
    mu: np.ndarray | None = None
    beta: np.ndarray | None = None
    max_total_draws: int | None = None  # default max(10000, 50 n)

    def __post_init__(self):
        if self.p < 41:
            raise ValueError("benchmark requires p >= 41 (constraint groups reach 41)")
        if self.n < 5:
            raise ValueError("n must be at least 5")
        n_cases = self.case_fraction * self.n
        if abs(n_cases - round(n_cases)) > 1e-9:
            raise ValueError(
                f"case_fraction * n must be an integer; got {n_cases} "
                f"(with the default 2:3 split, n must be divisible by 5)"
            )
        if not 0.0 < self.case_fraction < 1.0:
            raise ValueError("case_fraction must lie in (0, 1)")

    def resolved_mu(self) -> np.ndarray:
        if self.mu is None:
            return default_log_mean(self.p)
        mu = np.asarray(self.mu, dtype=float)
        if mu.shape != (self.p,):
            raise ValueError(f"mu must have length {self.p}")
        return mu

    def resolved_beta(self) -> np.ndarray:
        if self.beta is None:
            return default_beta(self.p)
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (self.p,):
            raise ValueError(f"beta must have length {self.p}")
        return beta


@dataclass
class SimulatedData:
    dataset: Dataset
    beta_true: np.ndarray
    groups: GroupConstraints
    cs: ConstraintSet
    config: SimulationConfig
    n_draws: int = field(default=0, repr=False)


def simulate_dataset(config: SimulationConfig) -> SimulatedData:
    """Draw one benchmark replicate with an exact 2:3 case:control split."""
    rng = np.random.default_rng(config.seed)
    mu = config.resolved_mu()
    beta = config.resolved_beta()
    n_cases = round(config.case_fraction * config.n)
    n_controls = config.n - n_cases
    cap = config.max_total_draws or max(10_000, 50 * config.n)

    cov = toeplitz(config.zeta ** np.arange(config.p))
    L = np.linalg.cholesky(cov)

    kept_Z: list[np.ndarray] = []
    kept_y: list[float] = []
    need_cases, need_controls = n_cases, n_controls
    drawn = 0
    batch = max(256, config.n)
    while need_cases > 0 or need_controls > 0:
        if drawn >= cap:
            raise SimulationError(
                f"quota sampling drew {drawn} rows without filling the "
                f"{n_cases}:{n_controls} case:control split; the configured "
                "intercept/coefficients make one class too rare at this n"
            )
        m = min(batch, cap - drawn)
        logW = mu + rng.standard_normal((m, config.p)) @ L.T
        Z = logW - logsumexp(logW, axis=1)[:, None]
        prob = expit(Z @ beta + config.intercept)
        y = (rng.random(m) < prob).astype(float)
        drawn += m
        for i in range(m):
            if y[i] == 1.0 and need_cases > 0:
                kept_Z.append(Z[i])
                kept_y.append(1.0)
                need_cases -= 1
            elif y[i] == 0.0 and need_controls > 0:
                kept_Z.append(Z[i])
                kept_y.append(0.0)
                need_controls -= 1

    dataset = Dataset(np.asarray(kept_y), np.asarray(kept_Z), has_intercept=True)
    groups = true_groups(config.p)
    cs = build_group_constraints(groups, config.p)
    return SimulatedData(
        dataset=dataset,
        beta_true=beta,
        groups=groups,
        cs=cs,
        config=config,
        n_draws=drawn,
    )
