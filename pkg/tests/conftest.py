"""Shared fixtures: random problem instances and the acceptance summary."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from compglm.constraints import ConstraintSet, build_group_constraints
from compglm.families import Dataset, get_family

settings.register_profile(
    "suite",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")


def random_dataset(
    rng: np.random.Generator,
    family_name: str,
    n: int,
    p: int,
    has_intercept: bool = True,
    beta_scale: float = 0.5,
    density: float = 0.4,
) -> Dataset:
    """A random instance with response drawn from the stated family."""
    family = get_family(family_name)
    Z = rng.standard_normal((n, p))
    beta = np.where(rng.random(p) < density, rng.normal(0.0, beta_scale, p), 0.0)
    b0 = rng.normal(0.0, 0.3) if has_intercept else 0.0
    eta = Z @ beta + b0
    if family_name == "logistic":
        y = (rng.random(n) < family.mean(eta)).astype(float)
        if y.min() == y.max():            # force both classes
            y[0] = 1.0 - y[0]
    elif family_name == "poisson":
        y = rng.poisson(np.exp(np.clip(eta, -20, 3))).astype(float)
    else:
        y = eta + rng.standard_normal(n)
    return Dataset(y, Z, has_intercept=has_intercept)


def random_constraints(rng: np.random.Generator, p: int) -> ConstraintSet:
    """Random zero-sum group constraints covering part of {1..p}."""
    n_groups = int(rng.integers(1, max(2, p // 4) + 1))
    perm = rng.permutation(p) + 1
    sizes = rng.integers(2, 6, size=n_groups)
    groups, start = [], 0
    for s in sizes:
        if start + s > p:
            break
        groups.append(tuple(int(i) for i in perm[start:start + s]))
        start += s
    if not groups:
        groups = [(1, 2)]
    return build_group_constraints(groups, p)


def random_dense_constraints(rng: np.random.Generator, p: int, r: int) -> ConstraintSet:
    """Random dense (non-group) constraint directions."""
    return ConstraintSet.from_matrix(rng.standard_normal((p, r)))


# ---------------------------------------------------------------------------
# acceptance criteria reporting: tests record one line each; the lines are
# echoed in the terminal summary of every run that executed them

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def acceptance():
    def record(criterion: int, passed: bool, detail: str) -> None:
        word = "PASS" if passed else "FAIL"
        ACCEPTANCE_LINES[criterion] = f"ACCEPTANCE {criterion}: {word} ({detail})"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])
