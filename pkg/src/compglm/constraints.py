"""Linear equality constraints C'beta = 0 on GLM coefficients.

The feasible set is the subspace orthogonal to the columns of C.  All
downstream algebra (projection of iterates, reduction of the design matrix,
de-biasing targets) only needs an orthonormal basis of col(C), so raw
constraint matrices are orthonormalized on construction and projections use
the cheap form u - C (C'u).

The common use case is subcompositional zero-sum structure: one constraint
column per group of covariates, equal weight on the group's members, zero
elsewhere.  Groups may overlap; redundant directions are dropped during
orthonormalization.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np

# singular values below this fraction of the largest are treated as rank
# deficiency and dropped
_RANK_RTOL = 1e-10


def orthonormalize(C_raw: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column space of C_raw (p x r, r may be 0).

    Columns beyond the numerical rank are dropped with a warning.
    """
    C_raw = np.asarray(C_raw, dtype=float)
    if C_raw.ndim != 2:
        raise ValueError("constraint matrix must be 2-d")
    p, r = C_raw.shape
    if r == 0:
        return np.zeros((p, 0))
    if not np.all(np.isfinite(C_raw)):
        raise ValueError("constraint matrix contains non-finite values")
    U, s, _ = np.linalg.svd(C_raw, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        raise ValueError("constraint matrix has no nonzero columns")
    rank = int(np.sum(s > _RANK_RTOL * s[0]))
    if rank < r:
        warnings.warn(
            f"constraint matrix is rank deficient ({rank} of {r} columns kept)",
            RuntimeWarning,
            stacklevel=2,
        )
    return U[:, :rank]


def _detect_zero_sum_groups(C_raw: np.ndarray):
    """Recognize a constraint matrix whose columns are disjoint group indicators.

    Returns a tuple of 0-based index tuples (one per group) when every
    nonzero column is a constant multiple of an indicator vector and the
    supports are pairwise disjoint; None otherwise.  This structure makes
    the exact proximal map of l1-plus-subspace separable by group.
    """
    p, r = C_raw.shape
    groups = []
    seen = np.zeros(p, dtype=bool)
    for k in range(r):
        col = C_raw[:, k]
        nz = np.flatnonzero(col)
        if nz.size == 0:
            continue
        vals = col[nz]
        if not np.all(np.abs(vals - vals[0]) <= 1e-12 * np.abs(vals[0])):
            return None
        if np.any(seen[nz]):
            return None
        seen[nz] = True
        groups.append(tuple(int(i) for i in nz))
    return tuple(groups) if groups else None


@dataclass(frozen=True)
class ConstraintSet:
    """An orthonormal basis C (p x r) of the constrained directions.

    The feasible coefficients are { beta : C' beta = 0 }.  r = 0 encodes the
    unconstrained problem.  zero_sum_groups, when set, records that the
    subspace is exactly "each listed group of coordinates sums to zero" with
    disjoint groups (0-based indices); solvers may exploit the separable
    structure.
    """

    C: np.ndarray
    zero_sum_groups: tuple[tuple[int, ...], ...] | None = None
    p: int = field(init=False)
    r: int = field(init=False)

    def __post_init__(self):
        C = np.asarray(self.C, dtype=float)
        if C.ndim != 2:
            raise ValueError("C must be 2-d")
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "p", C.shape[0])
        object.__setattr__(self, "r", C.shape[1])
        if self.r > 0:
            gram = C.T @ C
            if not np.allclose(gram, np.eye(self.r), atol=1e-8):
                raise ValueError(
                    "C must have orthonormal columns; build via from_matrix()"
                )
        if self.zero_sum_groups is not None:
            groups = tuple(
                tuple(int(i) for i in g) for g in self.zero_sum_groups
            )
            object.__setattr__(self, "zero_sum_groups", groups)
            if len(groups) != self.r:
                raise ValueError("need exactly one zero-sum group per constraint")
            seen = np.zeros(self.p, dtype=bool)
            for g in groups:
                idx = np.asarray(g, dtype=int)
                if idx.size == 0 or np.any(idx < 0) or np.any(idx >= self.p):
                    raise ValueError("group indices out of range")
                if np.any(seen[idx]):
                    raise ValueError("zero-sum groups must be disjoint")
                seen[idx] = True
                ind = np.zeros(self.p)
                ind[idx] = 1.0
                if np.max(np.abs(self.project(ind))) > 1e-8:
                    raise ValueError(
                        "declared zero-sum group does not span a constraint direction"
                    )

    @classmethod
    def from_matrix(cls, C_raw: np.ndarray) -> "ConstraintSet":
        C_raw = np.asarray(C_raw, dtype=float)
        C = orthonormalize(C_raw)
        groups = _detect_zero_sum_groups(C_raw) if C_raw.size else None
        if groups is not None and len(groups) != C.shape[1]:
            groups = None
        return cls(C, zero_sum_groups=groups)

    @classmethod
    def none(cls, p: int) -> "ConstraintSet":
        """The unconstrained set (r = 0) over p coefficients."""
        if p < 1:
            raise ValueError("p must be positive")
        return cls(np.zeros((p, 0)))

    @classmethod
    def zero_sum(cls, p: int) -> "ConstraintSet":
        """Single constraint sum_j beta_j = 0 over all p coefficients."""
        return cls.from_matrix(np.ones((p, 1)))

    def project(self, u: np.ndarray) -> np.ndarray:
        """Orthogonal projection of u onto { x : C'x = 0 }.

        Accepts a vector of length p or an array whose last axis has length
        p (rows are projected independently).
        """
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.p:
            raise ValueError(f"last axis must have length {self.p}")
        if self.r == 0:
            return u.copy()
        return u - (u @ self.C) @ self.C.T

    def reduce_design(self, Z: np.ndarray) -> np.ndarray:
        """Z (I - CC'): project each row of the design into the feasible space."""
        Z = np.asarray(Z, dtype=float)
        if Z.ndim != 2 or Z.shape[1] != self.p:
            raise ValueError(f"design must be n x {self.p}")
        return self.project(Z)

    def max_violation(self, beta: np.ndarray) -> float:
        """max_k |C'beta|_k, zero when unconstrained."""
        if self.r == 0:
            return 0.0
        return float(np.max(np.abs(self.C.T @ np.asarray(beta, dtype=float))))


@dataclass(frozen=True)
class GroupConstraints:
    """Zero-sum constraint groups as 1-based covariate index lists."""

    groups: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        groups = tuple(tuple(int(i) for i in g) for g in self.groups)
        object.__setattr__(self, "groups", groups)
        for g in groups:
            if len(g) == 0:
                raise ValueError("constraint groups must be nonempty")
            if any(i < 1 for i in g):
                raise ValueError("group indices are 1-based and must be >= 1")
            if len(set(g)) != len(g):
                raise ValueError("a group must not repeat an index")

    def max_index(self) -> int:
        return max(max(g) for g in self.groups) if self.groups else 0


def build_group_constraints(groups: GroupConstraints | list, p: int) -> ConstraintSet:
    """One zero-sum constraint column per group over p covariates.

    Groups may overlap; linearly dependent directions are dropped.
    """
    if not isinstance(groups, GroupConstraints):
        groups = GroupConstraints(tuple(tuple(g) for g in groups))
    if len(groups.groups) == 0:
        return ConstraintSet.none(p)
    if groups.max_index() > p:
        raise ValueError(
            f"group index {groups.max_index()} exceeds number of covariates {p}"
        )
    C_raw = np.zeros((p, len(groups.groups)))
    for k, g in enumerate(groups.groups):
        for i in g:
            C_raw[i - 1, k] = 1.0
    return ConstraintSet.from_matrix(C_raw)


def read_groups_json(path: str) -> GroupConstraints:
    """Read constraint groups from a JSON file: a list of 1-based index arrays."""
    with open(path) as fh:
        payload = json.load(fh)
    if not isinstance(payload, list) or not all(isinstance(g, list) for g in payload):
        raise ValueError("constraint JSON must be a list of integer arrays")
    for g in payload:
        if not all(isinstance(i, int) and not isinstance(i, bool) for i in g):
            raise ValueError("constraint group entries must be integers")
    return GroupConstraints(tuple(tuple(g) for g in payload))
