"""Constraint subspace algebra: orthonormalization, projection, groups."""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from compglm.constraints import (
    ConstraintSet,
    GroupConstraints,
    build_group_constraints,
    orthonormalize,
    read_groups_json,
)
from compglm.constraints import _detect_zero_sum_groups

from conftest import random_dense_constraints

vectors = arrays(
    np.float64,
    st.integers(min_value=4, max_value=12),
    elements=st.floats(min_value=-100, max_value=100, allow_nan=False),
)


class TestOrthonormalize:
    def test_all_ones_column(self):
        p = 7
        C = orthonormalize(np.ones((p, 1)))
        assert np.allclose(C, np.ones((p, 1)) / np.sqrt(p))

    def test_orthonormal_input_preserved_up_to_sign(self):
        rng = np.random.default_rng(0)
        Q, _ = np.linalg.qr(rng.standard_normal((8, 3)))
        C = orthonormalize(Q)
        assert np.allclose(C.T @ C, np.eye(3), atol=1e-12)
        # spans are identical: projecting Q onto col(C) changes nothing
        assert np.allclose(C @ (C.T @ Q), Q, atol=1e-10)

    def test_duplicate_column_dropped_with_warning(self):
        col = np.arange(1.0, 6.0).reshape(-1, 1)
        with pytest.warns(RuntimeWarning, match="rank deficient"):
            C = orthonormalize(np.hstack([col, col]))
        assert C.shape == (5, 1)

    def test_zero_columns_rejected(self):
        with pytest.raises(ValueError, match="no nonzero columns"):
            orthonormalize(np.zeros((4, 2)))

    def test_empty_constraint_allowed(self):
        assert orthonormalize(np.zeros((4, 0))).shape == (4, 0)


class TestProject:
    def test_mean_centering(self):
        cs = ConstraintSet.zero_sum(3)
        assert np.allclose(cs.project(np.array([1.0, 2.0, 3.0])), [-1.0, 0.0, 1.0])

    def test_unconstrained_identity(self):
        cs = ConstraintSet.none(4)
        u = np.array([1.0, -2.0, 3.0, 0.5])
        assert np.array_equal(cs.project(u), u)

    @given(u=vectors)
    def test_pythagoras(self, u):
        cs = ConstraintSet.zero_sum(u.size)
        w = cs.project(u)
        assert abs(u @ u - (w @ w + (u - w) @ (u - w))) <= 1e-10 * max(1.0, u @ u)

    @given(u=vectors)
    def test_idempotent(self, u):
        cs = ConstraintSet.zero_sum(u.size)
        w = cs.project(u)
        assert np.max(np.abs(cs.project(w) - w)) <= 1e-12 * max(1.0, np.abs(w).max())

    @given(u=vectors)
    def test_kernel(self, u):
        cs = ConstraintSet.zero_sum(u.size)
        assert cs.max_violation(cs.project(u)) <= 1e-10 * max(1.0, np.abs(u).max())

    def test_self_adjoint(self):
        rng = np.random.default_rng(1)
        cs = random_dense_constraints(rng, 9, 3)
        for _ in range(20):
            u = rng.standard_normal(9)
            v = rng.standard_normal(9)
            assert cs.project(u) @ v == pytest.approx(u @ cs.project(v), abs=1e-10)

    def test_group_projection_subtracts_group_means(self):
        groups = [(1, 2, 3), (4, 5)]
        cs = build_group_constraints(groups, 6)
        rng = np.random.default_rng(2)
        u = rng.standard_normal(6)
        w = cs.project(u)
        assert np.allclose(w[:3], u[:3] - u[:3].mean(), atol=1e-12)
        assert np.allclose(w[3:5], u[3:5] - u[3:5].mean(), atol=1e-12)
        assert w[5] == pytest.approx(u[5])     # ungrouped coordinate untouched

    def test_rows_projected_independently(self):
        rng = np.random.default_rng(3)
        cs = ConstraintSet.zero_sum(5)
        U = rng.standard_normal((4, 5))
        W = cs.project(U)
        for i in range(4):
            assert np.allclose(W[i], cs.project(U[i]), atol=1e-14)

    def test_dimension_check(self):
        with pytest.raises(ValueError, match="length 3"):
            ConstraintSet.zero_sum(3).project(np.zeros(4))


class TestReduceDesign:
    def test_unconstrained_unchanged(self):
        rng = np.random.default_rng(4)
        Z = rng.standard_normal((6, 5))
        assert np.array_equal(ConstraintSet.none(5).reduce_design(Z), Z)

    def test_zero_sum_row_centers(self):
        rng = np.random.default_rng(5)
        Z = rng.standard_normal((6, 5))
        Zt = ConstraintSet.zero_sum(5).reduce_design(Z)
        assert np.allclose(Zt, Z - Z.mean(axis=1, keepdims=True), atol=1e-12)

    def test_reduced_design_preserves_feasible_predictions(self):
        rng = np.random.default_rng(6)
        cs = random_dense_constraints(rng, 8, 2)
        Z = rng.standard_normal((20, 8))
        beta = cs.project(rng.standard_normal(8))     # a feasible coefficient
        assert np.max(np.abs(cs.reduce_design(Z) @ beta - Z @ beta)) <= 1e-10


class TestGroups:
    def test_single_full_group_is_zero_sum(self):
        cs = build_group_constraints([tuple(range(1, 6))], 5)
        assert cs.r == 1
        assert np.allclose(np.abs(cs.C[:, 0]), 1.0 / np.sqrt(5))

    def test_two_disjoint_groups(self):
        cs = build_group_constraints([(1, 2), (3, 4)], 4)
        assert cs.r == 2
        got = np.abs(cs.C)
        expected = np.array(
            [[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float
        ) / np.sqrt(2)
        # columns may come out in either order
        assert np.allclose(sorted(map(tuple, got.T)), sorted(map(tuple, expected.T)))

    def test_eight_disjoint_groups_p50(self):
        bounds = [(1, 10), (11, 16), (17, 20), (21, 23),
                  (24, 30), (31, 32), (33, 40), (41, 50)]
        groups = [tuple(range(a, b + 1)) for a, b in bounds]
        cs = build_group_constraints(groups, 50)
        assert cs.r == 8
        assert cs.zero_sum_groups is not None
        assert np.allclose(cs.C.T @ cs.C, np.eye(8), atol=1e-12)

    def test_empty_group_rejected(self):
        with pytest.raises(ValueError, match="nonempty"):
            GroupConstraints(((),))

    def test_zero_index_rejected(self):
        with pytest.raises(ValueError, match="1-based"):
            GroupConstraints(((0, 1),))

    def test_repeated_index_rejected(self):
        with pytest.raises(ValueError, match="repeat"):
            GroupConstraints(((1, 1),))

    def test_index_beyond_p_rejected(self):
        with pytest.raises(ValueError, match="exceeds"):
            build_group_constraints([(1, 9)], 5)

    def test_no_groups_is_unconstrained(self):
        assert build_group_constraints([], 5).r == 0

    def test_overlapping_groups_drop_dependent_directions(self):
        # {1,2,3} and {1,2,3,4,5} overlap but are independent; adding their
        # difference-span duplicate triggers the rank drop
        with pytest.warns(RuntimeWarning, match="rank deficient"):
            cs = build_group_constraints([(1, 2), (3, 4), (1, 2, 3, 4)], 4)
        assert cs.r == 2


class TestZeroSumDetection:
    def test_detected_for_disjoint_indicators(self):
        C_raw = np.zeros((6, 2))
        C_raw[[0, 1, 2], 0] = 1.0
        C_raw[[3, 4], 1] = 1.0
        assert _detect_zero_sum_groups(C_raw) == ((0, 1, 2), (3, 4))

    def test_scaled_indicator_still_detected(self):
        C_raw = np.zeros((4, 1))
        C_raw[[1, 3], 0] = 2.5
        assert _detect_zero_sum_groups(C_raw) == ((1, 3),)

    def test_non_constant_column_rejected(self):
        C_raw = np.zeros((4, 1))
        C_raw[0, 0] = 1.0
        C_raw[1, 0] = 2.0
        assert _detect_zero_sum_groups(C_raw) is None

    def test_overlap_rejected(self):
        C_raw = np.zeros((4, 2))
        C_raw[[0, 1], 0] = 1.0
        C_raw[[1, 2], 1] = 1.0
        assert _detect_zero_sum_groups(C_raw) is None

    def test_constraint_set_records_groups(self):
        cs = build_group_constraints([(1, 2, 3), (4, 5)], 6)
        assert cs.zero_sum_groups == ((0, 1, 2), (3, 4))

    def test_dense_constraints_have_no_groups(self):
        rng = np.random.default_rng(7)
        assert random_dense_constraints(rng, 6, 2).zero_sum_groups is None

    def test_declared_groups_validated(self):
        C1 = np.ones((4, 1)) / 2.0
        C2 = np.array(
            [[1, 0], [1, 0], [0, 1], [0, 1]], dtype=float
        ) / np.sqrt(2)
        with pytest.raises(ValueError, match="disjoint"):
            ConstraintSet(C2, zero_sum_groups=((0, 1), (1, 2)))
        with pytest.raises(ValueError, match="one zero-sum group"):
            ConstraintSet(C1, zero_sum_groups=((0, 1), (2, 3)))
        with pytest.raises(ValueError, match="out of range"):
            ConstraintSet(C1, zero_sum_groups=((0, 5, 1, 2),))
        with pytest.raises(ValueError, match="does not span"):
            ConstraintSet(C1, zero_sum_groups=((0, 1),))


class TestConstruction:
    def test_non_orthonormal_rejected(self):
        with pytest.raises(ValueError, match="orthonormal"):
            ConstraintSet(np.ones((3, 1)))

    def test_from_matrix_orthonormalizes(self):
        cs = ConstraintSet.from_matrix(np.ones((4, 1)) * 3.0)
        assert np.allclose(cs.C.T @ cs.C, np.eye(1), atol=1e-12)

    def test_none_requires_positive_p(self):
        with pytest.raises(ValueError):
            ConstraintSet.none(0)

    def test_max_violation(self):
        cs = ConstraintSet.zero_sum(4)
        assert cs.max_violation(np.array([1.0, -1.0, 2.0, -2.0])) <= 1e-15
        assert cs.max_violation(np.ones(4)) == pytest.approx(2.0)  # 4/sqrt(4)


class TestGroupsJson:
    def test_round_trip(self, tmp_path):
        path = tmp_path / "groups.json"
        path.write_text("[[1, 2, 3], [4, 5]]")
        gc = read_groups_json(str(path))
        assert gc.groups == ((1, 2, 3), (4, 5))

    def test_rejects_non_list(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"a": 1}')
        with pytest.raises(ValueError, match="list of integer arrays"):
            read_groups_json(str(path))

    def test_rejects_non_integers(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("[[1.5, 2]]")
        with pytest.raises(ValueError, match="integers"):
            read_groups_json(str(path))
