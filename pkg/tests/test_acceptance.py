"""End-to-end acceptance suite.

Each test covers one numbered acceptance criterion and records a PASS or
FAIL line that the terminal summary echoes.  Tolerances, bands, and time
budgets are pinned in the assertions.  The Monte-Carlo experiment matrix
(two constraint modes by four sample sizes, 100 replicates each) is run
once in a session fixture and shared by criteria 5 through 7; on one
worker it dominates the suite's runtime (roughly an hour).

Timing budgets are stated for 8 workers.  Replicates are independent, so
on this single-worker environment the wall clock is compared against the
8x-scaled budget and the raw single-worker seconds are reported in the
acceptance line.
"""

import time

import numpy as np
import pytest
from scipy import stats

from compglm.cli import main as cli_main
from compglm.constraints import ConstraintSet
from compglm.experiments import ExperimentConfig, auc, run_coverage_experiment
from compglm.families import Dataset, get_family
from compglm.inference import DebiasOptions, solve_debias_row
from compglm.selection import lambda_max
from compglm.solver import SolverOptions, fit, kkt_certificate, soft_threshold

from conftest import random_constraints, random_dataset
from oracles import cvxpy_debias_row, pairwise_auc
from test_families import _score_fd_max_rel_err

BUDGET_WORKERS = 8     # worker count the time budgets assume
WORKERS = 1            # what this environment provides
SCALE = BUDGET_WORKERS / WORKERS

MATRIX_NS = (50, 100, 200, 500)
MATRIX_MODES = ("multi", "none")


@pytest.fixture(scope="session")
def experiment_matrix():
    """All (mode, n) cells of the benchmark experiment, with wall times.

    Configuration matches scripts/run_simulation_suite.py: p = 50,
    100 replicates, base seed 0, one worker, default grid.  Results are
    deterministic given that configuration.
    """
    cells = {}
    for mode in MATRIX_MODES:
        for n in MATRIX_NS:
            cfg = ExperimentConfig(
                n=n, p=50, mode=mode, replicates=100, base_seed=0, threads=1
            )
            t0 = time.perf_counter()
            report = run_coverage_experiment(cfg)
            wall = time.perf_counter() - t0
            assert report.n_failed == 0, f"{mode}-n{n}: {report.n_failed} failed"
            cells[(mode, n)] = (report, wall)
    return cells


def test_criterion_1_score_matches_finite_differences(acceptance):
    # analytic score vs central differences, 100 random instances across
    # the three families, p <= 20, n <= 100
    rng = np.random.default_rng(101)
    families = ("gaussian", "logistic", "poisson")
    worst = 0.0
    t0 = time.perf_counter()
    for i in range(100):
        name = families[i % 3]
        n = int(rng.integers(20, 101))
        p = int(rng.integers(2, 21))
        ds = random_dataset(rng, name, n=n, p=p)
        beta = rng.normal(0.0, 0.3, p)
        b0 = float(rng.normal(0.0, 0.2))
        err = _score_fd_max_rel_err(get_family(name), beta, b0, ds.y, ds.Z)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    checks = {"rel_err": worst <= 1e-6, "time": elapsed < 10.0}
    detail = f"max rel err {worst:.2e} over 100 instances, {elapsed:.1f}s"
    acceptance(1, all(checks.values()), detail)
    assert all(checks.values()), f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


def test_criterion_2_stationarity_of_constrained_fits(acceptance):
    """Fifty random constrained logistic fits satisfy first-order optimality.

    Stationarity of the constrained problem couples the l1 subgradient
    across coordinates through the constraint projector, so the
    per-coordinate conditions are evaluated at the residual-minimizing
    valid subgradient (sign-fixed on the support, boxed off it); with no
    constraints this reduces to the classic separable conditions.  Each
    fit must certify at 1e-4 on both support and null coordinates and lie
    in the constraint subspace to 1e-8.
    """
    rng = np.random.default_rng(202)
    fam = get_family("logistic")
    worst_support = 0.0
    worst_null = 0.0
    worst_feas = 0.0
    t0 = time.perf_counter()
    for _ in range(50):
        n = int(rng.integers(80, 301))
        p = int(rng.integers(10, 51))
        ds = random_dataset(rng, "logistic", n=n, p=p)
        cs = random_constraints(rng, p)
        lam = float(rng.uniform(0.15, 0.6)) * lambda_max(ds, fam, cs)
        f = fit(ds, fam, cs, lam)
        assert f.converged
        Zt = cs.reduce_design(ds.Z)
        cert = kkt_certificate(fam, f.beta, f.intercept, ds.y, Zt, lam, cs)
        nz = f.beta != 0.0
        worst_support = max(
            worst_support, float(np.max(np.abs(cert.pointwise[nz]), initial=0.0))
        )
        worst_null = max(
            worst_null,
            float(np.max(np.abs(cert.pointwise[~nz]), initial=0.0)),
            cert.intercept_gap,
        )
        worst_feas = max(worst_feas, float(np.max(np.abs(cs.C.T @ f.beta))))
    elapsed = time.perf_counter() - t0
    checks = {
        "support": worst_support <= 1e-4,
        "null": worst_null <= 1e-4,
        "feasibility": worst_feas <= 1e-8,
        "time": elapsed < 60.0,
    }
    detail = (
        f"stationarity {max(worst_support, worst_null):.2e}, "
        f"feasibility {worst_feas:.2e}, {elapsed:.1f}s for 50 fits"
    )
    acceptance(2, all(checks.values()), detail)
    assert all(checks.values()), f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


def test_criterion_3_orthonormal_design_closed_form(acceptance):
    # gaussian, orthonormal design Z'Z/n = I, no constraints, no intercept:
    # the solution is coordinatewise soft thresholding of Z'y/n
    rng = np.random.default_rng(303)
    opts = SolverOptions(kkt_tol=1e-8)
    worst = 0.0
    for _ in range(10):
        n, p = 60, 12
        Q, _ = np.linalg.qr(rng.standard_normal((n, p)))
        Z = Q * np.sqrt(n)
        beta_true = np.where(rng.random(p) < 0.5, rng.normal(0.0, 1.0, p), 0.0)
        y = Z @ beta_true + rng.standard_normal(n)
        ds = Dataset(y, Z, has_intercept=False)
        cs = ConstraintSet.none(p)
        corr = Z.T @ y / n
        for q in (0.05, 0.3, 0.7):
            lam = q * float(np.max(np.abs(corr)))
            f = fit(ds, get_family("gaussian"), cs, lam, opts)
            expected = soft_threshold(corr, lam)
            worst = max(worst, float(np.max(np.abs(f.beta - expected))))
    ok = worst <= 1e-6
    detail = f"max deviation from soft threshold {worst:.2e} over 30 fits"
    acceptance(3, ok, detail)
    assert ok, detail


def test_criterion_4_row_program_matches_generic_solver(acceptance):
    # the specialized row quadratic program agrees with a generic convex
    # solver: objective within 1e-5, feasibility slack within 1e-6
    rng = np.random.default_rng(404)
    opts = DebiasOptions(qp_tol=1e-9, qp_max_iters=20000)
    worst_obj = 0.0
    worst_slack = 0.0
    for i in range(20):
        A = rng.normal(size=(8, 5))
        sigma = A.T @ A / 8 + 0.05 * np.eye(5)
        if i % 2 == 0:
            target = np.zeros(5)
            target[i % 5] = 1.0
        else:
            target = rng.normal(size=5)
            target /= np.max(np.abs(target))
        gamma = float(rng.uniform(0.1, 0.5))
        m = solve_debias_row(sigma, target, gamma, opts)
        m_ref, obj_ref = cvxpy_debias_row(sigma, target, gamma)
        obj = float(m @ sigma @ m)
        worst_obj = max(worst_obj, abs(obj - obj_ref))
        slack = float(np.max(np.abs(sigma @ m - target))) - gamma
        worst_slack = max(worst_slack, slack)
    checks = {"objective": worst_obj <= 1e-5, "slack": worst_slack <= 1e-6}
    detail = f"max objective gap {worst_obj:.2e}, max slack {worst_slack:.2e}"
    acceptance(4, all(checks.values()), detail)
    assert all(checks.values()), f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


def test_criterion_5_selection_rates_at_n500(acceptance, experiment_matrix):
    # benchmark selection quality at n=500, p=50, 100 replicates: true
    # positive rate in band under true constraints and without constraints,
    # false positive rate bounded; budget 15 min on 8 workers
    rep_multi, wall_multi = experiment_matrix[("multi", 500)]
    rep_none, wall_none = experiment_matrix[("none", 500)]
    wall = wall_multi + wall_none
    checks = {
        "tp_multi": 0.85 <= rep_multi.tp_rate <= 0.97,
        "fp_multi": rep_multi.fp_rate <= 0.06,
        "tp_none": 0.76 <= rep_none.tp_rate <= 0.92,
        "time": wall <= 900.0 * SCALE,
    }
    detail = (
        f"multi TP {rep_multi.tp_rate:.3f} FP {rep_multi.fp_rate:.3f}, "
        f"none TP {rep_none.tp_rate:.3f} (FP {rep_none.fp_rate:.3f}), "
        f"{wall:.0f}s on {WORKERS} worker"
    )
    acceptance(5, all(checks.values()), detail)
    assert all(checks.values()), f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


def test_criterion_6_coverage_and_interval_lengths(acceptance, experiment_matrix):
    # interval quality across the matrix: nominal coverage at n=500 under
    # true constraints; mean length strictly decreasing in n in both modes;
    # constrained intervals no longer than unconstrained at every n;
    # budget 30 min on 8 workers for the whole matrix
    cov = experiment_matrix[("multi", 500)][0].mean_coverage
    lengths = {
        mode: [experiment_matrix[(mode, n)][0].mean_ci_length for n in MATRIX_NS]
        for mode in MATRIX_MODES
    }
    total_wall = sum(w for _, w in experiment_matrix.values())
    checks = {
        "coverage": 0.90 <= cov <= 0.98,
        "decreasing_multi": all(
            a > b for a, b in zip(lengths["multi"], lengths["multi"][1:])
        ),
        "decreasing_none": all(
            a > b for a, b in zip(lengths["none"], lengths["none"][1:])
        ),
        "multi_not_longer": all(
            m <= u for m, u in zip(lengths["multi"], lengths["none"])
        ),
        "time": total_wall <= 1800.0 * SCALE,
    }
    detail = (
        f"coverage {cov:.3f}, lengths multi "
        + "/".join(f"{v:.2f}" for v in lengths["multi"])
        + " none "
        + "/".join(f"{v:.2f}" for v in lengths["none"])
        + f", {total_wall:.0f}s on {WORKERS} worker"
    )
    acceptance(6, all(checks.values()), detail)
    assert all(checks.values()), f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


def test_criterion_7_feasibility_and_null_normality(acceptance, experiment_matrix):
    # the de-biased estimate stays in the constraint subspace on every
    # replicate of every cell, and pooled null-coordinate z-statistics at
    # n=500 pass a KS test against the standard normal at level 0.01
    worst_feas = max(
        rep.max_constraint_violation for rep, _ in experiment_matrix.values()
    )
    pvals = {}
    for mode in MATRIX_MODES:
        z = experiment_matrix[(mode, 500)][0].z_null
        pvals[mode] = float(stats.kstest(z, "norm").pvalue)
    checks = {
        "feasibility": worst_feas <= 1e-8,
        "ks_multi": pvals["multi"] > 0.01,
        "ks_none": pvals["none"] > 0.01,
    }
    detail = (
        f"max violation {worst_feas:.2e}, KS p multi {pvals['multi']:.3f} "
        f"none {pvals['none']:.3f}"
    )
    acceptance(7, all(checks.values()), detail)
    assert all(checks.values()), f"{detail}; failed: {[k for k, v in checks.items() if not v]}"


def test_criterion_8_auc_equals_pair_counting(acceptance):
    # rank-based AUC equals the O(n^2) pair-counting definition exactly,
    # including ties (half credit per tied pair)
    rng = np.random.default_rng(808)
    worst = 0.0
    for i in range(100):
        n = int(rng.integers(6, 60))
        labels = (rng.random(n) < 0.5).astype(float)
        labels[0], labels[1] = 1.0, 0.0      # force both classes
        if i % 2 == 0:
            scores = rng.normal(size=n)
        else:
            scores = rng.integers(0, 5, size=n) / 2.0   # heavy ties
        worst = max(worst, abs(auc(scores, labels) - pairwise_auc(scores, labels)))
    ok = worst == 0.0
    detail = f"max |rank AUC - pair count| = {worst:.1e} over 100 instances"
    acceptance(8, ok, detail)
    assert ok, detail


def test_criterion_9_reruns_are_byte_identical(acceptance, tmp_path):
    # identical seed and configuration produce byte-identical output files
    # for both the dataset generator and the experiment driver
    def run_twice(args):
        dirs = []
        for tag in ("a", "b"):
            out = tmp_path / f"{args[0]}-{tag}"
            rc = cli_main(args + ["--output-dir", str(out)])
            assert rc == 0
            dirs.append(out)
        return dirs

    compared = 0
    identical = True
    jobs = [
        ["simulate", "--n", "50", "--p", "41", "--seed", "7"],
        [
            "evaluate", "--mode", "multi", "--n", "50", "--p", "41",
            "--replicates", "1", "--seed", "3", "--grid-size", "8",
            "--threads", "1",
        ],
    ]
    for args in jobs:
        d1, d2 = run_twice(args)
        names1 = sorted(f.name for f in d1.iterdir())
        names2 = sorted(f.name for f in d2.iterdir())
        assert names1 == names2 and names1
        for name in names1:
            compared += 1
            if (d1 / name).read_bytes() != (d2 / name).read_bytes():
                identical = False
    detail = f"{compared} output files byte-identical across re-runs"
    acceptance(9, identical, detail)
    assert identical, detail
