"""Monte-Carlo experiments: coverage, selection rates, stability, and AUC.

run_coverage_experiment drives the full pipeline (simulate, tune by EBIC,
fit, de-bias, intervals) over independent replicates under a chosen
constraint mode and aggregates interval coverage, interval length, and
true/false selection rates against the benchmark truth.  Replicate i uses
seed base_seed + i, so experiments are reproducible and trivially
parallel; failed replicates are recorded and excluded, but more than 5%
failures abort the experiment.

Path fits inside an experiment use a relaxed stationarity certificate
(1e-3): only the EBIC ordering matters along the grid, and it is
insensitive at that precision.  The selected fit is then re-polished at
the strict 1e-4 certificate, warm-started from itself, before any
de-biasing, so every quantity entering inference carries the strict
certificate.
"""

from __future__ import annotations

import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .constraints import ConstraintSet
from .inference import DebiasOptions, run_inference
from .errors import CompglmError, DataError
from .families import Dataset, Family, get_family
from .selection import gamma_rule, lambda_grid, lambda_max, select_lambda
from .simulate import SimulationConfig, constraint_mode_set, simulate_dataset
from .solver import SolverOptions, fit

_FAILURE_CAP = 0.05


@dataclass
class ExperimentConfig:
    n: int
    p: int
    mode: str = "multi"
    replicates: int = 100
    base_seed: int = 0
    alpha: float = 0.05
    grid_size: int = 50
    threads: int = 1
    zeta: float = 0.2
    intercept: float = -1.0
    # path-fit options; the selected fit is re-polished at kkt_tol 1e-4
    solver: SolverOptions = field(
        default_factory=lambda: SolverOptions(kkt_tol=1e-3)
    )
    debias: DebiasOptions = field(default_factory=DebiasOptions)


def _polish_selected(path, dataset, family, cs, opts: SolverOptions):
    """Refit the EBIC-selected penalty at the strict certificate (1e-4)."""
    sel = path.selected
    strict = SolverOptions(
        **{**opts.__dict__, "kkt_tol": 1e-4, "t0": sel.final_step}
    )
    return fit(
        dataset, family, cs, path.lambda_opt, strict,
        beta0=sel.beta, intercept0=sel.intercept,
    )


@dataclass
class ExperimentReport:
    """Aggregated coverage/selection metrics for one (mode, n, p) cell."""

    config: ExperimentConfig
    coverage: np.ndarray          # per coordinate, over successful replicates
    ci_length: np.ndarray         # per coordinate mean
    selection_rate: np.ndarray    # per coordinate: CI excludes zero
    mean_coverage: float
    mean_ci_length: float
    tp_rate: float
    fp_rate: float
    beta_true: np.ndarray
    z_null: np.ndarray            # pooled (beta_u - 0)/se at true-zero coords
    max_constraint_violation: float
    lambda_opts: np.ndarray
    n_failed: int
    failed_indices: list[int]
    selection_matrix: np.ndarray  # replicates x p boolean
    coverage_matrix: np.ndarray   # replicates x p boolean (NaN rows False)
    timing_seconds: float = field(default=0.0, compare=False)


def _one_replicate(cfg: ExperimentConfig, index: int) -> dict:
    """Simulate, tune, fit, and de-bias one replicate; never raises."""
    rep_seed = cfg.base_seed + index
    try:
        sim = simulate_dataset(
            SimulationConfig(
                n=cfg.n, p=cfg.p, seed=rep_seed, zeta=cfg.zeta, intercept=cfg.intercept
            )
        )
        cs = constraint_mode_set(cfg.mode, cfg.p)
        family = get_family("logistic")
        path = select_lambda(
            sim.dataset, family, cs, grid_size=cfg.grid_size, opts=cfg.solver
        )
        lam = path.lambda_opt
        polished = _polish_selected(path, sim.dataset, family, cs, cfg.solver)
        inf = run_inference(
            polished, sim.dataset, family, cs,
            gamma=gamma_rule(lam), opts=cfg.debias, alpha=cfg.alpha,
        )
        violation = cs.max_violation(inf.beta_u)
        return {
            "index": index,
            "beta_true": sim.beta_true,
            "beta_u": inf.beta_u,
            "se": inf.se,
            "lower": inf.lower,
            "upper": inf.upper,
            "failed_rows": inf.failed,
            "lambda_opt": lam,
            "violation": violation,
            "error": None,
        }
    except (CompglmError, ValueError) as exc:
        return {"index": index, "error": f"{type(exc).__name__}: {exc}"}


def _replicate_star(args):
    return _one_replicate(*args)


def run_coverage_experiment(cfg: ExperimentConfig) -> ExperimentReport:
    """Run the replicate loop for one constraint mode and aggregate."""
    t_start = time.perf_counter()
    tasks = [(cfg, i) for i in range(cfg.replicates)]
    if cfg.threads > 1:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                results = list(pool.map(_replicate_star, tasks))
    else:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            results = [_one_replicate(cfg, i) for i in range(cfg.replicates)]

    failed = [r["index"] for r in results if r["error"] is not None]
    if len(failed) > _FAILURE_CAP * cfg.replicates:
        examples = [r["error"] for r in results if r["error"]][:3]
        raise CompglmError(
            f"{len(failed)}/{cfg.replicates} replicates failed "
            f"(cap {_FAILURE_CAP:.0%}); first errors: {examples}"
        )
    ok = [r for r in results if r["error"] is None]
    if not ok:
        raise CompglmError("no replicate succeeded")

    p = cfg.p
    beta_true = ok[0]["beta_true"]
    true_nz = beta_true != 0.0

    cover_rows, len_rows, sel_rows = [], [], []
    z_null_parts = []
    tp_list, fp_list, lam_list, viol_list = [], [], [], []
    for r in ok:
        with np.errstate(invalid="ignore"):
            covers = (r["lower"] <= beta_true) & (beta_true <= r["upper"])
            lengths = r["upper"] - r["lower"]
            selected = (r["lower"] > 0.0) | (r["upper"] < 0.0)
        bad = r["failed_rows"]
        covers = np.where(bad, False, covers)
        selected = np.where(bad, False, selected)
        cover_rows.append(covers)
        len_rows.append(np.where(bad, np.nan, lengths))
        sel_rows.append(selected)
        tp_list.append(float(np.mean(selected[true_nz])))
        fp_list.append(float(np.mean(selected[~true_nz])))
        lam_list.append(r["lambda_opt"])
        viol_list.append(r["violation"])
        with np.errstate(invalid="ignore", divide="ignore"):
            z = r["beta_u"][~true_nz] / r["se"][~true_nz]
        z_null_parts.append(z[np.isfinite(z)])

    cover_mat = np.asarray(cover_rows, dtype=bool)
    len_mat = np.asarray(len_rows, dtype=float)
    sel_mat = np.asarray(sel_rows, dtype=bool)

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        coverage = np.mean(cover_mat, axis=0)
        ci_length = np.nanmean(len_mat, axis=0)

    report = ExperimentReport(
        config=cfg,
        coverage=coverage,
        ci_length=ci_length,
        selection_rate=np.mean(sel_mat, axis=0),
        mean_coverage=float(np.mean(coverage)),
        mean_ci_length=float(np.nanmean(len_mat)),
        tp_rate=float(np.mean(tp_list)),
        fp_rate=float(np.mean(fp_list)),
        beta_true=beta_true,
        z_null=np.concatenate(z_null_parts) if z_null_parts else np.empty(0),
        max_constraint_violation=float(np.max(viol_list)),
        lambda_opts=np.asarray(lam_list),
        n_failed=len(failed),
        failed_indices=failed,
        selection_matrix=sel_mat,
        coverage_matrix=cover_mat,
        timing_seconds=time.perf_counter() - t_start,
    )
    return report


def auc(scores: np.ndarray, labels: np.ndarray) -> float:
    """Mann-Whitney AUC with ties counted one half.

    Computed from the rank-sum identity; exactly equals pairwise counting
    [#(score_pos > score_neg) + 0.5 #(ties)] / (n1 n0).
    """
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels, dtype=float).ravel()
    if scores.shape != labels.shape:
        raise ValueError("scores and labels must have the same length")
    if not np.all((labels == 0.0) | (labels == 1.0)):
        raise ValueError("labels must be coded 0/1")
    n1 = int(np.sum(labels == 1.0))
    n0 = labels.size - n1
    if n1 == 0 or n0 == 0:
        raise ValueError("AUC needs both classes present")
    ranks = rankdata(scores)
    rank_sum = float(np.sum(ranks[labels == 1.0]))
    u = rank_sum - n1 * (n1 + 1) / 2.0
    return u / (n1 * n0)


@dataclass
class StabilityReport:
    lambdas: np.ndarray
    frequency: np.ndarray         # p x len(lambdas) selection frequencies
    n_subsamples: int
    fraction: float
    names: list[str]


def _stratified_indices(
    rng: np.random.Generator, labels: np.ndarray, fraction: float
) -> np.ndarray:
    """Subsample preserving class proportions (floor per class)."""
    parts = []
    for value in (0.0, 1.0):
        idx = np.flatnonzero(labels == value)
        k = int(np.floor(fraction * idx.size))
        if k < 1:
            raise DataError(
                f"class {int(value)} too small ({idx.size}) for fraction {fraction}"
            )
        parts.append(rng.choice(idx, size=k, replace=False))
    return np.sort(np.concatenate(parts))


def stability_selection(
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
    n_subsamples: int = 50,
    fraction: float = 2.0 / 3.0,
    seed: int = 0,
    grid_size: int = 50,
    opts: SolverOptions | None = None,
) -> StabilityReport:
    """Selection frequency of each covariate along the penalty path.

    Subsamples are drawn without replacement, stratified by class for the
    logistic family, and the warm-started path is refit on each subsample
    over the full-data penalty grid.
    """
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must lie in (0, 1)")
    opts = opts or SolverOptions()
    rng = np.random.default_rng(seed)
    lam_max = lambda_max(dataset, family, cs)
    lambdas = lambda_grid(lam_max, grid_size)
    counts = np.zeros((dataset.p, grid_size))

    for _ in range(n_subsamples):
        if family.name == "logistic":
            idx = _stratified_indices(rng, dataset.y, fraction)
        else:
            k = max(1, int(np.floor(fraction * dataset.n)))
            idx = np.sort(rng.choice(dataset.n, size=k, replace=False))
        sub = Dataset(
            dataset.y[idx], dataset.Z[idx], dataset.has_intercept, list(dataset.names)
        )
        beta0, intercept0, t_prev = None, None, opts.t0
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            for j, lam in enumerate(lambdas):
                step_opts = SolverOptions(**{**opts.__dict__, "t0": t_prev})
                res = fit(sub, family, cs, float(lam), step_opts, beta0, intercept0)
                counts[:, j] += res.beta != 0.0
                beta0, intercept0, t_prev = res.beta, res.intercept, res.final_step

    return StabilityReport(
        lambdas=lambdas,
        frequency=counts / n_subsamples,
        n_subsamples=n_subsamples,
        fraction=fraction,
        names=list(dataset.names),
    )


@dataclass
class AucReport:
    variants: dict[str, np.ndarray]   # per-replicate AUCs by variant name
    train_fraction: float
    replicates: int

    def summary(self) -> dict[str, dict[str, float]]:
        return {
            name: {"mean": float(np.mean(v)), "sd": float(np.std(v, ddof=1))}
            for name, v in self.variants.items()
        }


AUC_VARIANTS = ("penalized", "debiased", "debiased_selected")


def train_test_evaluate(
    dataset: Dataset,
    family: Family,
    cs: ConstraintSet,
    train_fraction: float = 0.75,
    replicates: int = 50,
    seed: int = 0,
    grid_size: int = 50,
    solver_opts: SolverOptions | None = None,
    debias_opts: DebiasOptions | None = None,
    alpha: float = 0.05,
) -> AucReport:
    """Repeated stratified train/test splits scored by out-of-sample AUC.

    Three scoring vectors per split: the penalized fit, the de-biased
    estimate, and the de-biased estimate restricted to coordinates whose
    interval excludes zero.
    """
    if family.name != "logistic":
        raise ValueError("train/test AUC evaluation requires the logistic family")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError("train_fraction must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    out = {name: [] for name in AUC_VARIANTS}

    for _ in range(replicates):
        train_idx = _stratified_indices(rng, dataset.y, train_fraction)
        test_mask = np.ones(dataset.n, dtype=bool)
        test_mask[train_idx] = False
        test_idx = np.flatnonzero(test_mask)
        if not (np.any(dataset.y[test_idx] == 1.0) and np.any(dataset.y[test_idx] == 0.0)):
            raise DataError("test split lost a class; use a smaller train_fraction")
        train = Dataset(
            dataset.y[train_idx], dataset.Z[train_idx],
            dataset.has_intercept, list(dataset.names),
        )
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            fit_opts = solver_opts or SolverOptions(kkt_tol=1e-3)
            path = select_lambda(train, family, cs, grid_size=grid_size, opts=fit_opts)
            polished = _polish_selected(path, train, family, cs, fit_opts)
            inf = run_inference(
                polished, train, family, cs,
                gamma=gamma_rule(path.lambda_opt), opts=debias_opts, alpha=alpha,
            )
        Z_test = dataset.Z[test_idx]
        y_test = dataset.y[test_idx]
        b0 = polished.intercept
        beta_sel = np.where(inf.selected, inf.beta_u, 0.0)
        out["penalized"].append(auc(Z_test @ polished.beta + b0, y_test))
        out["debiased"].append(auc(Z_test @ inf.beta_u + b0, y_test))
        out["debiased_selected"].append(auc(Z_test @ beta_sel + b0, y_test))

    return AucReport(
        variants={k: np.asarray(v) for k, v in out.items()},
        train_fraction=train_fraction,
        replicates=replicates,
    )
