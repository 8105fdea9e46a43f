"""Command-line interface: fit, infer, simulate, evaluate, stability, predict.

Every subcommand is deterministic given its config and seed; outputs are
JSON (metadata plus results) and headered CSV files written into
--output-dir.  Exit codes: 0 success, 1 user/input error, 2 numerical
failure.  On failure a machine-readable error object is printed to stderr:

    {"error": {"kind": "io" | "validation" | "numerical", "message": ...}}
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys

import numpy as np
from scipy import stats

from .composition import (
    filter_prevalence,
    load_abundance_csv,
    replace_zeros,
    to_log_composition,
)
from .constraints import ConstraintSet, build_group_constraints, read_groups_json
from .inference import DebiasOptions, run_inference
from .errors import CompglmError, DataError
from .experiments import (
    AUC_VARIANTS,
    ExperimentConfig,
    run_coverage_experiment,
    stability_selection,
    train_test_evaluate,
)
from .families import Dataset, get_family
from .selection import ebic, gamma_rule, select_lambda
from .simulate import (
    CONSTRAINT_MODES,
    GENERATOR_ID,
    SimulationConfig,
    simulate_dataset,
    true_groups,
)
from .solver import fit

SCHEMA_VERSION = "1"
THREADS_ENV = "COMPGLM_THREADS"


def _f(x) -> str:
    """Full-precision, deterministic float formatting for CSV cells."""
    return repr(float(x))


def _meta(command: str, config: dict) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "generator": GENERATOR_ID,
        "config": config,
    }


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _write_csv(path: str, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


def _load_labels(path: str) -> dict[str, float]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            next(reader)  # header
        except StopIteration:
            raise DataError(f"{path}: empty labels file") from None
        labels = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) < 2:
                raise DataError(f"{path}: line {lineno} needs sample,label")
            try:
                labels[row[0].strip()] = float(row[1])
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}: malformed label {row[1]!r}"
                ) from None
    if not labels:
        raise DataError(f"{path}: no label rows")
    return labels


def _load_dataset(args) -> tuple[Dataset, ConstraintSet]:
    """Shared ingestion: abundance CSV + labels -> log-composition Dataset.

    Constraint group indices refer to the column order after prevalence
    filtering.
    """
    table = load_abundance_csv(args.input)
    if args.min_prevalence > 0.0:
        table = filter_prevalence(table, args.min_prevalence)
    if np.any(table.W == 0):
        table = replace_zeros(table, per_taxon=args.per_taxon_zeros)
    Z = to_log_composition(table)

    labels = _load_labels(args.labels)
    missing = [s for s in table.samples if s not in labels]
    if missing:
        raise DataError(f"labels file is missing samples: {missing[:5]}")
    y = np.array([labels[s] for s in table.samples])

    family = get_family(args.family)
    family.validate_response(y)
    dataset = Dataset(y, Z, has_intercept=True, names=list(table.taxa))

    p = dataset.p
    if args.constraints == "sum-to-zero":
        cs = ConstraintSet.zero_sum(p)
    elif args.constraints == "none":
        cs = ConstraintSet.none(p)
    else:
        cs = build_group_constraints(read_groups_json(args.constraints), p)
    return dataset, cs


def _selected_fit(dataset, family, cs, args):
    """Resolve --penalty: a number, or 'ebic' for path selection."""
    if args.penalty == "ebic":
        path = select_lambda(dataset, family, cs, grid_size=args.grid_size)
        return path.selected, path
    try:
        lam = float(args.penalty)
    except ValueError:
        raise ValueError(
            f"--penalty must be a number or 'ebic', got {args.penalty!r}"
        ) from None
    if lam < 0:
        raise ValueError("--penalty must be nonnegative")
    return fit(dataset, family, cs, lam), None


def _write_path_csv(path_result, out_path: str) -> None:
    seen = set()
    rows = []
    for i, (lam, fr, val) in enumerate(
        zip(path_result.lambdas, path_result.fits, path_result.ebic_values)
    ):
        df = int(np.count_nonzero(fr.beta))
        representative = df not in seen
        seen.add(df)
        rows.append(
            [
                _f(lam),
                _f(val),
                df,
                int(fr.converged),
                int(representative),
                int(i == path_result.selected_index),
            ]
        )
    _write_csv(
        out_path,
        ["lambda", "ebic", "support_size", "converged", "representative", "selected"],
        rows,
    )


def _fit_payload(fit_result, dataset, meta: dict) -> dict:
    payload = dict(meta)
    payload.update(
        {
            "lambda": fit_result.lam,
            "intercept": fit_result.intercept,
            "beta": [float(b) for b in fit_result.beta],
            "names": list(dataset.names),
            "support": [dataset.names[j] for j in fit_result.support()],
            "converged": bool(fit_result.converged),
            "n_iters": int(fit_result.n_iters),
            "kkt_residual": float(fit_result.kkt_residual),
            "n": dataset.n,
            "p": dataset.p,
        }
    )
    return payload


def cmd_fit(args) -> None:
    dataset, cs = _load_dataset(args)
    family = get_family(args.family)
    fit_result, path = _selected_fit(dataset, family, cs, args)
    os.makedirs(args.output_dir, exist_ok=True)
    config = {
        "input": args.input,
        "labels": args.labels,
        "family": args.family,
        "constraints": args.constraints,
        "penalty": args.penalty,
        "grid_size": args.grid_size,
        "min_prevalence": args.min_prevalence,
        "per_taxon_zeros": args.per_taxon_zeros,
    }
    payload = _fit_payload(fit_result, dataset, _meta("fit", config))
    payload["ebic"] = ebic(fit_result, dataset, family, cs)
    if path is not None:
        _write_path_csv(path, os.path.join(args.output_dir, "path.csv"))
        payload["path_csv"] = "path.csv"
    _write_json(os.path.join(args.output_dir, "fit.json"), payload)
    print(f"fit: lambda={fit_result.lam:g} support={len(fit_result.support())} "
          f"converged={fit_result.converged}")


def cmd_infer(args) -> None:
    dataset, cs = _load_dataset(args)
    family = get_family(args.family)
    fit_result, path = _selected_fit(dataset, family, cs, args)
    if args.gamma == "auto":
        gamma = gamma_rule(fit_result.lam)
    else:
        gamma = float(args.gamma)
        if gamma <= 0:
            raise ValueError("--gamma must be positive")
    inf = run_inference(
        fit_result, dataset, family, cs, gamma, DebiasOptions(), alpha=args.alpha
    )
    os.makedirs(args.output_dir, exist_ok=True)
    rows = []
    for j, name in enumerate(dataset.names):
        failed = bool(inf.failed[j])
        rows.append(
            [
                j + 1,
                name,
                _f(fit_result.beta[j]),
                _f(inf.beta_u[j]),
                "" if failed else _f(inf.se[j]),
                "" if failed else _f(inf.lower[j]),
                "" if failed else _f(inf.upper[j]),
                int(bool(inf.selected[j])),
                int(failed),
            ]
        )
    _write_csv(
        os.path.join(args.output_dir, "intervals.csv"),
        ["coordinate", "name", "penalized", "debiased", "se", "lower", "upper",
         "selected", "failed"],
        rows,
    )
    config = {
        "input": args.input,
        "labels": args.labels,
        "family": args.family,
        "constraints": args.constraints,
        "penalty": args.penalty,
        "grid_size": args.grid_size,
        "gamma": args.gamma,
        "alpha": args.alpha,
        "min_prevalence": args.min_prevalence,
        "per_taxon_zeros": args.per_taxon_zeros,
    }
    payload = _fit_payload(fit_result, dataset, _meta("infer", config))
    payload.update(
        {
            "gamma_resolved": gamma,
            "alpha": args.alpha,
            "z_multiplier": float(stats.norm.ppf(1.0 - args.alpha / 2.0)),
            "debiased": [float(b) for b in inf.beta_u],
            "selected": [dataset.names[j] for j in np.flatnonzero(inf.selected)],
            "n_failed_rows": int(np.sum(inf.failed)),
            "gamma_escalations": [int(e) for e in inf.escalations],
            "qp_iterations": int(inf.qp_iterations),
            "intervals_csv": "intervals.csv",
        }
    )
    _write_json(os.path.join(args.output_dir, "inference.json"), payload)
    print(f"infer: gamma={gamma:g} selected={int(np.sum(inf.selected))} "
          f"failed_rows={int(np.sum(inf.failed))}")


def cmd_simulate(args) -> None:
    config = SimulationConfig(
        n=args.n, p=args.p, seed=args.seed, zeta=args.zeta, intercept=args.intercept
    )
    sim = simulate_dataset(config)
    os.makedirs(args.output_dir, exist_ok=True)
    header = ["sample", "y"] + [f"z{j + 1}" for j in range(args.p)]
    rows = [
        [f"s{i + 1}", _f(sim.dataset.y[i])] + [_f(v) for v in sim.dataset.Z[i]]
        for i in range(args.n)
    ]
    _write_csv(os.path.join(args.output_dir, "dataset.csv"), header, rows)
    _write_csv(
        os.path.join(args.output_dir, "beta_true.csv"),
        ["coordinate", "beta"],
        [[j + 1, _f(b)] for j, b in enumerate(sim.beta_true)],
    )
    _write_json(
        os.path.join(args.output_dir, "groups.json"),
        {"groups": [list(g) for g in sim.groups.groups]},
    )
    payload = _meta(
        "simulate",
        {
            "n": args.n,
            "p": args.p,
            "seed": args.seed,
            "zeta": args.zeta,
            "intercept": args.intercept,
            "case_fraction": config.case_fraction,
        },
    )
    payload["n_cases"] = int(np.sum(sim.dataset.y == 1.0))
    payload["n_controls"] = int(np.sum(sim.dataset.y == 0.0))
    payload["rows_drawn"] = sim.n_draws
    _write_json(os.path.join(args.output_dir, "config.json"), payload)
    print(f"simulate: n={args.n} p={args.p} cases={payload['n_cases']} "
          f"written to {args.output_dir}")


def cmd_evaluate(args) -> None:
    cfg = ExperimentConfig(
        n=args.n,
        p=args.p,
        mode=args.mode,
        replicates=args.replicates,
        base_seed=args.seed,
        alpha=args.alpha,
        grid_size=args.grid_size,
        threads=args.threads,
    )
    report = run_coverage_experiment(cfg)
    os.makedirs(args.output_dir, exist_ok=True)
    config = {
        "mode": args.mode,
        "n": args.n,
        "p": args.p,
        "replicates": args.replicates,
        "seed": args.seed,
        "alpha": args.alpha,
        "grid_size": args.grid_size,
        "threads": args.threads,
    }
    payload = _meta("evaluate", config)
    payload.update(
        {
            "mean_coverage": report.mean_coverage,
            "mean_ci_length": report.mean_ci_length,
            "tp_rate": report.tp_rate,
            "fp_rate": report.fp_rate,
            "max_constraint_violation": report.max_constraint_violation,
            "n_failed": report.n_failed,
            "failed_indices": report.failed_indices,
            "coverage": [float(c) for c in report.coverage],
            "ci_length": [float(c) for c in report.ci_length],
            "selection_rate": [float(s) for s in report.selection_rate],
            "report_csv": "report.csv",
        }
    )
    _write_json(os.path.join(args.output_dir, "report.json"), payload)
    tidy_rows = [
        [
            args.mode,
            args.n,
            args.p,
            j + 1,
            _f(report.beta_true[j]),
            _f(report.coverage[j]),
            _f(report.ci_length[j]),
            _f(report.selection_rate[j]),
        ]
        for j in range(args.p)
    ]
    header = ["mode", "n", "p", "coordinate", "beta_true", "coverage",
              "mean_ci_length", "selection_rate"]
    _write_csv(os.path.join(args.output_dir, "report.csv"), header, tidy_rows)
    if args.figure_data:
        _write_csv(os.path.join(args.output_dir, "figure_data.csv"), header, tidy_rows)
    print(
        f"evaluate[{args.mode}]: n={args.n} reps={args.replicates} "
        f"coverage={report.mean_coverage:.3f} length={report.mean_ci_length:.3f} "
        f"tp={report.tp_rate:.3f} fp={report.fp_rate:.3f}"
    )


def cmd_stability(args) -> None:
    dataset, cs = _load_dataset(args)
    family = get_family(args.family)
    report = stability_selection(
        dataset,
        family,
        cs,
        n_subsamples=args.subsamples,
        fraction=args.fraction,
        seed=args.seed,
        grid_size=args.grid_size,
    )
    os.makedirs(args.output_dir, exist_ok=True)
    header = ["taxon"] + [_f(lam) for lam in report.lambdas]
    rows = [
        [report.names[j]] + [_f(v) for v in report.frequency[j]]
        for j in range(len(report.names))
    ]
    _write_csv(os.path.join(args.output_dir, "stability.csv"), header, rows)
    config = {
        "input": args.input,
        "labels": args.labels,
        "family": args.family,
        "constraints": args.constraints,
        "subsamples": args.subsamples,
        "fraction": args.fraction,
        "seed": args.seed,
        "grid_size": args.grid_size,
        "min_prevalence": args.min_prevalence,
        "per_taxon_zeros": args.per_taxon_zeros,
    }
    payload = _meta("stability", config)
    payload["max_frequency"] = {
        report.names[j]: float(np.max(report.frequency[j]))
        for j in range(len(report.names))
    }
    payload["stability_csv"] = "stability.csv"
    _write_json(os.path.join(args.output_dir, "stability.json"), payload)
    print(f"stability: {args.subsamples} subsamples over {len(report.lambdas)} penalties")


def cmd_predict(args) -> None:
    dataset, cs = _load_dataset(args)
    family = get_family(args.family)
    report = train_test_evaluate(
        dataset,
        family,
        cs,
        train_fraction=args.train_fraction,
        replicates=args.replicates,
        seed=args.seed,
        grid_size=args.grid_size,
        alpha=args.alpha,
    )
    os.makedirs(args.output_dir, exist_ok=True)
    rows = []
    for name in AUC_VARIANTS:
        for i, value in enumerate(report.variants[name]):
            rows.append([i, name, _f(value)])
    _write_csv(
        os.path.join(args.output_dir, "auc.csv"), ["replicate", "variant", "auc"], rows
    )
    config = {
        "input": args.input,
        "labels": args.labels,
        "family": args.family,
        "constraints": args.constraints,
        "train_fraction": args.train_fraction,
        "replicates": args.replicates,
        "seed": args.seed,
        "grid_size": args.grid_size,
        "alpha": args.alpha,
        "min_prevalence": args.min_prevalence,
        "per_taxon_zeros": args.per_taxon_zeros,
    }
    payload = _meta("predict", config)
    payload["auc"] = report.summary()
    payload["auc_csv"] = "auc.csv"
    _write_json(os.path.join(args.output_dir, "auc.json"), payload)
    means = {k: v["mean"] for k, v in report.summary().items()}
    print("predict: " + " ".join(f"{k}={v:.3f}" for k, v in means.items()))


def _add_data_args(sp) -> None:
    sp.add_argument("--input", required=True, help="abundance CSV (taxa in header)")
    sp.add_argument("--labels", required=True, help="CSV with sample,label rows")
    sp.add_argument("--family", default="logistic",
                    choices=["logistic", "gaussian", "poisson"])
    sp.add_argument(
        "--constraints",
        default="sum-to-zero",
        help="'sum-to-zero', 'none', or path to a JSON list of 1-based index groups "
        "(indices refer to post-filter column order)",
    )
    sp.add_argument("--min-prevalence", type=float, default=0.0,
                    help="drop taxa observed in fewer than this fraction of samples")
    sp.add_argument("--per-taxon-zeros", action="store_true",
                    help="replace zeros per taxon instead of globally")
    sp.add_argument("--output-dir", required=True)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="compglm",
        description="Constrained l1-penalized GLMs with de-biased inference "
        "for compositional covariates",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("fit", help="fit the penalized model")
    _add_data_args(sp)
    sp.add_argument("--penalty", default="ebic", help="a number, or 'ebic' (default)")
    sp.add_argument("--grid-size", type=int, default=50)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("infer", help="de-biased estimates and intervals")
    _add_data_args(sp)
    sp.add_argument("--penalty", default="ebic", help="a number, or 'ebic' (default)")
    sp.add_argument("--grid-size", type=int, default=50)
    sp.add_argument("--gamma", default="auto",
                    help="QP tolerance; 'auto' = 0.01 * selected penalty")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("simulate", help="draw one synthetic benchmark dataset")
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--zeta", type=float, default=0.2)
    sp.add_argument("--intercept", type=float, default=-1.0)
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("evaluate", help="coverage/selection Monte-Carlo experiment")
    sp.add_argument("--mode", default="multi", choices=list(CONSTRAINT_MODES))
    sp.add_argument("--n", type=int, required=True)
    sp.add_argument("--p", type=int, required=True)
    sp.add_argument("--replicates", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.add_argument("--grid-size", type=int, default=50)
    sp.add_argument("--threads", type=int, default=_default_threads(),
                    help=f"worker processes (default ${THREADS_ENV} or 1)")
    sp.add_argument("--figure-data", action="store_true",
                    help="also write plot-ready long-format CSV")
    sp.add_argument("--output-dir", required=True)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("stability", help="subsampled selection frequencies")
    _add_data_args(sp)
    sp.add_argument("--subsamples", type=int, default=50)
    sp.add_argument("--fraction", type=float, default=2.0 / 3.0)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid-size", type=int, default=50)
    sp.set_defaults(func=cmd_stability)

    sp = sub.add_parser("predict", help="train/test AUC of fitted variants")
    _add_data_args(sp)
    sp.add_argument("--train-fraction", type=float, default=0.75)
    sp.add_argument("--replicates", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--grid-size", type=int, default=50)
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.set_defaults(func=cmd_predict)

    return parser


def _fail(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": {"kind": kind, "message": message}}) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
        return 0
    except OSError as exc:
        return _fail("io", str(exc), 1)
    except (DataError, ValueError) as exc:
        return _fail("validation", str(exc), 1)
    except CompglmError as exc:
        return _fail("numerical", str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())
