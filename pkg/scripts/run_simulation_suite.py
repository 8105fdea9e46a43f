#!/usr/bin/env python
"""Run the benchmark experiment matrix and write a consolidated report.

Runs the coverage/selection Monte-Carlo experiment over a grid of sample
sizes and constraint modes (the synthetic benchmark design: p covariates,
logistic response, 8 informative coordinates in two zero-sum blocks), then
summarizes the quantities the package is judged on:

  - true/false selection rates at n=500 under each mode,
  - mean interval coverage and length per (mode, n) cell,
  - monotonicity of interval length in n,
  - constraint feasibility of the de-biased estimate,
  - normality of pooled null-coordinate z-statistics (KS test).

Outputs: one JSON per cell plus summary.json and summary.csv in
--output-dir.  Deterministic given --seed; cells are independent.

Usage:
    python scripts/run_simulation_suite.py --output-dir out/suite \
        --replicates 100 --threads 1
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time

import numpy as np
from scipy import stats

from compglm.experiments import ExperimentConfig, run_coverage_experiment

DEFAULT_NS = (50, 100, 200, 500)
DEFAULT_MODES = ("multi", "none")


def cell_payload(report) -> dict:
    z = report.z_null
    payload = {
        "mode": report.config.mode,
        "n": report.config.n,
        "p": report.config.p,
        "replicates": report.config.replicates,
        "n_failed": report.n_failed,
        "tp_rate": report.tp_rate,
        "fp_rate": report.fp_rate,
        "mean_coverage": report.mean_coverage,
        "mean_ci_length": report.mean_ci_length,
        "max_constraint_violation": report.max_constraint_violation,
        "z_null_count": int(z.size),
        "z_null_mean": float(np.mean(z)) if z.size else None,
        "z_null_sd": float(np.std(z, ddof=1)) if z.size > 1 else None,
        "coverage": [float(c) for c in report.coverage],
        "ci_length": [float(c) for c in report.ci_length],
        "selection_rate": [float(s) for s in report.selection_rate],
        "lambda_opt_mean": float(np.mean(report.lambda_opts)),
        "timing_seconds": report.timing_seconds,
    }
    if z.size > 1:
        ks = stats.kstest(z, "norm")
        payload["ks_statistic"] = float(ks.statistic)
        payload["ks_pvalue"] = float(ks.pvalue)
    return payload


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--output-dir", required=True)
    parser.add_argument("--p", type=int, default=50)
    parser.add_argument("--ns", type=int, nargs="+", default=list(DEFAULT_NS))
    parser.add_argument("--modes", nargs="+", default=list(DEFAULT_MODES))
    parser.add_argument("--replicates", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--threads", type=int, default=1)
    args = parser.parse_args(argv)

    os.makedirs(args.output_dir, exist_ok=True)
    summary: dict[str, dict] = {}
    t0 = time.perf_counter()
    for mode in args.modes:
        for n in args.ns:
            cfg = ExperimentConfig(
                n=n, p=args.p, mode=mode,
                replicates=args.replicates, base_seed=args.seed,
                threads=args.threads,
            )
            report = run_coverage_experiment(cfg)
            payload = cell_payload(report)
            key = f"{mode}-n{n}"
            summary[key] = payload
            with open(os.path.join(args.output_dir, f"cell-{key}.json"), "w") as fh:
                json.dump(payload, fh, sort_keys=True, indent=2)
                fh.write("\n")
            print(
                f"[{key}] tp={payload['tp_rate']:.3f} fp={payload['fp_rate']:.3f} "
                f"coverage={payload['mean_coverage']:.3f} "
                f"length={payload['mean_ci_length']:.3f} "
                f"feas={payload['max_constraint_violation']:.2e} "
                f"({payload['timing_seconds']:.0f}s)",
                flush=True,
            )

    # trend checks over the grid
    checks: dict[str, bool] = {}
    for mode in args.modes:
        lengths = [summary[f"{mode}-n{n}"]["mean_ci_length"] for n in sorted(args.ns)]
        checks[f"length_decreasing_{mode}"] = all(
            a > b for a, b in zip(lengths, lengths[1:])
        )
    if set(("multi", "none")) <= set(args.modes):
        checks["multi_shorter_at_every_n"] = all(
            summary[f"multi-n{n}"]["mean_ci_length"]
            <= summary[f"none-n{n}"]["mean_ci_length"]
            for n in args.ns
        )

    wall = time.perf_counter() - t0
    out = {"cells": summary, "checks": checks, "total_seconds": wall}
    with open(os.path.join(args.output_dir, "summary.json"), "w") as fh:
        json.dump(out, fh, sort_keys=True, indent=2)
        fh.write("\n")

    fields = [
        "mode", "n", "tp_rate", "fp_rate", "mean_coverage", "mean_ci_length",
        "max_constraint_violation", "ks_statistic", "ks_pvalue",
        "z_null_sd", "n_failed", "timing_seconds",
    ]
    with open(os.path.join(args.output_dir, "summary.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(fields)
        for key in sorted(summary):
            cell = summary[key]
            writer.writerow([cell.get(f, "") for f in fields])

    print(f"total {wall:.0f}s; checks: {checks}", flush=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
