"""Ingestion of abundance tables into log-composition covariates.

The pipeline for raw count or abundance data is: prevalence filtering
(drop rare taxa), zero replacement (a fraction of the smallest positive
entry), then the log-composition transform

    Z_ij = log( W_ij / sum_k W_ik ),

whose rows are log relative abundances.  Scale invariance of compositions
makes any per-sample normalization of W irrelevant after the transform.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class AbundanceTable:
    """Nonnegative abundance matrix with taxon and sample labels."""

    W: np.ndarray
    taxa: list[str]
    samples: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        if self.W.ndim != 2:
            raise DataError("abundance matrix must be 2-d")
        n, p = self.W.shape
        if len(self.taxa) != p:
            raise DataError(f"{len(self.taxa)} taxon names for {p} columns")
        if not self.samples:
            self.samples = [f"s{i + 1}" for i in range(n)]
        elif len(self.samples) != n:
            raise DataError(f"{len(self.samples)} sample ids for {n} rows")
        if not np.all(np.isfinite(self.W)):
            raise DataError("abundance matrix contains non-finite values")
        if np.any(self.W < 0):
            raise DataError("abundances must be nonnegative")
        if np.any(np.all(self.W == 0, axis=1)):
            bad = int(np.flatnonzero(np.all(self.W == 0, axis=1))[0])
            raise DataError(f"sample {self.samples[bad]!r} has all-zero abundances")

    @property
    def n(self) -> int:
        return self.W.shape[0]

    @property
    def p(self) -> int:
        return self.W.shape[1]


def load_abundance_csv(path: str) -> AbundanceTable:
    """Read an abundance CSV: header of taxon names, first column sample ids."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if len(header) < 2:
            raise DataError(f"{path}: need a sample-id column plus taxon columns")
        taxa = [h.strip() for h in header[1:]]
        samples: list[str] = []
        rows: list[list[float]] = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(
                    f"{path}: line {lineno} has {len(row)} fields, expected {len(header)}"
                )
            samples.append(row[0].strip())
            vals = []
            for j, cell in enumerate(row[1:], start=2):
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise DataError(
                        f"{path}: line {lineno}, column {j} ({taxa[j - 2]!r}): "
                        f"malformed number {cell!r}"
                    ) from None
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return AbundanceTable(np.asarray(rows), taxa, samples)


def filter_prevalence(table: AbundanceTable, min_fraction: float) -> AbundanceTable:
    """Keep taxa observed (positive) in at least min_fraction of samples."""
    if not 0.0 <= min_fraction <= 1.0:
        raise ValueError("min_fraction must lie in [0, 1]")
    prev = np.mean(table.W > 0, axis=0)
    keep = prev >= min_fraction
    if not np.any(keep):
        raise DataError(
            f"no taxon reaches prevalence {min_fraction}; nothing to analyze"
        )
    return AbundanceTable(
        table.W[:, keep],
        [t for t, k in zip(table.taxa, keep) if k],
        list(table.samples),
    )


def replace_zeros(table: AbundanceTable, per_taxon: bool = False) -> AbundanceTable:
    """Replace zeros by half the smallest positive entry.

    By default the minimum is global; per_taxon=True uses each taxon's own
    smallest positive value (taxa with no positive entry fall back to the
    global minimum).
    """
    W = table.W.copy()
    positive = W[W > 0]
    if positive.size == 0:
        raise DataError("abundance table has no positive entries")
    global_min = float(np.min(positive))
    if per_taxon:
        fills = np.full(table.p, 0.5 * global_min)
        for j in range(table.p):
            col = W[:, j]
            pos = col[col > 0]
            if pos.size:
                fills[j] = 0.5 * float(np.min(pos))
        for j in range(table.p):
            W[W[:, j] == 0, j] = fills[j]
    else:
        W[W == 0] = 0.5 * global_min
    return AbundanceTable(W, list(table.taxa), list(table.samples))


def to_log_composition(table: AbundanceTable) -> np.ndarray:
    """Z_ij = log(W_ij / row sum); requires strictly positive entries."""
    if np.any(table.W <= 0):
        raise DataError(
            "log-composition needs strictly positive entries; run replace_zeros first"
        )
    logW = np.log(table.W)
    return logW - np.log(np.sum(table.W, axis=1))[:, None]
