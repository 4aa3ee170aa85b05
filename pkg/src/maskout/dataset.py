"""Incomplete-data containers: CSV ingestion, standardization, synthetic
amputation (MCAR / MAR / monotone dropout), cross-fitting folds, and the
monotone view.

Conventions: `values` is an n x d float matrix; `mask` is an n x d boolean
matrix with True where the entry is observed. Entries under a False mask are
set to NaN and must never be read. Datasets are immutable after construction;
every transformation returns a new object.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .patterns import ResponsePattern
from .rng import substream

__all__ = [
    "IncompleteDataset",
    "GroundTruthDataset",
    "FoldAssignment",
    "MonotoneDataset",
    "load_csv",
    "write_csv",
    "standardize",
    "destandardize",
    "ampute_mcar",
    "ampute_mar",
    "ampute_monotone_dropout",
    "make_folds",
    "as_monotone",
    "from_arrays",
]

DEFAULT_NA_TOKEN = "NA"


@dataclass(frozen=True)
class IncompleteDataset:
    values: np.ndarray  # (n, d) float64, NaN where unobserved
    mask: np.ndarray  # (n, d) bool, True = observed
    column_names: tuple[str, ...]
    # per-column (mean, sd) applied to the observed entries, or None
    standardization: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        v, m = self.values, self.mask
        if v.shape != m.shape or v.ndim != 2:
            raise ValueError(f"values {v.shape} and mask {m.shape} must be equal 2-d shapes")
        if len(self.column_names) != v.shape[1]:
            raise ValueError("column_names length does not match d")
        if v.shape[1] > 64:
            raise ValueError(f"d={v.shape[1]} exceeds the supported maximum of 64 variables")

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def pattern_of_row(self, i: int) -> ResponsePattern:
        bits = 0
        for j in range(self.d):
            if self.mask[i, j]:
                bits |= 1 << j
        return ResponsePattern(d=self.d, bits=bits)

    def row_patterns(self) -> list[ResponsePattern]:
        weights = 1 << np.arange(self.d, dtype=np.int64)
        bits = (self.mask.astype(np.int64) * weights).sum(axis=1)
        return [ResponsePattern(d=self.d, bits=int(b)) for b in bits]

    def all_missing_rows(self) -> np.ndarray:
        """Indices of rows with zero observed entries (retained but flagged;
        they contribute to no criterion)."""
        return np.flatnonzero(~self.mask.any(axis=1))

    def subset_rows(self, idx) -> "IncompleteDataset":
        idx = np.asarray(idx)
        return IncompleteDataset(
            values=self.values[idx].copy(),
            mask=self.mask[idx].copy(),
            column_names=self.column_names,
            standardization=self.standardization,
        )


@dataclass(frozen=True)
class GroundTruthDataset:
    """A complete matrix paired with the incomplete dataset amputed from it."""

    complete: np.ndarray
    incomplete: IncompleteDataset

    def __post_init__(self):
        inc = self.incomplete
        if self.complete.shape != inc.values.shape:
            raise ValueError("complete matrix shape does not match incomplete dataset")
        obs = inc.mask
        if not np.array_equal(self.complete[obs], inc.values[obs]):
            raise ValueError("complete matrix disagrees with observed entries")

    def missing_entries(self) -> np.ndarray:
        """(k, 2) array of (row, col) indices of the genuinely missing entries."""
        return np.argwhere(~self.incomplete.mask)


@dataclass(frozen=True)
class FoldAssignment:
    fold_of_row: np.ndarray  # (n,) ints in [0, n_folds)
    n_folds: int
    seed: int

    def test_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row == k)

    def train_rows(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of_row != k)


@dataclass(frozen=True)
class MonotoneDataset:
    """View of an incomplete dataset whose rows all have prefix patterns.

    t_of_row[i] is the number of leading observed variables of row i (the
    dropout time T)."""

    data: IncompleteDataset
    t_of_row: np.ndarray = field(default=None)  # type: ignore[assignment]

    @property
    def n(self) -> int:
        return self.data.n

    @property
    def d(self) -> int:
        return self.data.d


def from_arrays(values, mask, column_names=None, standardization=None) -> IncompleteDataset:
    """Build a dataset from raw arrays, NaN-ing out the unobserved entries."""
    values = np.asarray(values, dtype=float).copy()
    mask = np.asarray(mask, dtype=bool).copy()
    values[~mask] = np.nan
    if column_names is None:
        column_names = tuple(f"x{j + 1}" for j in range(values.shape[1]))
    return IncompleteDataset(
        values=values, mask=mask, column_names=tuple(column_names),
        standardization=standardization,
    )


class CsvParseError(ValueError):
    pass


def load_csv(path, na_token: str = DEFAULT_NA_TOKEN) -> IncompleteDataset:
    """Strict CSV reader: one header row, numeric cells, exact NA token.

    A cell is missing iff it is empty or equals `na_token` (case-sensitive).
    Anything else must parse to a finite float; "nan"/"inf" are rejected so
    that silent coercion can never masquerade as a missing-data convention.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError(f"{path}: empty file, expected a header row")
        d = len(header)
        if d == 0:
            raise CsvParseError(f"{path}: header row has no columns")
        rows, mask_rows = [], []
        for line_no, cells in enumerate(reader, start=2):
            if len(cells) != d:
                raise CsvParseError(
                    f"{path}:{line_no}: ragged row, expected {d} cells got {len(cells)}"
                )
            vals = np.empty(d)
            obs = np.empty(d, dtype=bool)
            for j, cell in enumerate(cells):
                cell = cell.strip()
                if cell == "" or cell == na_token:
                    vals[j] = np.nan
                    obs[j] = False
                    continue
                try:
                    x = float(cell)
                except ValueError:
                    raise CsvParseError(
                        f"{path}:{line_no}: column {j + 1} ({header[j]}): "
                        f"cannot parse {cell!r} as a number"
                    )
                if not math.isfinite(x):
                    raise CsvParseError(
                        f"{path}:{line_no}: column {j + 1} ({header[j]}): "
                        f"non-finite value {cell!r}"
                    )
                vals[j] = x
                obs[j] = True
            rows.append(vals)
            mask_rows.append(obs)
    values = np.array(rows) if rows else np.empty((0, d))
    mask = np.array(mask_rows) if mask_rows else np.empty((0, d), dtype=bool)
    return IncompleteDataset(values=values, mask=mask, column_names=tuple(header))


def write_csv(ds: IncompleteDataset, path, na_token: str = DEFAULT_NA_TOKEN) -> None:
    """Inverse of load_csv on (observed values, mask)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(ds.column_names)
        for i in range(ds.n):
            writer.writerow(
                [repr(float(ds.values[i, j])) if ds.mask[i, j] else na_token
                 for j in range(ds.d)]
            )


def standardize(ds: IncompleteDataset) -> IncompleteDataset:
    """Scale each column's observed entries to sample mean 0 and sd 1 (ddof=1).

    The (mean, sd) pair is retained so the transform can be inverted. Constant
    or nearly-empty columns are an error: the masking losses would not be
    comparable across variables.
    """
    values = ds.values.copy()
    stats = []
    for j in range(ds.d):
        obs = ds.mask[:, j]
        col = ds.values[obs, j]
        if col.size < 2:
            raise ValueError(f"column {ds.column_names[j]}: need >= 2 observed entries")
        mean = float(col.mean())
        sd = float(col.std(ddof=1))
        if sd <= 0.0:
            raise ValueError(f"column {ds.column_names[j]}: constant column, sd = 0")
        values[obs, j] = (col - mean) / sd
        stats.append((mean, sd))
    return IncompleteDataset(
        values=values, mask=ds.mask.copy(), column_names=ds.column_names,
        standardization=tuple(stats),
    )


def destandardize(ds: IncompleteDataset) -> IncompleteDataset:
    if ds.standardization is None:
        raise ValueError("dataset carries no standardization metadata")
    values = ds.values.copy()
    for j, (mean, sd) in enumerate(ds.standardization):
        obs = ds.mask[:, j]
        values[obs, j] = values[obs, j] * sd + mean
    return IncompleteDataset(values=values, mask=ds.mask.copy(), column_names=ds.column_names)


def ampute_mcar(complete: np.ndarray, p: float, seed: int) -> GroundTruthDataset:
    """Mask each entry independently with probability p."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"p must be in [0, 1), got {p}")
    complete = np.asarray(complete, dtype=float)
    rng = substream(seed, 0)
    mask = rng.random(complete.shape) >= p
    return GroundTruthDataset(complete=complete, incomplete=from_arrays(complete, mask))


def _logistic(z):
    return 1.0 / (1.0 + np.exp(-z))


def ampute_mar(
    complete: np.ndarray,
    target_fraction: float,
    seed: int,
    slope: float = 1.0,
) -> GroundTruthDataset:
    """Self-contained MAR amputation.

    For each row one candidate column is chosen uniformly; that entry is
    masked with probability logistic(a + slope * zbar), where zbar is the
    standardized mean of the row's other columns and the intercept a is
    calibrated by bisection so that the expected fraction of masked candidates
    (equivalently, of incomplete rows) equals target_fraction. Missingness
    depends only on values that stay observed, hence MAR. slope=0 reduces to
    MCAR over the candidate entries.
    """
    if not 0.0 < target_fraction < 1.0:
        raise ValueError(f"target_fraction must be in (0, 1), got {target_fraction}")
    complete = np.asarray(complete, dtype=float)
    n, d = complete.shape
    if d < 2:
        raise ValueError("MAR amputation needs d >= 2")
    rng = substream(seed, 0)
    candidate = rng.integers(0, d, size=n)

    col_mean = complete.mean(axis=0)
    col_sd = complete.std(axis=0, ddof=1)
    col_sd[col_sd <= 0] = 1.0
    z = (complete - col_mean) / col_sd
    zbar = np.empty(n)
    for i in range(n):
        others = np.delete(z[i], candidate[i])
        zbar[i] = others.mean()

    def expected_fraction(a):
        return _logistic(a + slope * zbar).mean()

    lo, hi = -50.0, 50.0
    if not expected_fraction(lo) <= target_fraction <= expected_fraction(hi):
        raise ValueError("MAR calibration failed to bracket the target fraction")
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if expected_fraction(mid) < target_fraction:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi)
    realized = expected_fraction(a)
    if abs(realized - target_fraction) > 0.01:
        raise ValueError(
            f"MAR calibration off target: expected fraction {realized:.4f} "
            f"vs target {target_fraction:.4f}"
        )

    prob = _logistic(a + slope * zbar)
    mask = np.ones((n, d), dtype=bool)
    drop = rng.random(n) < prob
    mask[np.arange(n)[drop], candidate[drop]] = False
    return GroundTruthDataset(complete=complete, incomplete=from_arrays(complete, mask))


def ampute_monotone_dropout(
    complete: np.ndarray,
    base_hazard: float,
    seed: int,
    slope: float = 0.0,
) -> GroundTruthDataset:
    """Monotone (dropout) amputation: MAR when slope depends on history.

    Variable 1 is always observed. After observing x_t, the row drops out
    (T = t, all later variables missing) with probability
    logistic(logit(base_hazard) + slope * x_t), which depends only on the
    observed history.
    """
    if not 0.0 < base_hazard < 1.0:
        raise ValueError(f"base_hazard must be in (0, 1), got {base_hazard}")
    complete = np.asarray(complete, dtype=float)
    n, d = complete.shape
    rng = substream(seed, 0)
    intercept = math.log(base_hazard / (1.0 - base_hazard))
    mask = np.ones((n, d), dtype=bool)
    alive = np.ones(n, dtype=bool)
    for t in range(1, d):
        hazard = _logistic(intercept + slope * complete[:, t - 1])
        drop = alive & (rng.random(n) < hazard)
        mask[drop, t:] = False
        alive &= ~drop
    return GroundTruthDataset(complete=complete, incomplete=from_arrays(complete, mask))


def make_folds(ds: IncompleteDataset, n_folds: int, seed: int) -> FoldAssignment:
    """Uniform random partition into n_folds folds with sizes differing <= 1."""
    if n_folds < 2:
        raise ValueError(f"need n_folds >= 2, got {n_folds}")
    if ds.n < n_folds:
        raise ValueError(f"n={ds.n} rows cannot fill {n_folds} folds")
    rng = substream(seed, 0)
    order = rng.permutation(ds.n)
    fold_of_row = np.empty(ds.n, dtype=int)
    fold_of_row[order] = np.arange(ds.n) % n_folds
    return FoldAssignment(fold_of_row=fold_of_row, n_folds=n_folds, seed=seed)


def as_monotone(ds: IncompleteDataset) -> MonotoneDataset:
    """Wrap a dataset whose rows all have prefix patterns 1...10...0."""
    t_of_row = np.empty(ds.n, dtype=int)
    for i, r in enumerate(ds.row_patterns()):
        if not r.is_prefix():
            raise ValueError(f"row {i} has non-monotone pattern {r}")
        t_of_row[i] = r.weight()
    return MonotoneDataset(data=ds, t_of_row=t_of_row)
