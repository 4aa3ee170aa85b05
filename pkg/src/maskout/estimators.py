"""Semiparametric estimation of a marginal mean under the masking-optimal
conditional-independence assumption.

The target is mu = E[X_t] for one study variable t. For every pattern r in
which x_t is missing there are two identified nuisances: the odds that the
pattern is r rather than r with x_t added (given the shared observed values),
and the outcome regression of x_t on x_r fitted on rows where x_t is
observed. The plug-in estimator combining both is multiply robust: for each
pattern, consistency survives misspecification of either one of the pair.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from sklearn.linear_model import LogisticRegression

from .dataset import IncompleteDataset
from .patterns import ResponsePattern

logger = logging.getLogger(__name__)

__all__ = [
    "OddsModel",
    "OutcomeModel",
    "fit_odds",
    "fit_outcome",
    "mr_estimate",
    "ipw_estimate",
    "ra_estimate",
    "EstimateReport",
]

ODDS_CLIP = (1e-6, 1e6)


@dataclass
class _OddsFn:
    kind: str  # "logistic" | "constant" | "callable"
    feature_idx: tuple[int, ...] = ()
    intercept: float = 0.0
    coef: np.ndarray | None = None
    value: float = 1.0
    fn: object = None

    def __call__(self, row) -> float:
        if self.kind == "constant":
            # an exactly-zero empirical ratio means no mass at the pattern and
            # is kept exact; only overflow is capped
            return float(min(self.value, ODDS_CLIP[1]))
        if self.kind == "callable":
            return float(np.clip(self.fn(row), 0.0, ODDS_CLIP[1]))
        z = self.intercept + float(self.coef @ row[list(self.feature_idx)])
        return float(np.clip(np.exp(np.clip(z, -50, 50)), *ODDS_CLIP))


@dataclass
class _OutcomeFn:
    kind: str  # "linear" | "callable"
    feature_idx: tuple[int, ...] = ()
    intercept: float = 0.0
    coef: np.ndarray | None = None
    fn: object = None

    def __call__(self, row) -> float:
        if self.kind == "callable":
            return float(self.fn(row))
        if not self.feature_idx:
            return self.intercept
        return self.intercept + float(self.coef @ row[list(self.feature_idx)])


@dataclass
class OddsModel:
    """Per-pattern odds O_t(x_r, r) = P(x_t missing | x_r, rest of pattern) /
    P(x_t observed | ...), keyed by the pattern bits with the target cleared.
    Outputs are clipped to [1e-6, 1e6]."""

    target: int
    fns: dict[int, _OddsFn]

    def evaluate(self, row, r: ResponsePattern) -> float:
        fn = self.fns.get(r.bits)
        if fn is None:
            raise KeyError(f"no odds fitted for pattern {r}")
        return fn(row)

    @classmethod
    def from_callables(cls, target: int, mapping: dict[int, object]) -> "OddsModel":
        return cls(target=target,
                   fns={bits: _OddsFn(kind="callable", fn=f) for bits, f in mapping.items()})


@dataclass
class OutcomeModel:
    """Per-pattern regression mu_t(x_r) = E[x_t | x_r, pattern r with x_t
    added], fitted only on rows with that donor pattern."""

    target: int
    fns: dict[int, _OutcomeFn]

    def evaluate(self, row, r: ResponsePattern) -> float:
        fn = self.fns.get(r.bits)
        if fn is None:
            raise KeyError(f"no outcome model fitted for pattern {r}")
        return fn(row)

    @classmethod
    def from_callables(cls, target: int, mapping: dict[int, object]) -> "OutcomeModel":
        return cls(target=target,
                   fns={bits: _OutcomeFn(kind="callable", fn=f) for bits, f in mapping.items()})


def _pattern_groups(ds: IncompleteDataset) -> dict[int, np.ndarray]:
    weights = 1 << np.arange(ds.d, dtype=np.int64)
    bits = (ds.mask.astype(np.int64) * weights).sum(axis=1)
    groups: dict[int, list[int]] = {}
    for i, b in enumerate(bits):
        groups.setdefault(int(b), []).append(i)
    return {b: np.array(rows) for b, rows in groups.items()}


def _needed_keys(groups: dict[int, np.ndarray], target: int) -> list[int]:
    """Every pattern (with the target bit cleared) that some data row makes
    relevant, either directly (target missing) or through its donor pattern."""
    keys = set()
    for bits in groups:
        if bits & (1 << target):
            keys.add(bits & ~(1 << target))
        else:
            keys.add(bits)
    return sorted(keys)


def fit_odds(ds: IncompleteDataset, target: int = 0, min_rows: int = 10,
             intercept_only: bool = False) -> OddsModel:
    """Logistic-classifier odds for each pattern key.

    For key r, the two-sample comparison is rows with pattern exactly r
    (target missing) versus rows with pattern r plus the target, over the
    shared observed covariates x_r; the fitted odds are p/(1-p) from an
    unpenalized logistic regression. Keys with too few rows on either side
    fall back to the empirical count ratio (intercept-only), logged. The key
    with nothing observed always uses the empirical ratio.

    intercept_only drops the covariates everywhere (a deliberately
    misspecified nuisance for robustness experiments).
    """
    groups = _pattern_groups(ds)
    e_t = 1 << target
    fns: dict[int, _OddsFn] = {}
    for bits in _needed_keys(groups, target):
        rows_missing = groups.get(bits, np.empty(0, dtype=int))
        rows_obs = groups.get(bits | e_t, np.empty(0, dtype=int))
        n0, n1 = rows_missing.size, rows_obs.size
        if n0 == 0 and n1 == 0:
            continue
        r = ResponsePattern(d=ds.d, bits=bits)
        features = r.observed_indices()
        if (not features or intercept_only or n0 < min_rows or n1 < min_rows):
            ratio = n0 / n1 if n1 > 0 else ODDS_CLIP[1]
            if features and not intercept_only:
                logger.info("odds key %s: %d/%d rows below min_rows=%d, "
                            "falling back to the empirical ratio", r, n0, n1, min_rows)
            fns[bits] = _OddsFn(kind="constant", value=ratio)
            continue
        X = np.vstack([ds.values[np.ix_(rows_missing, features)],
                       ds.values[np.ix_(rows_obs, features)]])
        y = np.concatenate([np.ones(n0), np.zeros(n1)])
        clf = LogisticRegression(penalty=None, solver="lbfgs", max_iter=2000, tol=1e-10)
        clf.fit(X, y)
        coef = clf.coef_[0]
        if np.max(np.abs(coef)) > 30:
            logger.warning("odds key %s: near-separation (|coef| up to %.1f); "
                           "outputs are clipped to %s", r, np.max(np.abs(coef)), ODDS_CLIP)
        fns[bits] = _OddsFn(kind="logistic", feature_idx=features,
                            intercept=float(clf.intercept_[0]), coef=coef.copy())
    return OddsModel(target=target, fns=fns)


def fit_outcome(ds: IncompleteDataset, target: int = 0,
                intercept_only: bool = False) -> OutcomeModel:
    """OLS of the target on x_r over the rows whose pattern is r plus the
    target, for every needed key r. The empty key is intercept-only (the mean
    of the target over rows where only it is observed)."""
    groups = _pattern_groups(ds)
    e_t = 1 << target
    fns: dict[int, _OutcomeFn] = {}
    for bits in _needed_keys(groups, target):
        donor_rows = groups.get(bits | e_t, np.empty(0, dtype=int))
        if donor_rows.size == 0:
            continue
        r = ResponsePattern(d=ds.d, bits=bits)
        features = () if intercept_only else r.observed_indices()
        if not features:
            fns[bits] = _OutcomeFn(kind="linear", feature_idx=(),
                                   intercept=float(ds.values[donor_rows, target].mean()))
            continue
        if donor_rows.size < len(features) + 2:
            raise ValueError(f"outcome key {r}: only {donor_rows.size} donor rows "
                             f"for {len(features)} covariates")
        X = np.column_stack([np.ones(donor_rows.size),
                             ds.values[np.ix_(donor_rows, features)]])
        y = ds.values[donor_rows, target]
        beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < X.shape[1]:
            logger.warning("outcome key %s: rank-deficient design, ridge fallback", r)
            beta = np.linalg.solve(X.T @ X + 1e-8 * np.eye(X.shape[1]), X.T @ y)
        fns[bits] = _OutcomeFn(kind="linear", feature_idx=features,
                               intercept=float(beta[0]), coef=beta[1:].copy())
    return OutcomeModel(target=target, fns=fns)


@dataclass
class EstimateReport:
    estimator: str
    mu_hat: float
    per_pattern: dict[str, float]
    n: int


def _estimate(ds: IncompleteDataset, target: int, contribution) -> EstimateReport:
    patterns = ds.row_patterns()
    per_pattern: dict[str, float] = {}
    total = 0.0
    for i, R in enumerate(patterns):
        c = contribution(i, R)
        total += c
        key = R.to_string()
        per_pattern[key] = per_pattern.get(key, 0.0) + c
    n = ds.n
    return EstimateReport(estimator="", mu_hat=total / n,
                          per_pattern={k: v / n for k, v in sorted(per_pattern.items())},
                          n=n)


def mr_estimate(ds: IncompleteDataset, odds: OddsModel, outcome: OutcomeModel,
                target: int = 0) -> EstimateReport:
    """Multiply-robust plug-in estimate of E[X_target].

    Rows observing the target contribute x_t plus the odds-weighted residual
    against the outcome prediction under the pattern with the target removed;
    rows missing the target contribute the outcome prediction directly.
    Consistent whenever, for every pattern, at least one of the two nuisances
    is correct.
    """

    def contribution(i, R: ResponsePattern):
        row = ds.values[i]
        if R.is_observed(target):
            r = R.mask(target)
            x_t = float(row[target])
            return x_t + odds.evaluate(row, r) * (x_t - outcome.evaluate(row, r))
        return outcome.evaluate(row, R)

    rep = _estimate(ds, target, contribution)
    rep.estimator = "mr"
    return rep


def ipw_estimate(ds: IncompleteDataset, odds: OddsModel, target: int = 0) -> EstimateReport:
    """Inverse-probability-weighted estimate: rows observing the target carry
    x_t * (1 + odds); rows missing it contribute nothing directly."""

    def contribution(i, R: ResponsePattern):
        row = ds.values[i]
        if R.is_observed(target):
            r = R.mask(target)
            x_t = float(row[target])
            return x_t + odds.evaluate(row, r) * x_t
        return 0.0

    rep = _estimate(ds, target, contribution)
    rep.estimator = "ipw"
    return rep


def ra_estimate(ds: IncompleteDataset, outcome: OutcomeModel, target: int = 0) -> EstimateReport:
    """Regression-adjustment estimate: observed targets enter directly,
    missing ones through the outcome prediction."""

    def contribution(i, R: ResponsePattern):
        row = ds.values[i]
        if R.is_observed(target):
            return float(row[target])
        return outcome.evaluate(row, R)

    rep = _estimate(ds, target, contribution)
    rep.estimator = "ra"
    return rep
