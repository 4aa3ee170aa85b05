"""Masked log-likelihood: evaluation, learning, and model selection.

The masked log-likelihood of an imputation model sums, over every observed
entry, the log conditional density of that entry under the pattern with its
bit cleared. It is exact for Gaussian-family models and approximable by a
univariate KDE over imputed draws for sample-only models. Maximizing it over
a parametric family trains an imputation model; penalizing by half the
parameter count times log n gives the BIC selection rule.

Pattern-separable Gaussian families decompose the likelihood into independent
per-(pattern, variable) regressions with closed-form maximizers; the generic
gradient-ascent fitter cross-checks them and handles constrained extensions
(shared variances, the bivariate masked-all-out model with a full covariance).
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .dataset import IncompleteDataset, MonotoneDataset
from .models import (
    ConditionalUnavailable,
    ImputationModel,
    LinearGaussianConditional,
    PatternRegressionModel,
    Unsupported,
    design_matrix,
)
from .patterns import ResponsePattern
from .rng import substream

logger = logging.getLogger(__name__)

__all__ = [
    "MooLogLik",
    "moo_loglik",
    "moo_loglik_by_pattern",
    "moo_loglik_mc",
    "moobl_loglik",
    "bic",
    "SeparableGaussianParams",
    "SeparableGaussianModel",
    "fit_separable_gaussian_closed_form",
    "fit_shared_variance",
    "SeparableGaussianFamily",
    "GradientAscentConfig",
    "FitDiagnostics",
    "fit_moo_mle_gradient",
    "BivariateMaoParams",
    "mao_loglik_bivariate_gaussian",
    "fit_mao_bivariate_gaussian",
    "sandwich_covariance",
]

LOG_2PI = math.log(2.0 * math.pi)


# ---------------------------------------------------------------------------
# Masked log-likelihood of a fitted model
# ---------------------------------------------------------------------------

@dataclass
class MooLogLik:
    value: float
    n_terms: int
    n_skipped: int
    n_rows_contributing: int
    zero_density_entries: list = field(default_factory=list)


def _hidden_row(values_row, r: ResponsePattern):
    row = values_row.copy()
    for k in range(r.d):
        if not (r.bits >> k) & 1:
            row[k] = np.nan
    return row


def moo_loglik(model: ImputationModel, ds: IncompleteDataset) -> MooLogLik:
    """Exact masked log-likelihood, summed row by row.

    Entries whose conditional is unavailable are skipped with a count. A term
    with zero density drives the value to -inf and the offending entry is
    recorded. Models without a density raise Unsupported; use moo_loglik_mc
    for those.
    """
    total = 0.0
    n_terms = n_skipped = n_rows = 0
    zero_entries = []
    patterns = ds.row_patterns()
    for i in range(ds.n):
        R = patterns[i]
        row_terms = 0
        for j in R.observed_indices():
            r = R.mask(j)
            try:
                lp = model.log_density_marginal(
                    float(ds.values[i, j]), j, _hidden_row(ds.values[i], r), r)
            except ConditionalUnavailable:
                n_skipped += 1
                continue
            except Unsupported:
                raise Unsupported(
                    f"{model.label} has no evaluable marginal density; "
                    "use moo_loglik_mc for sample-only models")
            if lp == float("-inf"):
                zero_entries.append((i, j))
                logger.warning("zero density at row %d variable %d; log-likelihood is -inf", i, j)
            total += lp
            n_terms += 1
            row_terms += 1
        if row_terms:
            n_rows += 1
    if zero_entries:
        total = float("-inf")
    return MooLogLik(value=float(total), n_terms=n_terms, n_skipped=n_skipped,
                     n_rows_contributing=n_rows, zero_density_entries=zero_entries)


def moo_loglik_by_pattern(model: ImputationModel, ds: IncompleteDataset) -> MooLogLik:
    """Same sum grouped by conditioning pattern first (one term group per
    (pattern, variable) key). Numerically agrees with moo_loglik to roundoff;
    useful when per-key structure matters."""
    total = 0.0
    n_terms = n_skipped = 0
    zero_entries = []
    groups: dict[int, list[int]] = {}
    patterns = ds.row_patterns()
    for i, R in enumerate(patterns):
        groups.setdefault(R.bits, []).append(i)
    rows_contributing = set()
    for bits in sorted(groups):
        if bits == 0:
            continue
        s = ResponsePattern(d=ds.d, bits=bits)
        for j in s.observed_indices():
            r = s.mask(j)
            for i in groups[bits]:
                try:
                    lp = model.log_density_marginal(
                        float(ds.values[i, j]), j, _hidden_row(ds.values[i], r), r)
                except ConditionalUnavailable:
                    n_skipped += 1
                    continue
                if lp == float("-inf"):
                    zero_entries.append((i, j))
                total += lp
                n_terms += 1
                rows_contributing.add(i)
    if zero_entries:
        total = float("-inf")
    return MooLogLik(value=float(total), n_terms=n_terms, n_skipped=n_skipped,
                     n_rows_contributing=len(rows_contributing),
                     zero_density_entries=zero_entries)


def moo_loglik_mc(
    model: ImputationModel,
    ds: IncompleteDataset,
    M: int = 200,
    bandwidth="silverman",
    seed: int = 0,
) -> MooLogLik:
    """Monte Carlo masked log-likelihood for sample-only models.

    Each term is a Gaussian-kernel density over M imputed draws evaluated at
    the held-back value. The default bandwidth is Silverman's rule
    1.06 * sd * M^(-1/5) on the draws, floored at 1e-6 so point-mass draws
    stay evaluable (yielding huge negative terms rather than NaN).
    """
    if M < 10:
        raise ValueError("need M >= 10 draws for a usable density estimate")
    if bandwidth != "silverman":
        h_fixed = float(bandwidth)
        if h_fixed <= 0.0:
            raise ValueError("fixed bandwidth must be positive")
    else:
        h_fixed = None
    total = 0.0
    n_terms = n_skipped = n_rows = 0
    zero_entries = []
    patterns = ds.row_patterns()
    for i in range(ds.n):
        R = patterns[i]
        row_terms = 0
        for j in R.observed_indices():
            r = R.mask(j)
            rng = substream(seed, i, j)
            try:
                draws = np.asarray(model.sample_marginal(
                    j, _hidden_row(ds.values[i], r), r, rng, size=M))
            except ConditionalUnavailable:
                n_skipped += 1
                continue
            if h_fixed is None:
                h = max(1.06 * float(draws.std(ddof=1)) * M ** (-0.2), 1e-6)
            else:
                h = h_fixed
            x = float(ds.values[i, j])
            lp = float(logsumexp(-0.5 * ((x - draws) / h) ** 2)
                       - math.log(M * h) - 0.5 * LOG_2PI)
            if lp == float("-inf"):
                zero_entries.append((i, j))
            total += lp
            n_terms += 1
            row_terms += 1
        if row_terms:
            n_rows += 1
    if zero_entries:
        total = float("-inf")
    return MooLogLik(value=float(total), n_terms=n_terms, n_skipped=n_skipped,
                     n_rows_contributing=n_rows, zero_density_entries=zero_entries)


def moobl_loglik(model: ImputationModel, mds: MonotoneDataset) -> MooLogLik:
    """Monotone blocked log-likelihood: for each row with T observed variables
    the terms are log q(x_j | x_{<j}, t = j-1) for j = 1..T."""
    ds = mds.data
    total = 0.0
    n_terms = n_skipped = n_rows = 0
    zero_entries = []
    for i in range(ds.n):
        t = int(mds.t_of_row[i])
        row_terms = 0
        for j in range(t):
            r = ResponsePattern(d=ds.d, bits=(1 << j) - 1)
            try:
                lp = model.log_density_marginal(
                    float(ds.values[i, j]), j, _hidden_row(ds.values[i], r), r)
            except ConditionalUnavailable:
                n_skipped += 1
                continue
            if lp == float("-inf"):
                zero_entries.append((i, j))
            total += lp
            n_terms += 1
            row_terms += 1
        if row_terms:
            n_rows += 1
    if zero_entries:
        total = float("-inf")
    return MooLogLik(value=float(total), n_terms=n_terms, n_skipped=n_skipped,
                     n_rows_contributing=n_rows, zero_density_entries=zero_entries)


def bic(model: ImputationModel, ds: IncompleteDataset) -> float:
    """Penalized masked log-likelihood: value - 0.5 * n_params * log(n), with
    n the number of rows contributing at least one likelihood term (all-missing
    rows change neither the terms nor the penalty)."""
    ll = moo_loglik(model, ds)
    n = max(ll.n_rows_contributing, 1)
    return ll.value - 0.5 * model.parameter_count() * math.log(n)


# ---------------------------------------------------------------------------
# Separable Gaussian parameters, closed-form MLE, shared variances
# ---------------------------------------------------------------------------

class SeparableGaussianModel(PatternRegressionModel):
    """Pattern-regression model whose parameter count respects variance sharing."""

    def __init__(self, d, conditionals, n_variance_params: int, label="sep_gauss"):
        super().__init__(d, conditionals, label=label)
        self._n_variance_params = n_variance_params

    def parameter_count(self) -> int:
        n_regression = sum(1 + len(c.coef) for c in self.conditionals.values())
        return n_regression + self._n_variance_params


@dataclass
class SeparableGaussianParams:
    """Per-(pattern, variable) linear-Gaussian conditionals with MLE variances
    (pattern-count denominator) and an optional variance-sharing map.

    Keys are (pattern_bits, variable). sharing is a tuple of key groups whose
    variance parameter is pooled; keys not listed are their own class.
    """

    d: int
    conditionals: dict[tuple[int, int], LinearGaussianConditional]
    sharing: tuple[tuple[tuple[int, int], ...], ...] = ()

    def keys(self):
        return sorted(self.conditionals)

    def n_variance_params(self) -> int:
        shared_keys = {k for group in self.sharing for k in group}
        return len(self.sharing) + sum(1 for k in self.conditionals if k not in shared_keys)

    def parameter_count(self) -> int:
        n_regression = sum(1 + len(c.coef) for c in self.conditionals.values())
        return n_regression + self.n_variance_params()

    def as_model(self, label: str = "sep_gauss") -> SeparableGaussianModel:
        return SeparableGaussianModel(self.d, dict(self.conditionals),
                                      self.n_variance_params(), label=label)

    def to_json_dict(self) -> dict:
        return {
            "format": "maskout-fit", "version": 1, "kind": "separable_gaussian",
            "d": self.d,
            "conditionals": [
                {"pattern_bits": bits, "variable": j,
                 "feature_idx": list(self.conditionals[(bits, j)].feature_idx),
                 "intercept": self.conditionals[(bits, j)].intercept,
                 "coef": self.conditionals[(bits, j)].coef.tolist(),
                 "sigma2": self.conditionals[(bits, j)].sigma2,
                 "n_fit": self.conditionals[(bits, j)].n_fit,
                 "degree": self.conditionals[(bits, j)].degree}
                for bits, j in self.keys()
            ],
            "sharing": [[list(k) for k in group] for group in self.sharing],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "SeparableGaussianParams":
        if doc.get("kind") != "separable_gaussian" or doc.get("version") != 1:
            raise ValueError("not a version-1 separable_gaussian document")
        conds = {}
        for c in doc["conditionals"]:
            conds[(c["pattern_bits"], c["variable"])] = LinearGaussianConditional(
                feature_idx=tuple(c["feature_idx"]), intercept=c["intercept"],
                coef=np.array(c["coef"]), sigma2=c["sigma2"], n_fit=c["n_fit"],
                degree=c.get("degree", 1))
        sharing = tuple(tuple(tuple(k) for k in group) for group in doc.get("sharing", []))
        return cls(d=doc["d"], conditionals=conds, sharing=sharing)


@dataclass
class FitDiagnostics:
    iterations: int
    final_grad_norm: float
    loglik_trace: list[float]
    converged: bool
    n_rows: int = 0
    notes: str = ""
    sandwich: np.ndarray | None = None  # sandwich covariance at the fit, if computed

    def to_json_dict(self) -> dict:
        doc = {
            "iterations": self.iterations,
            "final_grad_norm": self.final_grad_norm,
            "loglik_trace": list(self.loglik_trace),
            "converged": self.converged,
            "n_rows": self.n_rows,
            "notes": self.notes,
        }
        if self.sandwich is not None:
            doc["sandwich"] = np.asarray(self.sandwich).tolist()
        return doc


def _key_table(ds: IncompleteDataset, degree: int, min_rows):
    """Enumerate fit keys (pattern_bits, variable) -> donor rows, keeping keys
    whose donor pattern has enough rows for the expanded design."""
    groups: dict[int, list[int]] = {}
    for i, R in enumerate(ds.row_patterns()):
        groups.setdefault(R.bits, []).append(i)
    table = {}
    dropped = 0
    for bits in sorted(groups):
        if bits == 0:
            continue
        s = ResponsePattern(d=ds.d, bits=bits)
        rows = np.array(groups[bits])
        for j in s.observed_indices():
            r = s.mask(j)
            p = 1 + len(r.observed_indices()) * degree
            required = p + 1 if min_rows is None else max(min_rows, p + 1)
            if rows.size < required:
                dropped += 1
                continue
            table[(r.bits, j)] = rows
    if dropped:
        logger.info("separable fit: %d keys left unavailable (too few donors)", dropped)
    return table


def fit_separable_gaussian_closed_form(
    ds: IncompleteDataset, degree: int = 1, min_rows: int | None = None,
) -> tuple[SeparableGaussianParams, FitDiagnostics]:
    """Exact maximizer of the masked log-likelihood for the pattern-separable
    Gaussian product model: per key, OLS of x_j on x_r over the rows with
    pattern r plus variable j, with the MLE variance (donor-count denominator).

    Zero residual variance is degenerate (the likelihood is unbounded) and is
    flagged in the diagnostics; such keys yield -inf densities downstream.
    """
    table = _key_table(ds, degree, min_rows)
    conds = {}
    notes = []
    for (bits, j), rows in sorted(table.items()):
        r = ResponsePattern(d=ds.d, bits=bits)
        X = design_matrix(ds.values, rows, r.observed_indices(), degree)
        y = ds.values[rows, j]
        beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
        if rank < X.shape[1]:
            logger.warning("separable key (r=%s, j=%d): rank-deficient design, ridge fallback",
                           r, j)
            beta = np.linalg.solve(X.T @ X + 1e-8 * np.eye(X.shape[1]), X.T @ y)
        resid = y - X @ beta
        sigma2 = float(resid @ resid) / rows.size
        if sigma2 <= 1e-12 * max(float(np.var(y)), 1e-12):
            notes.append(f"key (r={r}, j={j}): zero residual variance (degenerate)")
        conds[(bits, j)] = LinearGaussianConditional(
            feature_idx=r.observed_indices(), intercept=float(beta[0]),
            coef=np.asarray(beta[1:]), sigma2=sigma2, n_fit=rows.size, degree=degree)
    params = SeparableGaussianParams(d=ds.d, conditionals=conds)
    n_rows = int(np.sum(ds.mask.any(axis=1)))
    ll = _separable_loglik_from_conds(ds, conds)
    diag = FitDiagnostics(iterations=0, final_grad_norm=0.0, loglik_trace=[ll],
                          converged=True, n_rows=n_rows, notes="; ".join(notes))
    return params, diag


def _separable_loglik_from_conds(ds, conds) -> float:
    total = 0.0
    groups: dict[int, list[int]] = {}
    for i, R in enumerate(ds.row_patterns()):
        groups.setdefault(R.bits, []).append(i)
    for bits in sorted(groups):
        if bits == 0:
            continue
        s = ResponsePattern(d=ds.d, bits=bits)
        rows = np.array(groups[bits])
        for j in s.observed_indices():
            r = s.mask(j)
            cond = conds.get((r.bits, j))
            if cond is None:
                continue
            X = design_matrix(ds.values, rows, cond.feature_idx, cond.degree)
            beta = np.concatenate([[cond.intercept], cond.coef])
            resid = ds.values[rows, j] - X @ beta
            if cond.sigma2 <= 0:
                return float("-inf")
            total += -0.5 * (rows.size * (LOG_2PI + math.log(cond.sigma2))
                             + float(resid @ resid) / cond.sigma2)
    return total


def fit_shared_variance(
    ds: IncompleteDataset,
    sharing: tuple[tuple[tuple[int, int], ...], ...],
    degree: int = 1,
) -> SeparableGaussianParams:
    """Closed-form fit with variance parameters tied across the given key
    groups: regression coefficients are fitted per key as usual, then each
    class pools residual sums of squares and donor counts,
    sigma2_class = sum(RSS_key) / sum(n_key)."""
    params, _ = fit_separable_gaussian_closed_form(ds, degree=degree)
    conds = dict(params.conditionals)
    seen = set()
    for group in sharing:
        for k in group:
            if k in seen:
                raise ValueError(f"key {k} appears in more than one sharing class")
            seen.add(k)
            if k not in conds:
                raise ValueError(f"sharing class references unavailable key {k}")
        rss = sum(conds[k].sigma2 * conds[k].n_fit for k in group)
        n = sum(conds[k].n_fit for k in group)
        pooled = rss / n
        for k in group:
            c = conds[k]
            conds[k] = LinearGaussianConditional(
                feature_idx=c.feature_idx, intercept=c.intercept, coef=c.coef,
                sigma2=pooled, n_fit=c.n_fit, degree=c.degree)
    return SeparableGaussianParams(d=ds.d, conditionals=conds, sharing=tuple(sharing))


# ---------------------------------------------------------------------------
# Generic gradient ascent on the masked log-likelihood
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradientAscentConfig:
    step_size: float = 1.0
    max_iter: int = 5000
    grad_tol: float = 1e-9  # sup-norm of the per-row-normalized score
    init: np.ndarray | None = None


class SeparableGaussianFamily:
    """Masked likelihood of the pattern-separable Gaussian model as a function
    of a flat parameter vector.

    Layout: keys in sorted order; per key (intercept, coefficients..., sigma2).
    Provides the log-likelihood, the analytic score, per-row scores, and the
    analytic Hessian needed by the gradient fitter and the sandwich covariance.
    """

    def __init__(self, ds: IncompleteDataset, degree: int = 1, min_rows: int | None = None):
        self.ds = ds
        self.degree = degree
        table = _key_table(ds, degree, min_rows)
        self.keys = sorted(table)
        self._X = {}
        self._y = {}
        self._rows = {}
        self.slices = {}
        self.param_names = []
        offset = 0
        for key in self.keys:
            bits, j = key
            r = ResponsePattern(d=ds.d, bits=bits)
            rows = table[key]
            self._X[key] = design_matrix(ds.values, rows, r.observed_indices(), degree)
            self._y[key] = ds.values[rows, j]
            self._rows[key] = rows
            p1 = self._X[key].shape[1]
            self.slices[key] = slice(offset, offset + p1 + 1)
            self.param_names += [f"mu[{r}, x{j + 1}]"]
            self.param_names += [f"beta{k}[{r}, x{j + 1}]" for k in range(p1 - 1)]
            self.param_names += [f"sigma2[{r}, x{j + 1}]"]
            offset += p1 + 1
        self.n_params = offset
        self.n_rows = int(np.sum(ds.mask.any(axis=1)))

    def default_init(self) -> np.ndarray:
        """Intercept = donor mean, coefficients 0, sigma2 = donor variance:
        guaranteed finite likelihood, one regression step from the optimum."""
        theta = np.empty(self.n_params)
        for key in self.keys:
            sl = self.slices[key]
            y = self._y[key]
            theta[sl.start] = y.mean()
            theta[sl.start + 1: sl.stop - 1] = 0.0
            theta[sl.stop - 1] = max(float(y.var()), 1e-8)
        return theta

    def _unpack(self, theta, key):
        sl = self.slices[key]
        beta = theta[sl.start: sl.stop - 1]
        sigma2 = theta[sl.stop - 1]
        return beta, sigma2

    def loglik(self, theta) -> float:
        total = 0.0
        for key in self.keys:
            beta, sigma2 = self._unpack(theta, key)
            if sigma2 <= 0.0 or not np.isfinite(sigma2):
                return float("-inf")
            resid = self._y[key] - self._X[key] @ beta
            total += -0.5 * (resid.size * (LOG_2PI + math.log(sigma2))
                             + float(resid @ resid) / sigma2)
        return total

    def score(self, theta) -> np.ndarray:
        g = np.zeros(self.n_params)
        for key in self.keys:
            sl = self.slices[key]
            beta, sigma2 = self._unpack(theta, key)
            X, y = self._X[key], self._y[key]
            resid = y - X @ beta
            g[sl.start: sl.stop - 1] = X.T @ resid / sigma2
            g[sl.stop - 1] = -resid.size / (2 * sigma2) + float(resid @ resid) / (2 * sigma2 ** 2)
        return g

    def row_scores(self, theta) -> np.ndarray:
        """(n, n_params) per-row score contributions, rows indexed as in ds."""
        out = np.zeros((self.ds.n, self.n_params))
        for key in self.keys:
            sl = self.slices[key]
            beta, sigma2 = self._unpack(theta, key)
            X, y, rows = self._X[key], self._y[key], self._rows[key]
            resid = y - X @ beta
            out[rows, sl.start: sl.stop - 1] = X * (resid / sigma2)[:, None]
            out[rows, sl.stop - 1] = -1.0 / (2 * sigma2) + resid ** 2 / (2 * sigma2 ** 2)
        return out

    def hessian(self, theta) -> np.ndarray:
        H = np.zeros((self.n_params, self.n_params))
        for key in self.keys:
            sl = self.slices[key]
            beta, sigma2 = self._unpack(theta, key)
            X, y = self._X[key], self._y[key]
            resid = y - X @ beta
            rss = float(resid @ resid)
            H[sl.start: sl.stop - 1, sl.start: sl.stop - 1] = -X.T @ X / sigma2
            cross = -X.T @ resid / sigma2 ** 2
            H[sl.start: sl.stop - 1, sl.stop - 1] = cross
            H[sl.stop - 1, sl.start: sl.stop - 1] = cross
            H[sl.stop - 1, sl.stop - 1] = resid.size / (2 * sigma2 ** 2) - rss / sigma2 ** 3
        return H

    def to_params(self, theta) -> SeparableGaussianParams:
        conds = {}
        for key in self.keys:
            bits, j = key
            r = ResponsePattern(d=self.ds.d, bits=bits)
            beta, sigma2 = self._unpack(theta, key)
            conds[key] = LinearGaussianConditional(
                feature_idx=r.observed_indices(), intercept=float(beta[0]),
                coef=np.asarray(beta[1:]).copy(), sigma2=float(sigma2),
                n_fit=self._y[key].size, degree=self.degree)
        return SeparableGaussianParams(d=self.ds.d, conditionals=conds)

    def closed_form_theta(self) -> np.ndarray:
        """The closed-form MLE packed into this family's layout."""
        theta = np.empty(self.n_params)
        for key in self.keys:
            sl = self.slices[key]
            X, y = self._X[key], self._y[key]
            beta, _, _, _ = np.linalg.lstsq(X, y, rcond=None)
            resid = y - X @ beta
            theta[sl.start: sl.stop - 1] = beta
            theta[sl.stop - 1] = float(resid @ resid) / y.size
        return theta


def fit_moo_mle_gradient(family, cfg: GradientAscentConfig = GradientAscentConfig()):
    """Gradient ascent on the per-row-normalized masked log-likelihood.

    The update is theta + xi * score/n, with backtracking halving of xi
    whenever a step would decrease the objective (a step into an invalid
    region, e.g. nonpositive variance, has -inf objective and is likewise
    rejected). The accepted trace is therefore nondecreasing. Returns the
    final parameter vector and diagnostics.
    """
    n = family.n_rows
    theta = family.default_init() if cfg.init is None else np.asarray(cfg.init, dtype=float).copy()
    ll = family.loglik(theta) / n
    if not np.isfinite(ll):
        raise ValueError("initial parameters have non-finite likelihood")
    trace = [ll]
    xi = cfg.step_size
    grad_norm = float("inf")
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g = family.score(theta) / n
        grad_norm = float(np.max(np.abs(g)))
        if grad_norm < cfg.grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(80):
            cand = theta + xi * g
            cand_ll = family.loglik(cand) / n
            if cand_ll >= ll:
                accepted = True
                break
            xi *= 0.5
        if not accepted:
            break
        theta, ll = cand, cand_ll
        trace.append(ll)
        xi = min(xi * 2.0, cfg.step_size * 64.0)
    if not converged:
        logger.warning("gradient ascent stopped after %d iterations with grad sup-norm %.3e",
                       it, grad_norm)
    diag = FitDiagnostics(iterations=it, final_grad_norm=grad_norm, loglik_trace=trace,
                          converged=converged, n_rows=n)
    return theta, diag


def sandwich_covariance(family, theta_hat) -> np.ndarray:
    """Sandwich covariance H^-1 (1/n sum Gamma Gamma^T) H^-1 at the fitted
    parameters, with H the per-row average Hessian. The standard error of
    coordinate k is sqrt(Sigma[k, k] / n)."""
    theta_hat = np.asarray(theta_hat, dtype=float)
    n = family.n_rows
    H = family.hessian(theta_hat) / n
    scores = family.row_scores(theta_hat)
    meat = scores.T @ scores / n
    cond = np.linalg.cond(H)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError(f"average Hessian is numerically singular (condition number {cond:.3e})")
    Hinv = np.linalg.inv(H)
    sigma = Hinv @ meat @ Hinv
    return 0.5 * (sigma + sigma.T)


# ---------------------------------------------------------------------------
# Bivariate masked-all-out Gaussian (full covariance for the empty pattern)
# ---------------------------------------------------------------------------

@dataclass
class BivariateMaoParams:
    """d=2 model: q(x1|x2, only-x2-observed) and q(x2|x1, only-x1-observed)
    are linear Gaussians; q(x1,x2 | nothing observed) is a full bivariate
    Gaussian N(mu00, sigma00), whose off-diagonal is learnable only through
    the joint masking term on complete rows."""

    mu01: float
    beta01: float
    sigma2_01: float
    mu10: float
    beta10: float
    sigma2_10: float
    mu00: np.ndarray      # (2,)
    sigma00: np.ndarray   # (2, 2) SPD

    def to_json_dict(self) -> dict:
        return {
            "format": "maskout-fit", "version": 1, "kind": "bivariate_mao_gaussian",
            "mu01": self.mu01, "beta01": self.beta01, "sigma2_01": self.sigma2_01,
            "mu10": self.mu10, "beta10": self.beta10, "sigma2_10": self.sigma2_10,
            "mu00": self.mu00.tolist(), "sigma00": self.sigma00.tolist(),
        }


def _pattern_rows_d2(ds: IncompleteDataset):
    if ds.d != 2:
        raise ValueError("this operation is defined for d = 2 only")
    bits = [R.bits for R in ds.row_patterns()]
    both = np.array([i for i, b in enumerate(bits) if b == 0b11], dtype=int)
    only1 = np.array([i for i, b in enumerate(bits) if b == 0b01], dtype=int)  # x1 observed
    only2 = np.array([i for i, b in enumerate(bits) if b == 0b10], dtype=int)  # x2 observed
    return both, only1, only2


def _gauss1_logpdf_sum(x, mean, var):
    if var <= 0:
        return float("-inf")
    return float(-0.5 * np.sum(LOG_2PI + math.log(var) + (x - mean) ** 2 / var))


def mao_loglik_bivariate_gaussian(ds: IncompleteDataset, params: BivariateMaoParams):
    """Masked-all-out log-likelihood for the bivariate Gaussian model and its
    analytic gradients with respect to mu00 and sigma00.

    Relative to the one-at-a-time masked likelihood this adds the joint term
    sum over complete rows of log N2((x1,x2); mu00, sigma00), which is what
    identifies the off-diagonal of sigma00. With no complete rows the two
    likelihoods coincide and the off-diagonal gradient is zero.

    The sigma00 gradient treats the matrix entries as unconstrained; callers
    moving along it should symmetrize and project back to SPD.
    """
    both, only1, only2 = _pattern_rows_d2(ds)
    v = ds.values
    S = np.asarray(params.sigma00, dtype=float)
    mu = np.asarray(params.mu00, dtype=float)
    np.linalg.cholesky(S)  # SPD check

    value = 0.0
    if both.size:
        value += _gauss1_logpdf_sum(v[both, 0], params.mu01 + params.beta01 * v[both, 1],
                                    params.sigma2_01)
        value += _gauss1_logpdf_sum(v[both, 1], params.mu10 + params.beta10 * v[both, 0],
                                    params.sigma2_10)
    value += _gauss1_logpdf_sum(v[only1, 0], mu[0], S[0, 0])
    value += _gauss1_logpdf_sum(v[only2, 1], mu[1], S[1, 1])
    # joint masking term on complete rows
    Sinv = np.linalg.inv(S)
    n11 = both.size
    if n11:
        diff = v[both, :2] - mu
        _, logdet = np.linalg.slogdet(S)
        value += -0.5 * (n11 * (2 * LOG_2PI + logdet)
                         + float(np.einsum("ij,jk,ik->", diff, Sinv, diff)))

    # gradients, marginal terms on the diagonal + joint term through Sinv
    grad_mu = np.zeros(2)
    grad_mu[0] += float(np.sum(v[only1, 0] - mu[0])) / S[0, 0]
    grad_mu[1] += float(np.sum(v[only2, 1] - mu[1])) / S[1, 1]
    if n11:
        diff = v[both, :2] - mu
        grad_mu += Sinv @ diff.sum(axis=0)

    grad_S = np.zeros((2, 2))
    grad_S[0, 0] += (-only1.size / (2 * S[0, 0])
                     + float(np.sum((v[only1, 0] - mu[0]) ** 2)) / (2 * S[0, 0] ** 2))
    grad_S[1, 1] += (-only2.size / (2 * S[1, 1])
                     + float(np.sum((v[only2, 1] - mu[1]) ** 2)) / (2 * S[1, 1] ** 2))
    if n11:
        diff = v[both, :2] - mu
        outer = diff.T @ diff
        grad_S += -0.5 * n11 * Sinv + 0.5 * Sinv @ outer @ Sinv

    return float(value), {"mu00": grad_mu, "sigma00": grad_S}


def moo_loglik_bivariate_gaussian(ds: IncompleteDataset, params: BivariateMaoParams) -> float:
    """Same model scored by the one-at-a-time masked likelihood (no joint term)."""
    both, only1, only2 = _pattern_rows_d2(ds)
    v = ds.values
    value = 0.0
    if both.size:
        value += _gauss1_logpdf_sum(v[both, 0], params.mu01 + params.beta01 * v[both, 1],
                                    params.sigma2_01)
        value += _gauss1_logpdf_sum(v[both, 1], params.mu10 + params.beta10 * v[both, 0],
                                    params.sigma2_10)
    value += _gauss1_logpdf_sum(v[only1, 0], params.mu00[0], params.sigma00[0, 0])
    value += _gauss1_logpdf_sum(v[only2, 1], params.mu00[1], params.sigma00[1, 1])
    return float(value)


def _project_spd(S: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    S = 0.5 * (S + S.T)
    w, V = np.linalg.eigh(S)
    w = np.maximum(w, floor)
    return V @ np.diag(w) @ V.T


def fit_mao_bivariate_gaussian(
    ds: IncompleteDataset,
    cfg: GradientAscentConfig = GradientAscentConfig(step_size=0.5, max_iter=5000, grad_tol=1e-9),
) -> tuple[BivariateMaoParams, FitDiagnostics]:
    """Maximize the masked-all-out likelihood of the bivariate Gaussian model.

    The regression parts coincide with the one-at-a-time closed forms (their
    terms are identical in both likelihoods); (mu00, sigma00) are fitted by
    gradient ascent with a symmetrized covariance gradient, backtracking, and
    an SPD projection with eigenvalue floor 1e-8 after every step.
    """
    both, only1, only2 = _pattern_rows_d2(ds)
    v = ds.values

    def regression(rows, yi, xi):
        X = np.column_stack([np.ones(rows.size), v[rows, xi]])
        beta, _, _, _ = np.linalg.lstsq(X, v[rows, yi], rcond=None)
        resid = v[rows, yi] - X @ beta
        return float(beta[0]), float(beta[1]), float(resid @ resid) / rows.size

    if both.size < 3:
        raise ValueError("need at least 3 complete rows to fit the regressions")
    mu01, beta01, s01 = regression(both, 0, 1)
    mu10, beta10, s10 = regression(both, 1, 0)

    obs1 = np.concatenate([v[both, 0], v[only1, 0]])
    obs2 = np.concatenate([v[both, 1], v[only2, 1]])
    mu00 = np.array([obs1.mean(), obs2.mean()])
    S = np.diag([max(obs1.var(), 1e-4), max(obs2.var(), 1e-4)])

    def pack(mu, S):
        return BivariateMaoParams(mu01, beta01, s01, mu10, beta10, s10, mu.copy(), S.copy())

    n = max(int(np.sum(ds.mask.any(axis=1))), 1)
    value, grads = mao_loglik_bivariate_gaussian(ds, pack(mu00, S))
    ll = value / n
    trace = [ll]
    xi = cfg.step_size
    converged = False
    grad_norm = float("inf")
    it = 0
    for it in range(1, cfg.max_iter + 1):
        g_mu = grads["mu00"] / n
        g_S = grads["sigma00"] / n
        g_S = 0.5 * (g_S + g_S.T)
        grad_norm = max(float(np.max(np.abs(g_mu))), float(np.max(np.abs(g_S))))
        if grad_norm < cfg.grad_tol:
            converged = True
            break
        accepted = False
        for _ in range(80):
            cand_mu = mu00 + xi * g_mu
            cand_S = _project_spd(S + xi * g_S)
            try:
                cand_value, cand_grads = mao_loglik_bivariate_gaussian(ds, pack(cand_mu, cand_S))
            except np.linalg.LinAlgError:
                xi *= 0.5
                continue
            cand_ll = cand_value / n
            if cand_ll >= ll:
                accepted = True
                break
            xi *= 0.5
        if not accepted:
            break
        mu00, S, ll, grads = cand_mu, cand_S, cand_ll, cand_grads
        trace.append(ll)
        xi = min(xi * 2.0, cfg.step_size * 64.0)
    diag = FitDiagnostics(iterations=it, final_grad_norm=grad_norm, loglik_trace=trace,
                          converged=converged, n_rows=n)
    return pack(mu00, S), diag


def fit_result_to_json(params, diag: FitDiagnostics) -> str:
    doc = {"fit": params.to_json_dict(), "diagnostics": diag.to_json_dict()}
    return json.dumps(doc, indent=2, sort_keys=True)
