"""Out-of-sample imputation models.

Every model, once fitted, can impute new observations without retraining: it
is a model q(x_missing | x_observed, pattern). The capabilities are

  sample_marginal  - draw from the univariate conditional q(x_j | x_r, r)
  log_density_marginal - evaluate log q(x_j | x_r, r) (Gaussian families only)
  sample_joint     - draw a joint imputation of several variables at once
  parameter_count  - number of free parameters, used by the BIC

Two distinct failure modes exist and criteria treat them differently:
`Unsupported` means the model lacks a capability altogether (e.g. hot deck has
no density); `ConditionalUnavailable` means this particular conditional could
not be fitted (e.g. no donor rows for a pattern) and the entry is skipped with
a count.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import IncompleteDataset, MonotoneDataset
from .patterns import ResponsePattern

logger = logging.getLogger(__name__)

__all__ = [
    "Unsupported",
    "ConditionalUnavailable",
    "ImputationModel",
    "MeanImputer",
    "GaussianJointModel",
    "DeterministicConditionalMean",
    "HotDeckModel",
    "PatternRegressionModel",
    "MonotoneSequentialModel",
    "LinearGaussianConditional",
    "fit_mean",
    "fit_gaussian_em",
    "fit_hot_deck",
    "fit_moopm_empirical",
    "fit_ccmv",
    "fit_monotone",
    "make_model",
    "MODEL_NAMES",
]

LOG_2PI = math.log(2.0 * math.pi)


class Unsupported(RuntimeError):
    """The model does not implement this capability at all."""


class ConditionalUnavailable(RuntimeError):
    """This specific conditional (pattern, variable) could not be fitted."""

    def __init__(self, r: ResponsePattern, j: int, reason: str = "no fitted conditional"):
        super().__init__(f"q(x_{j + 1} | x_r, r={r}) unavailable: {reason}")
        self.r = r
        self.j = j


class ImputationModel:
    """Base class; subclasses must implement sample_marginal."""

    label: str = "model"

    def sample_marginal(self, j, row, r: ResponsePattern, rng, size=None):
        """Draw from q(x_j | x_r = row[r], R = r).

        Returns a scalar when size is None, else an array of shape (size,).
        Only entries of `row` flagged by `r` may be read; `r` may be the
        all-zero pattern, in which case the draw is unconditional.
        """
        raise NotImplementedError

    def log_density_marginal(self, x_j, j, row, r: ResponsePattern) -> float:
        raise Unsupported(f"{self.label}: no marginal density")

    def sample_joint(self, targets: ResponsePattern, row, r: ResponsePattern, rng, size=None):
        """Draw from q(x_targets | x_r, r).

        Default is the product form: each target variable is drawn
        independently from its own marginal, in ascending variable order.
        Returns shape (d,) (or (size, d)) with NaN outside the targets.
        """
        scalar = size is None
        m = 1 if scalar else int(size)
        out = np.full((m, r.d), np.nan)
        for j in targets.observed_indices():
            out[:, j] = self.sample_marginal(j, row, r, rng, size=m)
        return out[0] if scalar else out

    def parameter_count(self) -> int:
        raise Unsupported(f"{self.label}: no parameter count")

    def to_json_dict(self) -> dict:
        raise Unsupported(f"{self.label}: not serializable")


# ---------------------------------------------------------------------------
# Mean imputation
# ---------------------------------------------------------------------------

class MeanImputer(ImputationModel):
    """Point mass at each column's observed training mean; ignores conditioning."""

    label = "mean"

    def __init__(self, column_means: np.ndarray):
        self.column_means = np.asarray(column_means, dtype=float)

    def sample_marginal(self, j, row, r, rng, size=None):
        if size is None:
            return float(self.column_means[j])
        return np.full(size, self.column_means[j])

    def parameter_count(self) -> int:
        return self.column_means.size

    def to_json_dict(self) -> dict:
        return {
            "format": "maskout-fit", "version": 1, "kind": "mean",
            "column_means": self.column_means.tolist(),
        }


def fit_mean(train: IncompleteDataset) -> MeanImputer:
    means = np.empty(train.d)
    for j in range(train.d):
        col = train.values[train.mask[:, j], j]
        if col.size == 0:
            raise ValueError(f"column {train.column_names[j]} has no observed entries")
        means[j] = col.mean()
    return MeanImputer(means)


# ---------------------------------------------------------------------------
# Joint Gaussian fitted by EM (ignorable missingness)
# ---------------------------------------------------------------------------

class GaussianJointModel(ImputationModel):
    """Joint Gaussian N(mean, cov); conditionals via the Schur complement.

    The conditional law ignores the pattern (it is the MCAR/MAR model
    f(x_missing | x_observed)), so the same conditional serves every pattern
    with the same observed set.
    """

    label = "gaussian_em"

    def __init__(self, mean: np.ndarray, cov: np.ndarray, ridge: float = 0.0):
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        self.ridge = float(ridge)
        d = self.mean.size
        if self.cov.shape != (d, d):
            raise ValueError("cov shape does not match mean")
        if not np.allclose(self.cov, self.cov.T):
            raise ValueError("cov must be symmetric")
        np.linalg.cholesky(self.cov)  # SPD check
        self._cond_cache: dict[tuple[int, int], tuple] = {}

    @property
    def d(self) -> int:
        return self.mean.size

    def _conditional(self, target_idx: tuple[int, ...], given_idx: tuple[int, ...]):
        key = (sum(1 << j for j in target_idx), sum(1 << j for j in given_idx))
        hit = self._cond_cache.get(key)
        if hit is not None:
            return hit
        t = np.array(target_idx, dtype=int)
        g = np.array(given_idx, dtype=int)
        if g.size == 0:
            base = self.mean[t]
            B = np.zeros((t.size, 0))
            cond_cov = self.cov[np.ix_(t, t)]
        else:
            S_oo = self.cov[np.ix_(g, g)]
            S_to = self.cov[np.ix_(t, g)]
            B = np.linalg.solve(S_oo, S_to.T).T
            base = self.mean[t] - B @ self.mean[g]
            cond_cov = self.cov[np.ix_(t, t)] - B @ S_to.T
        cond_cov = 0.5 * (cond_cov + cond_cov.T)
        # guard against a tiny negative from cancellation
        chol = np.linalg.cholesky(cond_cov + 1e-12 * np.eye(t.size))
        entry = (B, base, cond_cov, chol)
        self._cond_cache[key] = entry
        return entry

    def conditional_mean_var(self, j, row, r: ResponsePattern):
        B, base, cond_cov, _ = self._conditional((j,), r.observed_indices())
        g = np.array(r.observed_indices(), dtype=int)
        mean = float(base[0] + (B[0] @ row[g] if g.size else 0.0))
        return mean, float(cond_cov[0, 0])

    def sample_joint(self, targets, row, r, rng, size=None):
        scalar = size is None
        m = 1 if scalar else int(size)
        t = targets.observed_indices()
        B, base, _, chol = self._conditional(t, r.observed_indices())
        g = np.array(r.observed_indices(), dtype=int)
        mean = base + (B @ row[g] if g.size else 0.0)
        z = rng.standard_normal((m, len(t)))
        draws = mean + z @ chol.T
        out = np.full((m, r.d), np.nan)
        out[:, list(t)] = draws
        return out[0] if scalar else out

    def sample_marginal(self, j, row, r, rng, size=None):
        single = ResponsePattern.from_indices(r.d, [j])
        if size is None:
            return float(self.sample_joint(single, row, r, rng)[j])
        return self.sample_joint(single, row, r, rng, size=size)[:, j]

    def log_density_marginal(self, x_j, j, row, r) -> float:
        mean, var = self.conditional_mean_var(j, row, r)
        return -0.5 * (LOG_2PI + math.log(var) + (x_j - mean) ** 2 / var)

    def parameter_count(self) -> int:
        d = self.d
        return d + d * (d + 1) // 2

    def to_json_dict(self) -> dict:
        return {
            "format": "maskout-fit", "version": 1, "kind": "gaussian_joint",
            "mean": self.mean.tolist(), "cov": self.cov.tolist(), "ridge": self.ridge,
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "GaussianJointModel":
        if doc.get("kind") != "gaussian_joint" or doc.get("version") != 1:
            raise ValueError("not a version-1 gaussian_joint document")
        return cls(np.array(doc["mean"]), np.array(doc["cov"]), doc.get("ridge", 0.0))


class DeterministicConditionalMean(ImputationModel):
    """Point mass at the Gaussian conditional mean (the squared-loss optimum)."""

    label = "gaussian_cond_mean"

    def __init__(self, inner: GaussianJointModel):
        self.inner = inner

    def sample_marginal(self, j, row, r, rng, size=None):
        mean, _ = self.inner.conditional_mean_var(j, row, r)
        if size is None:
            return mean
        return np.full(size, mean)

    def parameter_count(self) -> int:
        return self.inner.parameter_count()


def _observed_loglik(values, mask, mean, cov, pattern_rows):
    total = 0.0
    for bits, rows in pattern_rows.items():
        if bits == 0:
            continue
        idx = [j for j in range(mean.size) if (bits >> j) & 1]
        sub = cov[np.ix_(idx, idx)]
        chol = np.linalg.cholesky(sub)
        diff = values[np.ix_(rows, idx)] - mean[idx]
        sol = np.linalg.solve(chol, diff.T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        k = len(idx)
        total += -0.5 * (k * LOG_2PI + logdet) * len(rows) - 0.5 * (sol ** 2).sum()
    return total


def fit_gaussian_em(
    train: IncompleteDataset,
    ridge: float = 0.0,
    max_iter: int = 200,
    tol: float = 1e-8,
) -> GaussianJointModel:
    """EM for a joint Gaussian under ignorable missingness.

    The observed-data log-likelihood is tracked and must be nondecreasing
    across sweeps; iteration stops when the increase drops below tol. On
    complete data this reduces to the sample mean and the MLE covariance
    (n denominator) in a single sweep.
    """
    n, d = train.n, train.d
    if n <= d:
        raise ValueError(f"need n > d rows to fit a joint Gaussian, got n={n}, d={d}")
    values, mask = train.values, train.mask
    contributing = np.flatnonzero(mask.any(axis=1))
    n_skipped = n - contributing.size
    if n_skipped:
        logger.info("gaussian_em: skipping %d all-missing rows", n_skipped)

    pattern_rows: dict[int, np.ndarray] = {}
    weights = 1 << np.arange(d, dtype=np.int64)
    bits_of_row = (mask.astype(np.int64) * weights).sum(axis=1)
    for i in contributing:
        pattern_rows.setdefault(int(bits_of_row[i]), []).append(i)
    pattern_rows = {b: np.array(rows) for b, rows in pattern_rows.items()}

    mean = np.array([values[mask[:, j], j].mean() if mask[:, j].any() else 0.0
                     for j in range(d)])
    cov = np.zeros((d, d))
    for j in range(d):
        col = values[mask[:, j], j]
        cov[j, j] = col.var() if col.size > 1 and col.var() > 0 else 1.0
    cov += ridge * np.eye(d)

    n_eff = contributing.size
    loglik_trace = []
    for _ in range(max_iter):
        sum_x = np.zeros(d)
        sum_xx = np.zeros((d, d))
        for bits, rows in pattern_rows.items():
            obs = [j for j in range(d) if (bits >> j) & 1]
            mis = [j for j in range(d) if not (bits >> j) & 1]
            x_o = values[np.ix_(rows, obs)]
            filled = np.empty((len(rows), d))
            filled[:, obs] = x_o
            if mis:
                S_oo = cov[np.ix_(obs, obs)]
                S_mo = cov[np.ix_(mis, obs)]
                B = np.linalg.solve(S_oo, S_mo.T).T
                cond_mean = mean[mis] + (x_o - mean[obs]) @ B.T
                cond_cov = cov[np.ix_(mis, mis)] - B @ S_mo.T
                filled[:, mis] = cond_mean
                sum_xx[np.ix_(mis, mis)] += len(rows) * cond_cov
            sum_x += filled.sum(axis=0)
            sum_xx += filled.T @ filled
        new_mean = sum_x / n_eff
        new_cov = sum_xx / n_eff - np.outer(new_mean, new_mean)
        new_cov = 0.5 * (new_cov + new_cov.T) + ridge * np.eye(d)
        try:
            np.linalg.cholesky(new_cov)
        except np.linalg.LinAlgError:
            raise ValueError(
                "EM covariance update lost positive definiteness "
                f"(min eigenvalue {np.linalg.eigvalsh(new_cov).min():.3e}); "
                "increase the ridge"
            )
        mean, cov = new_mean, new_cov
        ll = _observed_loglik(values, mask, mean, cov, pattern_rows)
        if loglik_trace and ll - loglik_trace[-1] < tol:
            loglik_trace.append(ll)
            break
        loglik_trace.append(ll)

    model = GaussianJointModel(mean, cov, ridge=ridge)
    model.loglik_trace = loglik_trace
    return model


# ---------------------------------------------------------------------------
# Hot deck
# ---------------------------------------------------------------------------

class HotDeckModel(ImputationModel):
    """Donor-based imputation from the training rows.

    nn variant: donors with x_j observed are ranked by the mean squared
    difference over the coordinates they share with the query's observed set
    (at least one shared coordinate required), and a uniform draw is taken
    among the k nearest. random variant: uniform draw from all observed x_j
    values, ignoring the query.
    """

    label = "hot_deck"

    def __init__(self, values: np.ndarray, mask: np.ndarray, variant: str = "nn",
                 k_neighbors: int = 10):
        if variant not in ("nn", "random"):
            raise ValueError(f"unknown hot deck variant {variant!r}")
        if k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")
        self.values = values
        self.mask = mask
        self.variant = variant
        self.k_neighbors = k_neighbors
        self.label = f"hot_deck_{variant}"
        self.n_fallbacks = 0

    def _random_draw(self, j, rng, m):
        pool = self.values[self.mask[:, j], j]
        if pool.size == 0:
            raise ConditionalUnavailable(
                ResponsePattern.empty(self.values.shape[1]), j, "no donor observes the variable")
        return pool[rng.integers(0, pool.size, size=m)]

    def sample_marginal(self, j, row, r, rng, size=None):
        m = 1 if size is None else int(size)
        if self.variant == "random":
            out = self._random_draw(j, rng, m)
            return float(out[0]) if size is None else out

        donor_rows = np.flatnonzero(self.mask[:, j])
        if donor_rows.size == 0:
            raise ConditionalUnavailable(r, j, "no donor observes the variable")
        obs = np.array(r.observed_indices(), dtype=int)
        shared = self.mask[np.ix_(donor_rows, obs)] if obs.size else np.zeros((donor_rows.size, 0), bool)
        counts = shared.sum(axis=1)
        usable = counts > 0
        if not usable.any():
            if self.n_fallbacks == 0:
                logger.warning(
                    "hot_deck_nn: no donor shares a coordinate with the query; "
                    "falling back to the random variant")
            self.n_fallbacks += 1
            out = self._random_draw(j, rng, m)
            return float(out[0]) if size is None else out
        cand = donor_rows[usable]
        diff = self.values[np.ix_(cand, obs)] - row[obs]
        diff = np.where(self.mask[np.ix_(cand, obs)], diff, 0.0)
        dist = (diff ** 2).sum(axis=1) / counts[usable]
        order = np.argsort(dist, kind="stable")[: self.k_neighbors]
        pool = self.values[cand[order], j]
        out = pool[rng.integers(0, pool.size, size=m)]
        return float(out[0]) if size is None else out

    def parameter_count(self) -> int:
        return 0


def fit_hot_deck(train: IncompleteDataset, variant: str = "nn",
                 k_neighbors: int = 10) -> HotDeckModel:
    if train.n == 0:
        raise ValueError("hot deck needs a nonempty training set")
    return HotDeckModel(train.values.copy(), train.mask.copy(), variant=variant,
                        k_neighbors=k_neighbors)


# ---------------------------------------------------------------------------
# Pattern-keyed linear-Gaussian conditionals (MOOPM, CCMV)
# ---------------------------------------------------------------------------

@dataclass
class LinearGaussianConditional:
    """x_j | x_features ~ N(intercept + coef . phi(x_features), sigma2).

    phi expands each feature to powers 1..degree (no cross terms)."""

    feature_idx: tuple[int, ...]
    intercept: float
    coef: np.ndarray
    sigma2: float
    n_fit: int
    degree: int = 1

    def _phi(self, row) -> np.ndarray:
        base = np.asarray([row[k] for k in self.feature_idx])
        if self.degree == 1:
            return base
        if self.degree < 1:
            return np.empty(0)
        return np.concatenate([base ** p for p in range(1, self.degree + 1)])

    def mean(self, row) -> float:
        if self.coef.size == 0:
            return self.intercept
        return float(self.intercept + self.coef @ self._phi(row))

    def sample(self, row, rng, m: int) -> np.ndarray:
        return self.mean(row) + math.sqrt(max(self.sigma2, 0.0)) * rng.standard_normal(m)

    def logpdf(self, x, row) -> float:
        if self.sigma2 <= 0.0:
            return float("-inf")
        return -0.5 * (LOG_2PI + math.log(self.sigma2) + (x - self.mean(row)) ** 2 / self.sigma2)

    def n_params(self) -> int:
        return len(self.coef) + 2  # intercept + coefficients + variance


def design_matrix(values: np.ndarray, rows: np.ndarray, feature_idx, degree: int = 1):
    cols = [np.ones(len(rows))]
    for k in feature_idx:
        for p in range(1, degree + 1):
            cols.append(values[rows, k] ** p)
    return np.column_stack(cols)


def fit_linear_gaussian(
    values: np.ndarray,
    rows: np.ndarray,
    j: int,
    feature_idx,
    degree: int = 1,
    variance_denominator: str = "unbiased",
    context: str = "",
) -> LinearGaussianConditional:
    """OLS of x_j on x_features over the given rows.

    variance_denominator: "unbiased" uses n - p - 1 (regression sampler
    convention); "mle" uses n (masked-likelihood closed form convention).
    """
    X = design_matrix(values, rows, feature_idx, degree)
    y = values[rows, j]
    n, p1 = X.shape
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < p1:
        logger.warning("%s: rank-deficient design (rank %d < %d), ridge fallback",
                       context or "fit_linear_gaussian", rank, p1)
        beta = np.linalg.solve(X.T @ X + 1e-8 * np.eye(p1), X.T @ y)
    resid = y - X @ beta
    rss = float(resid @ resid)
    if variance_denominator == "mle":
        sigma2 = rss / n
    else:
        dof = n - p1
        if dof <= 0:
            raise ValueError(f"{context}: {n} rows cannot identify {p1} coefficients")
        sigma2 = rss / dof
    return LinearGaussianConditional(
        feature_idx=tuple(feature_idx), intercept=float(beta[0]),
        coef=np.asarray(beta[1:]), sigma2=sigma2, n_fit=n, degree=degree,
    )


class PatternRegressionModel(ImputationModel):
    """Imputation model backed by a table of per-(pattern, variable)
    linear-Gaussian conditionals; marginals for distinct variables are
    independent (product form)."""

    label = "pattern_regression"

    def __init__(self, d: int, conditionals: dict[tuple[int, int], LinearGaussianConditional],
                 label: str = "pattern_regression"):
        self.d = d
        self.conditionals = conditionals
        self.label = label

    def _lookup(self, j, r: ResponsePattern) -> LinearGaussianConditional:
        cond = self.conditionals.get((r.bits, j))
        if cond is None:
            raise ConditionalUnavailable(r, j)
        return cond

    def sample_marginal(self, j, row, r, rng, size=None):
        cond = self._lookup(j, r)
        out = cond.sample(row, rng, 1 if size is None else int(size))
        return float(out[0]) if size is None else out

    def log_density_marginal(self, x_j, j, row, r) -> float:
        return self._lookup(j, r).logpdf(x_j, row)

    def parameter_count(self) -> int:
        return sum(c.n_params() for c in self.conditionals.values())

    def to_json_dict(self) -> dict:
        keys = sorted(self.conditionals)
        return {
            "format": "maskout-fit", "version": 1, "kind": "pattern_regression",
            "label": self.label, "d": self.d,
            "conditionals": [
                {
                    "pattern_bits": bits, "variable": j,
                    "feature_idx": list(self.conditionals[(bits, j)].feature_idx),
                    "intercept": self.conditionals[(bits, j)].intercept,
                    "coef": self.conditionals[(bits, j)].coef.tolist(),
                    "sigma2": self.conditionals[(bits, j)].sigma2,
                    "n_fit": self.conditionals[(bits, j)].n_fit,
                    "degree": self.conditionals[(bits, j)].degree,
                }
                for bits, j in keys
            ],
        }

    @classmethod
    def from_json_dict(cls, doc: dict) -> "PatternRegressionModel":
        if doc.get("kind") != "pattern_regression" or doc.get("version") != 1:
            raise ValueError("not a version-1 pattern_regression document")
        conds = {}
        for c in doc["conditionals"]:
            conds[(c["pattern_bits"], c["variable"])] = LinearGaussianConditional(
                feature_idx=tuple(c["feature_idx"]), intercept=c["intercept"],
                coef=np.array(c["coef"]), sigma2=c["sigma2"], n_fit=c["n_fit"],
                degree=c.get("degree", 1),
            )
        return cls(d=doc["d"], conditionals=conds, label=doc.get("label", "pattern_regression"))


def _pattern_groups(ds: IncompleteDataset) -> dict[int, np.ndarray]:
    weights = 1 << np.arange(ds.d, dtype=np.int64)
    bits = (ds.mask.astype(np.int64) * weights).sum(axis=1)
    groups: dict[int, list[int]] = {}
    for i, b in enumerate(bits):
        groups.setdefault(int(b), []).append(i)
    return {b: np.array(rows) for b, rows in groups.items()}


def fit_moopm_empirical(train: IncompleteDataset, min_rows: int = 20) -> PatternRegressionModel:
    """Mask-one-out product model: for each (r, j) the conditional
    q(x_j | x_r, r) is a Gaussian regression fitted only on training rows
    whose pattern is exactly r with variable j added.

    Conditionals whose donor pattern has fewer than min_rows rows are left
    unavailable; criteria skip those entries with an explicit count.
    """
    groups = _pattern_groups(train)
    conds: dict[tuple[int, int], LinearGaussianConditional] = {}
    n_unavailable = 0
    for bits, rows in sorted(groups.items()):
        if bits == 0:
            continue
        s = ResponsePattern(d=train.d, bits=bits)
        for j in s.observed_indices():
            r = s.mask(j)
            features = r.observed_indices()
            if len(rows) < max(min_rows, len(features) + 2):
                n_unavailable += 1
                continue
            conds[(r.bits, j)] = fit_linear_gaussian(
                train.values, rows, j, features,
                variance_denominator="unbiased",
                context=f"moopm key (r={r}, j={j})",
            )
    model = PatternRegressionModel(train.d, conds, label="moopm")
    model.n_unavailable = n_unavailable
    return model


class CcmvModel(PatternRegressionModel):
    """Complete-case missing value: every conditional q(x_j | x_r, r) is a
    Gaussian regression fitted on the complete cases, whatever r is.
    Conditionals for patterns unseen at fit time are derived lazily from the
    stored complete cases."""

    def __init__(self, d, conditionals, complete_values: np.ndarray):
        super().__init__(d, conditionals, label="ccmv")
        self._complete_values = complete_values

    def _lookup(self, j, r: ResponsePattern) -> LinearGaussianConditional:
        cond = self.conditionals.get((r.bits, j))
        if cond is None:
            cond = fit_linear_gaussian(
                self._complete_values, np.arange(len(self._complete_values)), j,
                r.observed_indices(), context=f"ccmv key (r={r}, j={j})",
            )
            self.conditionals[(r.bits, j)] = cond
        return cond


def fit_ccmv(train: IncompleteDataset) -> CcmvModel:
    complete = np.flatnonzero(train.mask.all(axis=1))
    if complete.size < train.d + 2:
        raise ValueError(
            f"CCMV needs at least d+2={train.d + 2} complete rows, got {complete.size}")
    complete_values = train.values[complete].copy()
    conds: dict[tuple[int, int], LinearGaussianConditional] = {}
    rows = np.arange(complete.size)
    for bits in sorted(_pattern_groups(train)):
        if bits == 0:
            continue
        s = ResponsePattern(d=train.d, bits=bits)
        for j in s.observed_indices():
            r = s.mask(j)
            if (r.bits, j) in conds:
                continue
            conds[(r.bits, j)] = fit_linear_gaussian(
                complete_values, rows, j, r.observed_indices(),
                context=f"ccmv key (r={r}, j={j})",
            )
    return CcmvModel(train.d, conds, complete_values)


# ---------------------------------------------------------------------------
# Monotone sequential models (NCMV / ACMV)
# ---------------------------------------------------------------------------

class MonotoneSequentialModel(ImputationModel):
    """Sequential imputer for monotone data: stage j models x_{j+1} given the
    first j variables. Donor rule ncmv fits stage j on rows with T = j+1;
    acmv on rows with T >= j+1."""

    def __init__(self, d: int, stages: list[LinearGaussianConditional], rule: str):
        self.d = d
        self.stages = stages
        self.rule = rule
        self.label = rule

    def _stage_for(self, j, r: ResponsePattern) -> LinearGaussianConditional:
        if not r.is_prefix():
            raise ValueError(f"monotone model queried with non-prefix pattern {r}")
        if r.weight() != j:
            raise ValueError(
                f"monotone model imputes only the next variable: pattern {r} "
                f"has {r.weight()} observed, asked for variable {j}")
        return self.stages[j]

    def sample_marginal(self, j, row, r, rng, size=None):
        cond = self._stage_for(j, r)
        out = cond.sample(row, rng, 1 if size is None else int(size))
        return float(out[0]) if size is None else out

    def log_density_marginal(self, x_j, j, row, r) -> float:
        return self._stage_for(j, r).logpdf(x_j, row)

    def sample_joint(self, targets, row, r, rng, size=None):
        t = r.weight()
        tgt = targets.observed_indices()
        if not r.is_prefix() or list(tgt) != list(range(t, t + len(tgt))):
            raise Unsupported(f"{self.label}: joint sampling only for contiguous suffixes")
        scalar = size is None
        m = 1 if scalar else int(size)
        out = np.full((m, self.d), np.nan)
        work = np.tile(np.asarray(row, dtype=float), (m, 1))
        for j in tgt:
            cond = self.stages[j]
            means = np.array([cond.mean(work[i]) for i in range(m)])
            draws = means + math.sqrt(max(cond.sigma2, 0.0)) * rng.standard_normal(m)
            work[:, j] = draws
            out[:, j] = draws
        return out[0] if scalar else out

    def parameter_count(self) -> int:
        return sum(s.n_params() for s in self.stages)

    def to_json_dict(self) -> dict:
        return {
            "format": "maskout-fit", "version": 1, "kind": "monotone_sequential",
            "rule": self.rule, "d": self.d,
            "stages": [
                {"feature_idx": list(s.feature_idx), "intercept": s.intercept,
                 "coef": s.coef.tolist(), "sigma2": s.sigma2, "n_fit": s.n_fit}
                for s in self.stages
            ],
        }


def fit_monotone(train: MonotoneDataset, rule: str = "acmv") -> MonotoneSequentialModel:
    if rule not in ("ncmv", "acmv"):
        raise ValueError(f"unknown donor rule {rule!r}")
    d = train.d
    values, t_of_row = train.data.values, train.t_of_row
    stages = []
    for j in range(d):
        donors = np.flatnonzero(t_of_row == j + 1) if rule == "ncmv" \
            else np.flatnonzero(t_of_row >= j + 1)
        if donors.size < j + 2:
            raise ValueError(f"{rule}: stage {j} has only {donors.size} donor rows")
        stages.append(fit_linear_gaussian(
            values, donors, j, tuple(range(j)), context=f"{rule} stage {j}"))
    return MonotoneSequentialModel(d=d, stages=stages, rule=rule)


# ---------------------------------------------------------------------------
# Registry for the CLI and harness
# ---------------------------------------------------------------------------

def _fit_sep_gauss(train, degree=1, min_rows=None):
    from .likelihood import fit_separable_gaussian_closed_form
    kwargs = {"degree": int(degree)}
    if min_rows is not None:
        kwargs["min_rows"] = int(min_rows)
    params, _ = fit_separable_gaussian_closed_form(train, **kwargs)
    return params.as_model()


_REGISTRY = {
    "mean": lambda train, **kw: fit_mean(train),
    "gaussian_em": lambda train, **kw: fit_gaussian_em(
        train, ridge=float(kw.get("ridge", 0.0)),
        max_iter=int(kw.get("max_iter", 200)), tol=float(kw.get("tol", 1e-8))),
    "hot_deck_nn": lambda train, **kw: fit_hot_deck(
        train, variant="nn", k_neighbors=int(kw.get("k", 10))),
    "hot_deck_random": lambda train, **kw: fit_hot_deck(train, variant="random"),
    "moopm": lambda train, **kw: fit_moopm_empirical(
        train, min_rows=int(kw.get("min_rows", 20))),
    "ccmv": lambda train, **kw: fit_ccmv(train),
    "sep_gauss": lambda train, **kw: _fit_sep_gauss(train, **kw),
    "ncmv": None,  # filled below; needs the monotone view
    "acmv": None,
}


def _fit_monotone_named(rule):
    def fit(train, **kw):
        from .dataset import as_monotone
        return fit_monotone(as_monotone(train), rule=rule)
    return fit


_REGISTRY["ncmv"] = _fit_monotone_named("ncmv")
_REGISTRY["acmv"] = _fit_monotone_named("acmv")

MODEL_NAMES = tuple(sorted(_REGISTRY))


def make_model(spec: str):
    """Parse "name" or "name:key=val,key=val" into (label, fit_fn).

    The label keeps the full spec string so distinct configurations stay
    distinguishable in reports.
    """
    name, _, rest = spec.partition(":")
    name = name.strip()
    if name not in _REGISTRY:
        raise ValueError(f"unknown model {name!r}; known: {', '.join(MODEL_NAMES)}")
    kwargs = {}
    if rest:
        for item in rest.split(","):
            k, _, v = item.partition("=")
            if not _ or not k.strip():
                raise ValueError(f"bad model option {item!r} in {spec!r}")
            kwargs[k.strip()] = v.strip()
    fitter = _REGISTRY[name]

    def fit(train: IncompleteDataset) -> ImputationModel:
        model = fitter(train, **kwargs)
        model.label = spec
        return model

    return spec, fit
