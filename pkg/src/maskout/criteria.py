"""Masking criteria for comparing imputation models.

All criteria share the same mechanics: hide an observed entry (or several),
ask the model to impute it under the reduced pattern, and score the imputation
against the held-back value. Scoring variants:

  moo_risk      - plain per-entry loss (squared or absolute): prediction risk
  mko_risk      - joint masking of up to K entries with additive loss
  moort         - normalized rank of the held-back value among M draws,
                  scored by distance of the rank distribution to Uniform[0,1]
  mooen         - per-entry energy score, rewarding calibrated spread
  moolc / moobl - monotone-missingness variants (mask latest / block later)

Every Monte Carlo draw comes from a substream keyed by (seed, row, variable,
repeat) (for joint masks: (seed, row, *mask variables, repeat)), so reports
are bitwise reproducible, independent of evaluation order and thread count,
and the variable-wise decomposition of the total risk is exact.
"""
from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .dataset import IncompleteDataset, MonotoneDataset
from .models import ConditionalUnavailable, ImputationModel
from .patterns import ResponsePattern, maskable_subsets
from .rng import substream

logger = logging.getLogger(__name__)

__all__ = [
    "LossFn",
    "SQUARED",
    "ABSOLUTE",
    "get_loss",
    "CriterionConfig",
    "CriterionReport",
    "moo_risk",
    "moo_risk_variable",
    "mko_risk",
    "moort",
    "moort_variable",
    "moort_variable_sum",
    "mooen",
    "moolc_risk",
    "moobl_risk",
    "kolmogorov_distance",
    "cramer_von_mises_distance",
    "report_to_rows",
    "REPORT_CSV_FIELDS",
]


# ---------------------------------------------------------------------------
# Losses, configuration, report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LossFn:
    tag: str

    def __call__(self, a, b):
        if self.tag == "squared":
            return (np.asarray(b) - a) ** 2
        return np.abs(np.asarray(b) - a)


SQUARED = LossFn("squared")
ABSOLUTE = LossFn("absolute")
_LOSSES = {"squared": SQUARED, "absolute": ABSOLUTE}


def get_loss(tag: str) -> LossFn:
    if tag not in _LOSSES:
        raise ValueError(f"unknown loss {tag!r}; known: {', '.join(sorted(_LOSSES))}")
    return _LOSSES[tag]


_METRICS = ("kolmogorov", "cramer_von_mises")


@dataclass(frozen=True)
class CriterionConfig:
    M: int = 20              # imputation draws per masked entry
    repeats: int = 1         # outer Monte Carlo repetitions
    seed: int = 0
    metric: str = "kolmogorov"   # rank-distribution distance
    discrete_rank: bool = False  # stochastic rank (breaks ties for discrete data)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be >= 1")
        if self.repeats < 1:
            raise ValueError("repeats must be >= 1")
        if self.metric not in _METRICS:
            raise ValueError(f"unknown metric {self.metric!r}; known: {_METRICS}")


@dataclass
class CriterionReport:
    criterion: str
    model_label: str
    total_risk: float
    per_variable: np.ndarray          # (d,); NaN where no per-variable value exists
    n_evaluated: int
    n_skipped: int
    per_variable_evaluated: np.ndarray
    per_variable_skipped: np.ndarray
    settings: dict
    seed: int
    extras: dict = field(default_factory=dict)


REPORT_CSV_FIELDS = ("model", "criterion", "variable", "risk",
                     "n_evaluated", "n_skipped", "M", "repeats", "seed")


def report_to_rows(report: CriterionReport, column_names=None) -> list[dict]:
    """One CSV row per variable (where defined) plus a totals row."""
    base = {
        "model": report.model_label,
        "criterion": report.criterion,
        "M": report.settings.get("M", ""),
        "repeats": report.settings.get("repeats", ""),
        "seed": report.seed,
    }
    rows = []
    for j, risk in enumerate(report.per_variable):
        if np.isnan(risk):
            continue
        name = column_names[j] if column_names else f"x{j + 1}"
        rows.append(dict(base, variable=name, risk=repr(float(risk)),
                         n_evaluated=int(report.per_variable_evaluated[j]),
                         n_skipped=int(report.per_variable_skipped[j])))
    rows.append(dict(base, variable="total", risk=repr(float(report.total_risk)),
                     n_evaluated=report.n_evaluated, n_skipped=report.n_skipped))
    return rows


# ---------------------------------------------------------------------------
# Rank-distribution distances
# ---------------------------------------------------------------------------

def kolmogorov_distance(ranks) -> float:
    """Exact sup-distance between the EDF of ranks and Uniform[0,1],
    computed over the EDF jump points."""
    s = np.sort(np.asarray(ranks, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("no ranks to compare")
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - s, s - (i - 1) / n)))


def cramer_von_mises_distance(ranks) -> float:
    """Integrated squared distance between the EDF of ranks and Uniform[0,1]:
    the classic one-sample statistic divided by n, so it tends to 0 under
    uniformity."""
    s = np.sort(np.asarray(ranks, dtype=float))
    n = s.size
    if n == 0:
        raise ValueError("no ranks to compare")
    i = np.arange(1, n + 1)
    w2 = 1.0 / (12 * n) + np.sum(((2 * i - 1) / (2 * n) - s) ** 2)
    return float(w2 / n)


def _distance(ranks, metric: str) -> float:
    if metric == "kolmogorov":
        return kolmogorov_distance(ranks)
    return cramer_von_mises_distance(ranks)


# ---------------------------------------------------------------------------
# Shared machinery
# ---------------------------------------------------------------------------

def _contributing_rows(ds: IncompleteDataset) -> np.ndarray:
    rows = np.flatnonzero(ds.mask.any(axis=1))
    if rows.size < ds.n:
        logger.info("%d all-missing rows contribute to no criterion", ds.n - rows.size)
    return rows


def _warn_unstandardized(ds: IncompleteDataset, criterion: str):
    if ds.standardization is None:
        logger.warning("%s: dataset is not standardized; loss scales may differ "
                       "across variables", criterion)


def _hidden_row(values_row: np.ndarray, r: ResponsePattern) -> np.ndarray:
    """Copy of the row with everything outside the conditioning pattern NaN'd,
    so a model that reads beyond its contract fails loudly."""
    row = values_row.copy()
    for k in range(r.d):
        if not (r.bits >> k) & 1:
            row[k] = np.nan
    return row


def _map_ordered(fn, items, threads: int):
    if threads <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


def _base_settings(cfg: CriterionConfig, **extra) -> dict:
    s = {"M": cfg.M, "repeats": cfg.repeats, "seed": cfg.seed}
    s.update(extra)
    return s


def skipped_digest(skipped_entries) -> str:
    """Stable fingerprint of the skipped entry set, so model comparisons can
    warn when different models skipped different entries."""
    canon = repr(sorted(skipped_entries)).encode()
    return hashlib.sha1(canon).hexdigest()[:12]


# ---------------------------------------------------------------------------
# Loss-scored criteria (naive masking risk, variable-wise, monotone loss mode)
# ---------------------------------------------------------------------------

def _run_loss_entries(model, ds, loss, cfg, entries, n_norm, criterion, settings,
                      threads=1):
    """entries: list of (i, j, conditioning pattern). Returns a report whose
    total risk is sum(per-entry mean loss) / n_norm."""
    d = ds.d

    def one(entry):
        i, j, r = entry
        x = float(ds.values[i, j])
        row = _hidden_row(ds.values[i], r)
        acc = 0.0
        try:
            for rep in range(cfg.repeats):
                rng = substream(cfg.seed, i, j, rep)
                draws = model.sample_marginal(j, row, r, rng, size=cfg.M)
                acc += float(np.mean(loss(x, draws)))
        except ConditionalUnavailable:
            return (i, j, None)
        return (i, j, acc / cfg.repeats)

    results = _map_ordered(one, entries, threads)
    per_var_sum = np.zeros(d)
    per_var_eval = np.zeros(d, dtype=int)
    per_var_skip = np.zeros(d, dtype=int)
    skipped = []
    for i, j, val in results:
        if val is None:
            per_var_skip[j] += 1
            skipped.append((i, j))
        else:
            per_var_sum[j] += val
            per_var_eval[j] += 1
    n_eval = int(per_var_eval.sum())
    if n_eval == 0:
        raise ValueError(f"{criterion}: every entry was skipped")
    per_variable = per_var_sum / n_norm
    return CriterionReport(
        criterion=criterion, model_label=model.label,
        total_risk=float(per_var_sum.sum() / n_norm),
        per_variable=per_variable,
        n_evaluated=n_eval, n_skipped=int(per_var_skip.sum()),
        per_variable_evaluated=per_var_eval, per_variable_skipped=per_var_skip,
        settings=settings, seed=cfg.seed,
        extras={"skipped_digest": skipped_digest(skipped)},
    )


def moo_risk(model: ImputationModel, ds: IncompleteDataset, loss: LossFn = SQUARED,
             cfg: CriterionConfig = CriterionConfig(), threads: int = 1) -> CriterionReport:
    """Naive masking risk: every observed entry is masked in turn, imputed M
    times under the reduced pattern, and scored by the mean loss; the total is
    the per-row sum averaged over the rows that have anything to mask."""
    _warn_unstandardized(ds, "moo")
    rows = _contributing_rows(ds)
    patterns = ds.row_patterns()
    entries = [(int(i), j, patterns[i].mask(j))
               for i in rows for j in patterns[i].observed_indices()]
    return _run_loss_entries(model, ds, loss, cfg, entries, n_norm=rows.size,
                             criterion="moo",
                             settings=_base_settings(cfg, loss=loss.tag),
                             threads=threads)


def moo_risk_variable(model: ImputationModel, ds: IncompleteDataset, j: int,
                      loss: LossFn = SQUARED, cfg: CriterionConfig = CriterionConfig(),
                      threads: int = 1) -> CriterionReport:
    """Masking risk of a single variable. Shares substream keys with moo_risk,
    so summing over j reproduces the total risk exactly."""
    _warn_unstandardized(ds, "moo_variable")
    rows = _contributing_rows(ds)
    patterns = ds.row_patterns()
    entries = [(int(i), j, patterns[i].mask(j)) for i in rows if patterns[i].is_observed(j)]
    if not entries:
        raise ValueError(f"variable {j} is never observed")
    return _run_loss_entries(model, ds, loss, cfg, entries, n_norm=rows.size,
                             criterion="moo_variable",
                             settings=_base_settings(cfg, loss=loss.tag, variable=j),
                             threads=threads)


def mko_risk(model: ImputationModel, ds: IncompleteDataset, K: int,
             loss: LossFn = SQUARED, cfg: CriterionConfig = CriterionConfig(),
             threads: int = 1) -> CriterionReport:
    """Mask-K-out: every nonempty subset of up to K observed entries is masked
    jointly, imputed from the joint conditional, and scored by the additive
    loss over the masked variables. K=1 reproduces moo_risk exactly (same
    substream keys); K=d masks every observed subset (mask-all-out).

    A row with L observed entries contributes sum_{k=1..K} C(L,k)*k loss
    evaluations. The mask-all-out score has no claimed optimal target
    distribution (the natural candidate set can be empty); it is reported as a
    score only.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    _warn_unstandardized(ds, "mko")
    rows = _contributing_rows(ds)
    patterns = ds.row_patterns()
    d = ds.d

    tasks = []
    for i in rows:
        for s in maskable_subsets(patterns[i], K):
            tasks.append((int(i), s, patterns[i]))

    def one(task):
        i, s, R = task
        r = ResponsePattern(d=d, bits=R.bits & ~s.bits)
        row = _hidden_row(ds.values[i], r)
        targets = s.observed_indices()
        sums = np.zeros(len(targets))
        try:
            for rep in range(cfg.repeats):
                rng = substream(cfg.seed, i, *targets, rep)
                draws = model.sample_joint(s, row, r, rng, size=cfg.M)
                for t, j in enumerate(targets):
                    sums[t] += float(np.mean(loss(float(ds.values[i, j]), draws[:, j])))
        except ConditionalUnavailable:
            return (i, targets, None)
        return (i, targets, sums / cfg.repeats)

    results = _map_ordered(one, tasks, threads)
    per_var_sum = np.zeros(d)
    per_var_eval = np.zeros(d, dtype=int)
    per_var_skip = np.zeros(d, dtype=int)
    skipped = []
    for i, targets, sums in results:
        if sums is None:
            for j in targets:
                per_var_skip[j] += 1
                skipped.append((i, j))
        else:
            for t, j in enumerate(targets):
                per_var_sum[j] += sums[t]
                per_var_eval[j] += 1
    n_eval = int(per_var_eval.sum())
    if n_eval == 0:
        raise ValueError("mko: every mask was skipped")
    return CriterionReport(
        criterion="mko", model_label=model.label,
        total_risk=float(per_var_sum.sum() / rows.size),
        per_variable=per_var_sum / rows.size,
        n_evaluated=n_eval, n_skipped=int(per_var_skip.sum()),
        per_variable_evaluated=per_var_eval, per_variable_skipped=per_var_skip,
        settings=_base_settings(cfg, loss=loss.tag, K=K), seed=cfg.seed,
        extras={"skipped_digest": skipped_digest(skipped)},
    )


# ---------------------------------------------------------------------------
# Rank-transform criteria
# ---------------------------------------------------------------------------

def _rank_of_entry(model, ds, i, j, r, rng, cfg) -> float:
    x = float(ds.values[i, j])
    row = _hidden_row(ds.values[i], r)
    draws = model.sample_marginal(j, row, r, rng, size=cfg.M)
    if cfg.discrete_rank:
        below = int(np.sum(draws < x))
        ties = int(np.sum(draws == x))
        u = float(rng.uniform())
        return (below + u * (1 + ties)) / (cfg.M + 1)
    return float(np.mean(draws <= x))


def _run_rank(model, ds, cfg, entries_for_rep, criterion, settings,
              resample_on_unavailable=False, threads=1):
    """entries_for_rep(rep) yields the entries to rank in that repetition.

    With resample_on_unavailable, each "entry" is a row with a preference
    order of variables: the first variable whose conditional is available is
    used, and the row is skipped when none is.
    """
    distances = []
    n_eval = n_skip = 0
    skipped = []
    for rep in range(cfg.repeats):
        def one(entry):
            i, choices = entry
            for j, r in choices:
                rng = substream(cfg.seed, i, j, rep)
                try:
                    return (i, _rank_of_entry(model, ds, i, j, r, rng, cfg))
                except ConditionalUnavailable:
                    if not resample_on_unavailable:
                        return (i, None)
            return (i, None)

        results = _map_ordered(one, entries_for_rep(rep), threads)
        kept = [v for _, v in results if v is not None]
        skipped += [(rep, i) for i, v in results if v is None]
        n_skip += len(results) - len(kept)
        n_eval += len(kept)
        if not kept:
            raise ValueError(f"{criterion}: no rankable entries in repetition {rep}")
        distances.append(_distance(np.array(kept), cfg.metric))
    return CriterionReport(
        criterion=criterion, model_label=model.label,
        total_risk=float(np.mean(distances)),
        per_variable=np.full(ds.d, np.nan),
        n_evaluated=n_eval, n_skipped=n_skip,
        per_variable_evaluated=np.zeros(ds.d, dtype=int),
        per_variable_skipped=np.zeros(ds.d, dtype=int),
        settings=settings, seed=cfg.seed,
        extras={"per_repeat": distances, "skipped_digest": skipped_digest(skipped)},
    )


def moort(model: ImputationModel, ds: IncompleteDataset,
          cfg: CriterionConfig = CriterionConfig(), threads: int = 1) -> CriterionReport:
    """Rank-transform criterion: one observed entry per row (chosen uniformly
    at random per repetition) is masked, its normalized rank among M imputed
    draws is recorded, and the distance between the rank distribution and
    Uniform[0,1] is the risk. A correct stochastic model yields uniform ranks;
    a point-mass model piles ranks at 0 and 1.

    If the chosen entry's conditional is unavailable, another observed entry
    is drawn; rows with no available entry are skipped with a count.
    """
    if cfg.M < 2:
        raise ValueError("moort needs M >= 2")
    rows = _contributing_rows(ds)
    patterns = ds.row_patterns()

    def entries_for_rep(rep):
        entries = []
        for i in rows:
            obs = patterns[i].observed_indices()
            pick_rng = substream(cfg.seed, int(i), rep)
            order = pick_rng.permutation(len(obs))
            choices = [(obs[k], patterns[i].mask(obs[k])) for k in order]
            entries.append((int(i), choices))
        return entries

    return _run_rank(model, ds, cfg, entries_for_rep, criterion="moort",
                     settings=_base_settings(cfg, metric=cfg.metric,
                                             discrete_rank=cfg.discrete_rank),
                     resample_on_unavailable=True, threads=threads)


def moort_variable(model: ImputationModel, ds: IncompleteDataset, j: int,
                   cfg: CriterionConfig = CriterionConfig(), threads: int = 1) -> CriterionReport:
    """Rank-transform criterion for one fixed variable over the rows where it
    is observed."""
    if cfg.M < 2:
        raise ValueError("moort needs M >= 2")
    rows = _contributing_rows(ds)
    patterns = ds.row_patterns()
    eligible = [(int(i), [(j, patterns[i].mask(j))]) for i in rows
                if patterns[i].is_observed(j)]
    if not eligible:
        raise ValueError(f"variable {j} is never observed")

    report = _run_rank(model, ds, cfg, lambda rep: eligible, criterion="moort_variable",
                       settings=_base_settings(cfg, metric=cfg.metric, variable=j,
                                               discrete_rank=cfg.discrete_rank),
                       threads=threads)
    report.per_variable = np.full(ds.d, np.nan)
    report.per_variable[j] = report.total_risk
    return report


def moort_variable_sum(model: ImputationModel, ds: IncompleteDataset,
                       cfg: CriterionConfig = CriterionConfig(),
                       threads: int = 1) -> CriterionReport:
    """Sum of the variable-wise rank criteria over all variables: a lower-noise
    alternative to the row-sampled criterion at higher computational cost."""
    per_variable = np.full(ds.d, np.nan)
    n_eval = n_skip = 0
    for j in range(ds.d):
        rep = moort_variable(model, ds, j, cfg, threads=threads)
        per_variable[j] = rep.total_risk
        n_eval += rep.n_evaluated
        n_skip += rep.n_skipped
    return CriterionReport(
        criterion="moort_sum", model_label=model.label,
        total_risk=float(np.nansum(per_variable)),
        per_variable=per_variable,
        n_evaluated=n_eval, n_skipped=n_skip,
        per_variable_evaluated=np.zeros(ds.d, dtype=int),
        per_variable_skipped=np.zeros(ds.d, dtype=int),
        settings=_base_settings(cfg, metric=cfg.metric), seed=cfg.seed,
    )


# ---------------------------------------------------------------------------
# Energy criterion
# ---------------------------------------------------------------------------

def _energy_loss(x, draws_a, draws_b, M) -> tuple[float, float]:
    """(data term, spread term) of the per-entry energy loss.

    The spread term is the cross-pair U-statistic over the two independent
    draw sets, excluding equal indices: an unbiased estimate of the model's
    mean internal spread E|Y - Y'|, so the expected loss is exactly zero when
    the held-back value is itself a draw from the model.
    """
    term1 = float(np.mean(np.abs(x - draws_a)))
    diff = np.abs(draws_a[:, None] - draws_b[None, :])
    term2 = float((diff.sum() - np.trace(diff)) / (M * (M - 1)))
    return term1, term2


def mooen(model: ImputationModel, ds: IncompleteDataset,
          cfg: CriterionConfig = CriterionConfig(), threads: int = 1) -> CriterionReport:
    """Energy criterion: per observed entry, the mean absolute deviation of M
    imputed draws from the held-back value minus the model's mean internal
    spread (estimated from a second independent set of M draws). Deterministic
    models get no spread credit, so their loss reduces to the mean absolute
    error; a correctly calibrated stochastic model drives the total to zero.
    """
    if cfg.M < 2:
        raise ValueError("mooen needs M >= 2")
    _warn_unstandardized(ds, "mooen")
    rows = _contributing_rows(ds)
    patterns = ds.row_patterns()
    entries = [(int(i), j, patterns[i].mask(j))
               for i in rows for j in patterns[i].observed_indices()]
    d = ds.d

    def one(entry):
        i, j, r = entry
        x = float(ds.values[i, j])
        row = _hidden_row(ds.values[i], r)
        acc = t1 = t2 = 0.0
        try:
            for rep in range(cfg.repeats):
                rng = substream(cfg.seed, i, j, rep)
                draws_a = model.sample_marginal(j, row, r, rng, size=cfg.M)
                draws_b = model.sample_marginal(j, row, r, rng, size=cfg.M)
                a, b = _energy_loss(x, np.asarray(draws_a), np.asarray(draws_b), cfg.M)
                acc += a - b
                t1 += a
                t2 += b
        except ConditionalUnavailable:
            return (i, j, None, 0.0, 0.0)
        return (i, j, acc / cfg.repeats, t1 / cfg.repeats, t2 / cfg.repeats)

    results = _map_ordered(one, entries, threads)
    per_var_sum = np.zeros(d)
    per_var_eval = np.zeros(d, dtype=int)
    per_var_skip = np.zeros(d, dtype=int)
    data_term = spread_term = 0.0
    skipped = []
    for i, j, val, t1, t2 in results:
        if val is None:
            per_var_skip[j] += 1
            skipped.append((i, j))
        else:
            per_var_sum[j] += val
            per_var_eval[j] += 1
            data_term += t1
            spread_term += t2
    n_eval = int(per_var_eval.sum())
    if n_eval == 0:
        raise ValueError("mooen: every entry was skipped")
    n_norm = rows.size
    return CriterionReport(
        criterion="mooen", model_label=model.label,
        total_risk=float(per_var_sum.sum() / n_norm),
        per_variable=per_var_sum / n_norm,
        n_evaluated=n_eval, n_skipped=int(per_var_skip.sum()),
        per_variable_evaluated=per_var_eval, per_variable_skipped=per_var_skip,
        settings=_base_settings(cfg), seed=cfg.seed,
        extras={"data_term": data_term / n_norm, "spread_term": spread_term / n_norm,
                "skipped_digest": skipped_digest(skipped)},
    )


# ---------------------------------------------------------------------------
# Monotone variants
# ---------------------------------------------------------------------------

def _prefix(d: int, t: int) -> ResponsePattern:
    return ResponsePattern(d=d, bits=(1 << t) - 1)


def _monotone_entries(mds: MonotoneDataset, which: str):
    """MOOLC masks only the latest observed variable of each row; MOOBL masks
    each observed variable in turn with all later variables blocked out, so
    the conditional is always q(x_j | x_{<j}, T = j-1)."""
    entries = []
    for i in range(mds.n):
        t = int(mds.t_of_row[i])
        if t < 1:
            continue
        if which == "latest":
            entries.append((i, t - 1, _prefix(mds.d, t - 1)))
        else:
            for j in range(t):
                entries.append((i, j, _prefix(mds.d, j)))
    return entries


def _monotone_report(model, mds, mode, cfg, loss, entries, criterion, threads):
    ds = mds.data
    n_norm = int(np.sum(mds.t_of_row >= 1))
    if n_norm == 0:
        raise ValueError(f"{criterion}: no rows with an observed variable")
    settings = _base_settings(cfg, mode=mode)
    if mode == "loss":
        settings["loss"] = loss.tag
        return _run_loss_entries(model, ds, loss, cfg, entries, n_norm=n_norm,
                                 criterion=criterion, settings=settings, threads=threads)
    if mode == "rank":
        if cfg.M < 2:
            raise ValueError("rank mode needs M >= 2")
        fixed = [(i, [(j, r)]) for i, j, r in entries]
        report = _run_rank(model, ds, cfg, lambda rep: fixed, criterion=criterion,
                           settings=dict(settings, metric=cfg.metric), threads=threads)
        return report
    if mode == "energy":
        if cfg.M < 2:
            raise ValueError("energy mode needs M >= 2")
        d = ds.d

        def one(entry):
            i, j, r = entry
            x = float(ds.values[i, j])
            row = _hidden_row(ds.values[i], r)
            acc = 0.0
            try:
                for rep in range(cfg.repeats):
                    rng = substream(cfg.seed, i, j, rep)
                    a = np.asarray(model.sample_marginal(j, row, r, rng, size=cfg.M))
                    b = np.asarray(model.sample_marginal(j, row, r, rng, size=cfg.M))
                    t1, t2 = _energy_loss(x, a, b, cfg.M)
                    acc += t1 - t2
            except ConditionalUnavailable:
                return (i, j, None)
            return (i, j, acc / cfg.repeats)

        results = _map_ordered(one, entries, threads)
        per_var_sum = np.zeros(d)
        per_var_eval = np.zeros(d, dtype=int)
        per_var_skip = np.zeros(d, dtype=int)
        skipped = []
        for i, j, val in results:
            if val is None:
                per_var_skip[j] += 1
                skipped.append((i, j))
            else:
                per_var_sum[j] += val
                per_var_eval[j] += 1
        if per_var_eval.sum() == 0:
            raise ValueError(f"{criterion}: every entry was skipped")
        return CriterionReport(
            criterion=criterion, model_label=model.label,
            total_risk=float(per_var_sum.sum() / n_norm),
            per_variable=per_var_sum / n_norm,
            n_evaluated=int(per_var_eval.sum()), n_skipped=int(per_var_skip.sum()),
            per_variable_evaluated=per_var_eval, per_variable_skipped=per_var_skip,
            settings=settings, seed=cfg.seed,
            extras={"skipped_digest": skipped_digest(skipped)},
        )
    raise ValueError(f"unknown mode {mode!r}; expected loss, rank, or energy")


def moolc_risk(model: ImputationModel, mds: MonotoneDataset, mode: str = "loss",
               cfg: CriterionConfig = CriterionConfig(), loss: LossFn = SQUARED,
               threads: int = 1) -> CriterionReport:
    """Monotone masking of the latest observed variable only."""
    entries = _monotone_entries(mds, "latest")
    return _monotone_report(model, mds, mode, cfg, loss, entries,
                            criterion="moolc", threads=threads)


def moobl_risk(model: ImputationModel, mds: MonotoneDataset, mode: str = "loss",
               cfg: CriterionConfig = CriterionConfig(), loss: LossFn = SQUARED,
               threads: int = 1) -> CriterionReport:
    """Monotone masking with blocking: each observed variable is masked in
    turn, every later variable is blocked out, and only the masked variable is
    imputed and scored."""
    entries = _monotone_entries(mds, "block")
    return _monotone_report(model, mds, mode, cfg, loss, entries,
                            criterion="moobl", threads=threads)
