"""Experiment orchestration: cross-fitted criterion evaluation over a model
lineup, oracle imputation risk on amputed data, rank-concordance tables, and
the prediction-imputation diagram.

An experiment is described by a JSON config (see ExperimentSpec). Runs are
deterministic: every random quantity is driven by a seed recorded in the
config, emitted files carry the seed set and a config hash in a header
comment, and re-running the same config reproduces the output directory
byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import spearmanr

from . import criteria as crit
from .criteria import CriterionConfig, CriterionReport, get_loss, report_to_rows
from .dataset import (
    GroundTruthDataset,
    IncompleteDataset,
    ampute_mar,
    ampute_mcar,
    ampute_monotone_dropout,
    from_arrays,
    load_csv,
    make_folds,
    standardize,
)
from .models import ConditionalUnavailable, make_model
from .rng import substream

logger = logging.getLogger(__name__)

__all__ = [
    "ExperimentSpec",
    "PiPoint",
    "OracleReport",
    "ExperimentResult",
    "generate_synthetic",
    "run_experiment",
    "oracle_risk",
    "emit_pi_diagram",
]

GENERATORS = ("gaussian_joint", "two_subpop_pattern_mixture", "monotone_gaussian_ar")


# ---------------------------------------------------------------------------
# Synthetic data
# ---------------------------------------------------------------------------

def generate_synthetic(generator_id: str, params: dict, seed: int) -> np.ndarray:
    """Deterministic complete matrices for the experiment suite.

    gaussian_joint: N(mean, cov), params {n, mean, cov}.
    two_subpop_pattern_mixture: mixture of two Gaussians, params
      {n, weight, mean_a, cov_a, mean_b, cov_b}; mixture mean is
      w*mean_a + (1-w)*mean_b.
    monotone_gaussian_ar: AR(1) with standard normal marginals and
      corr(x_i, x_j) = rho^|i-j|, params {n, d, rho}.
    """
    rng = substream(seed, 0)
    if generator_id == "gaussian_joint":
        mean = np.asarray(params["mean"], dtype=float)
        cov = np.asarray(params["cov"], dtype=float)
        np.linalg.cholesky(cov)
        return rng.multivariate_normal(mean, cov, size=int(params["n"]), method="cholesky")
    if generator_id == "two_subpop_pattern_mixture":
        n = int(params["n"])
        w = float(params["weight"])
        mean_a = np.asarray(params["mean_a"], dtype=float)
        mean_b = np.asarray(params["mean_b"], dtype=float)
        cov_a = np.asarray(params["cov_a"], dtype=float)
        cov_b = np.asarray(params["cov_b"], dtype=float)
        np.linalg.cholesky(cov_a)
        np.linalg.cholesky(cov_b)
        pick_a = rng.random(n) < w
        out = np.empty((n, mean_a.size))
        draws_a = rng.multivariate_normal(mean_a, cov_a, size=n, method="cholesky")
        draws_b = rng.multivariate_normal(mean_b, cov_b, size=n, method="cholesky")
        out[pick_a] = draws_a[pick_a]
        out[~pick_a] = draws_b[~pick_a]
        return out
    if generator_id == "monotone_gaussian_ar":
        n, d = int(params["n"]), int(params["d"])
        rho = float(params["rho"])
        if not -1.0 < rho < 1.0:
            raise ValueError(f"rho must be in (-1, 1), got {rho}")
        x = np.empty((n, d))
        x[:, 0] = rng.standard_normal(n)
        for t in range(1, d):
            x[:, t] = rho * x[:, t - 1] + math.sqrt(1 - rho ** 2) * rng.standard_normal(n)
        return x
    raise ValueError(f"unknown generator {generator_id!r}; known: {GENERATORS}")


# ---------------------------------------------------------------------------
# Experiment spec
# ---------------------------------------------------------------------------

@dataclass
class ExperimentSpec:
    dataset: dict
    models: list[str]
    criteria: list[dict]
    k_folds: int
    fold_seed: int
    amputation: dict = field(default_factory=lambda: {"mechanism": "none"})
    standardize: bool = True
    oracle: dict | None = None
    output_dir: str = "out"

    def validate(self):
        if not self.models:
            raise ValueError("experiment needs at least one model")
        if not self.criteria:
            raise ValueError("experiment needs at least one criterion")
        if self.k_folds < 2:
            raise ValueError("k_folds must be >= 2")
        src = self.dataset.get("source")
        if src == "synthetic":
            for k in ("generator", "params", "seed"):
                if k not in self.dataset:
                    raise ValueError(f"synthetic dataset spec needs {k!r}")
        elif src == "file":
            if "path" not in self.dataset:
                raise ValueError("file dataset spec needs 'path'")
        else:
            raise ValueError("dataset.source must be 'synthetic' or 'file'")
        mech = self.amputation.get("mechanism", "none")
        if mech not in ("none", "mcar", "mar", "monotone"):
            raise ValueError(f"unknown amputation mechanism {mech!r}")
        if mech != "none" and "seed" not in self.amputation:
            raise ValueError("amputation spec needs an explicit seed")
        for c in self.criteria:
            if "name" not in c or "seed" not in c:
                raise ValueError("each criterion spec needs 'name' and 'seed'")
            if c["name"] not in ("moo", "moort", "mooen", "mko", "moort_sum"):
                raise ValueError(f"unknown criterion {c['name']!r} in experiment spec")
        if self.oracle is not None and "seed" not in self.oracle:
            raise ValueError("oracle spec needs an explicit seed")

    def to_json(self) -> str:
        doc = {
            "dataset": self.dataset, "models": self.models, "criteria": self.criteria,
            "k_folds": self.k_folds, "fold_seed": self.fold_seed,
            "amputation": self.amputation, "standardize": self.standardize,
            "oracle": self.oracle, "output_dir": self.output_dir,
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ExperimentSpec":
        doc = json.loads(text)
        return cls(
            dataset=doc["dataset"], models=list(doc["models"]),
            criteria=list(doc["criteria"]), k_folds=int(doc["k_folds"]),
            fold_seed=int(doc["fold_seed"]),
            amputation=doc.get("amputation", {"mechanism": "none"}),
            standardize=bool(doc.get("standardize", True)),
            oracle=doc.get("oracle"), output_dir=doc.get("output_dir", "out"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def config_hash(self) -> str:
        # the output location is not part of the experiment's identity
        doc = json.loads(self.to_json())
        doc.pop("output_dir", None)
        canonical = json.dumps(doc, sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()[:16]

    def seed_set(self) -> dict:
        seeds = {"folds": self.fold_seed}
        if self.dataset.get("source") == "synthetic":
            seeds["dataset"] = self.dataset["seed"]
        if self.amputation.get("mechanism", "none") != "none":
            seeds["amputation"] = self.amputation["seed"]
        for c in self.criteria:
            seeds[f"criterion:{c['name']}"] = c["seed"]
        if self.oracle is not None:
            seeds["oracle"] = self.oracle["seed"]
        return seeds


@dataclass
class PiPoint:
    model: str
    x: float  # prediction risk (masking risk, squared loss)
    y: float  # imputation risk (rank or energy criterion)
    criterion: str

    def __post_init__(self):
        if not (np.isfinite(self.x) and np.isfinite(self.y)):
            raise ValueError(f"non-finite diagram point for {self.model}")


@dataclass
class OracleReport:
    per_model: dict[str, dict[str, float]]  # model -> {oracle_loss, oracle_rank, oracle_energy}
    concordance: dict[str, float]           # criterion -> spearman vs the oracle analog
    n_entries: int


@dataclass
class ExperimentResult:
    reports: dict[tuple[str, str], CriterionReport]  # (model, criterion) -> aggregate
    fold_reports: dict[tuple[str, str], list[CriterionReport]]
    fold_weights: list[int]
    pi_points: list[PiPoint]
    oracle: OracleReport | None
    output_dir: str


# ---------------------------------------------------------------------------
# Criterion dispatch
# ---------------------------------------------------------------------------

def _criterion_config(cspec: dict) -> CriterionConfig:
    return CriterionConfig(
        M=int(cspec.get("M", 20)), repeats=int(cspec.get("repeats", 1)),
        seed=int(cspec["seed"]), metric=cspec.get("metric", "kolmogorov"),
        discrete_rank=bool(cspec.get("discrete_rank", False)),
    )


def _run_criterion(cspec: dict, model, ds: IncompleteDataset, threads: int = 1) -> CriterionReport:
    cfg = _criterion_config(cspec)
    name = cspec["name"]
    if name == "moo":
        return crit.moo_risk(model, ds, get_loss(cspec.get("loss", "squared")), cfg,
                             threads=threads)
    if name == "mko":
        return crit.mko_risk(model, ds, int(cspec.get("K", 2)),
                             get_loss(cspec.get("loss", "squared")), cfg, threads=threads)
    if name == "moort":
        return crit.moort(model, ds, cfg, threads=threads)
    if name == "moort_sum":
        return crit.moort_variable_sum(model, ds, cfg, threads=threads)
    if name == "mooen":
        return crit.mooen(model, ds, cfg, threads=threads)
    raise ValueError(f"unknown criterion {name!r}")


def _aggregate_reports(fold_reports: list[CriterionReport], weights: list[int]) -> CriterionReport:
    """Row-weighted mean of the per-fold criterion reports."""
    w = np.asarray(weights, dtype=float)
    totals = np.array([r.total_risk for r in fold_reports])
    d = fold_reports[0].per_variable.size
    per_var = np.full(d, np.nan)
    pv = np.vstack([r.per_variable for r in fold_reports])
    with np.errstate(invalid="ignore"):
        valid = ~np.isnan(pv)
        for j in range(d):
            wj = w[valid[:, j]]
            if wj.size:
                per_var[j] = float(np.sum(pv[valid[:, j], j] * wj) / wj.sum())
    first = fold_reports[0]
    digest = "/".join(r.extras.get("skipped_digest", "") for r in fold_reports)
    return CriterionReport(
        criterion=first.criterion, model_label=first.model_label,
        total_risk=float(np.sum(totals * w) / w.sum()),
        per_variable=per_var,
        n_evaluated=int(sum(r.n_evaluated for r in fold_reports)),
        n_skipped=int(sum(r.n_skipped for r in fold_reports)),
        per_variable_evaluated=np.sum([r.per_variable_evaluated for r in fold_reports], axis=0),
        per_variable_skipped=np.sum([r.per_variable_skipped for r in fold_reports], axis=0),
        settings=dict(first.settings, folds=len(fold_reports)),
        seed=first.seed,
        extras={"skipped_digest": digest},
    )


# ---------------------------------------------------------------------------
# Oracle risk
# ---------------------------------------------------------------------------

def oracle_risk(models: dict[str, object], gt: GroundTruthDataset,
                loss=crit.SQUARED, M: int = 20, seed: int = 0,
                mask_reports: dict[tuple[str, str], CriterionReport] | None = None,
                entry_rows=None) -> OracleReport:
    """Imputation risk against the held-out truth of the genuinely missing
    entries, with rank and energy analogs, plus Spearman concordance between
    each masking criterion's model ranking and the oracle ranking.

    entry_rows optionally restricts the evaluation to a subset of rows (used
    by cross-fitting so each model is scored on its held-out fold).
    """
    inc = gt.incomplete
    entries = gt.missing_entries()
    if entry_rows is not None:
        keep = np.isin(entries[:, 0], np.asarray(entry_rows))
        entries = entries[keep]
    patterns = inc.row_patterns()
    per_model: dict[str, dict[str, float]] = {}
    n_scored = 0
    for label in sorted(models):
        model = models[label]
        losses, ranks, energies = [], [], []
        for i, j in entries:
            i, j = int(i), int(j)
            r = patterns[i]
            if r.bits == 0:
                continue
            row = inc.values[i].copy()
            truth = float(gt.complete[i, j])
            rng = substream(seed, i, j)
            try:
                draws = np.asarray(model.sample_marginal(j, row, r, rng, size=M))
                draws_b = np.asarray(model.sample_marginal(j, row, r, rng, size=M))
            except ConditionalUnavailable:
                continue
            losses.append(float(np.mean(loss(truth, draws))))
            ranks.append(float(np.mean(draws <= truth)))
            t1, t2 = crit._energy_loss(truth, draws, draws_b, M)
            energies.append(t1 - t2)
        if not losses:
            logger.warning("oracle: model %s produced no scorable entries", label)
            continue
        per_model[label] = {
            "oracle_loss": float(np.mean(losses)),
            "oracle_rank": crit.kolmogorov_distance(np.array(ranks)),
            "oracle_energy": float(np.mean(energies)),
            "n_entries": len(losses),
        }
        n_scored = max(n_scored, len(losses))

    concordance: dict[str, float] = {}
    if mask_reports:
        analog = {"moo": "oracle_loss", "moort": "oracle_rank", "moort_sum": "oracle_rank",
                  "mooen": "oracle_energy", "mko": "oracle_loss"}
        by_criterion: dict[str, list[tuple[str, float]]] = {}
        for (label, criterion), rep in mask_reports.items():
            if label in per_model:
                by_criterion.setdefault(criterion, []).append((label, rep.total_risk))
        for criterion, pairs in sorted(by_criterion.items()):
            if len(pairs) < 2:
                continue
            labels = [p[0] for p in pairs]
            mask_risks = [p[1] for p in pairs]
            oracle_vals = [per_model[lab][analog[criterion]] for lab in labels]
            rho = spearmanr(mask_risks, oracle_vals).statistic
            concordance[criterion] = float(rho)
    return OracleReport(per_model=per_model, concordance=concordance, n_entries=n_scored)


# ---------------------------------------------------------------------------
# PI diagram
# ---------------------------------------------------------------------------

def _svg_escape(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")

def _ticks(lo: float, hi: float, n: int = 5):
    return [lo + (hi - lo) * k / (n - 1) for k in range(n)]


def emit_pi_diagram(points: list[PiPoint], path, header_comment: str = "") -> None:
    """Hand-emitted 800x600 SVG scatter: x = prediction risk, y = imputation
    risk, one marker and text label per model; lower-left is better.
    Coincident points get deterministic label offsets."""
    if not points:
        raise ValueError("no points to draw")
    points = sorted(points, key=lambda p: p.model)
    criterion = points[0].criterion
    W, H = 800, 600
    ml, mr, mt, mb = 80, 30, 30, 70
    xs = [p.x for p in points]
    ys = [p.y for p in points]

    def padded(lo, hi):
        span = hi - lo
        pad = 0.08 * span if span > 0 else max(abs(hi), 1.0) * 0.1
        return lo - pad, hi + pad

    x0, x1 = padded(min(xs), max(xs))
    y0, y1 = padded(min(ys), max(ys))

    def sx(v):
        return ml + (v - x0) / (x1 - x0) * (W - ml - mr)

    def sy(v):
        return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {W} {H}">',
    ]
    if header_comment:
        lines.insert(1, f"<!-- {_svg_escape(header_comment)} -->")
    lines.append(f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>')
    ax = f'stroke="black" stroke-width="1"'
    lines.append(f'<line x1="{ml}" y1="{H - mb}" x2="{W - mr}" y2="{H - mb}" {ax}/>')
    lines.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{H - mb}" {ax}/>')
    for t in _ticks(x0, x1):
        px = sx(t)
        lines.append(f'<line x1="{px:.2f}" y1="{H - mb}" x2="{px:.2f}" y2="{H - mb + 6}" {ax}/>')
        lines.append(f'<text x="{px:.2f}" y="{H - mb + 22}" font-size="12" '
                     f'text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        py = sy(t)
        lines.append(f'<line x1="{ml - 6}" y1="{py:.2f}" x2="{ml}" y2="{py:.2f}" {ax}/>')
        lines.append(f'<text x="{ml - 10}" y="{py + 4:.2f}" font-size="12" '
                     f'text-anchor="end">{t:.3g}</text>')
    lines.append(f'<text x="{(ml + W - mr) / 2:.1f}" y="{H - 20}" font-size="14" '
                 f'text-anchor="middle">MOO risk (prediction)</text>')
    lines.append(f'<text x="20" y="{(mt + H - mb) / 2:.1f}" font-size="14" '
                 f'text-anchor="middle" transform="rotate(-90 20 {(mt + H - mb) / 2:.1f})">'
                 f'{_svg_escape(criterion)} risk (imputation)</text>')
    seen: dict[tuple[float, float], int] = {}
    for p in points:
        coord = (round(sx(p.x), 2), round(sy(p.y), 2))
        bump = seen.get(coord, 0)
        seen[coord] = bump + 1
        px, py = coord
        lines.append(f'<circle cx="{px}" cy="{py}" r="4" fill="steelblue"/>')
        lines.append(f'<text x="{px + 6}" y="{py - 6 + 12 * bump}" font-size="12">'
                     f'{_svg_escape(p.model)}</text>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# The experiment runner
# ---------------------------------------------------------------------------

def _resolve_data(spec: ExperimentSpec):
    """Returns (IncompleteDataset, GroundTruthDataset | None)."""
    src = spec.dataset
    if src["source"] == "synthetic":
        complete = generate_synthetic(src["generator"], src["params"], int(src["seed"]))
    else:
        ds = load_csv(src["path"], na_token=src.get("na_token", "NA"))
        if spec.amputation.get("mechanism", "none") == "none":
            return ds, None
        if not ds.mask.all():
            raise ValueError("amputation requires a complete input dataset")
        complete = ds.values.copy()

    mech = spec.amputation.get("mechanism", "none")
    if mech == "none":
        full = from_arrays(complete, np.ones_like(complete, dtype=bool))
        return full, None
    seed = int(spec.amputation["seed"])
    if mech == "mcar":
        gt = ampute_mcar(complete, float(spec.amputation["fraction"]), seed)
    elif mech == "mar":
        gt = ampute_mar(complete, float(spec.amputation["fraction"]), seed,
                        slope=float(spec.amputation.get("slope", 1.0)))
    else:
        gt = ampute_monotone_dropout(complete, float(spec.amputation["hazard"]), seed,
                                     slope=float(spec.amputation.get("slope", 0.0)))
    return gt.incomplete, gt


def _standardize_with_truth(ds: IncompleteDataset, gt: GroundTruthDataset | None):
    std = standardize(ds)
    if gt is None:
        return std, None
    complete = gt.complete.copy()
    for j, (mean, sd) in enumerate(std.standardization):
        complete[:, j] = (complete[:, j] - mean) / sd
    return std, GroundTruthDataset(complete=complete, incomplete=std)


def _csv_header_comment(spec: ExperimentSpec) -> str:
    seeds = ",".join(f"{k}={v}" for k, v in sorted(spec.seed_set().items()))
    return f"# config_sha256={spec.config_hash()} seeds={seeds}"


def _write_csv(path, header_comment: str, fieldnames, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(header_comment + "\n")
        fh.write(",".join(fieldnames) + "\n")
        for row in rows:
            fh.write(",".join(str(row[k]) for k in fieldnames) + "\n")


def run_experiment(spec: ExperimentSpec, output_dir=None, force: bool = False,
                   threads: int = 1) -> ExperimentResult:
    """Cross-fitted evaluation: per fold, fit every model on the other folds
    and evaluate every criterion on the held-out fold; aggregate risks as
    row-weighted means across folds; emit risks.csv, pi_points.csv, one SVG
    diagram per imputation criterion, oracle_ranks.csv when ground truth
    exists, and JSON fit documents."""
    spec.validate()
    out = str(output_dir if output_dir is not None else spec.output_dir)
    if os.path.exists(out) and os.listdir(out) and not force:
        raise FileExistsError(f"output directory {out!r} is not empty (use force)")
    os.makedirs(out, exist_ok=True)
    os.makedirs(os.path.join(out, "fits"), exist_ok=True)

    ds, gt = _resolve_data(spec)
    if spec.standardize:
        ds, gt = _standardize_with_truth(ds, gt)
    folds = make_folds(ds, spec.k_folds, spec.fold_seed)
    header = _csv_header_comment(spec)

    model_specs = [make_model(m) for m in spec.models]
    active = {label for label, _ in model_specs}
    fold_reports: dict[tuple[str, str], list[CriterionReport]] = {}
    fold_weights: list[int] = []
    fold_models: list[dict[str, object]] = []

    for k in range(spec.k_folds):
        train = ds.subset_rows(folds.train_rows(k))
        test = ds.subset_rows(folds.test_rows(k))
        fold_weights.append(int(test.mask.any(axis=1).sum()))
        fitted: dict[str, object] = {}
        for label, fit in model_specs:
            if label not in active:
                continue
            try:
                fitted[label] = fit(train)
            except Exception as exc:  # noqa: BLE001 - a failed model must not sink the run
                logger.error("model %s failed to fit on fold %d: %s; dropping it", label, k, exc)
                active.discard(label)
        fold_models.append(fitted)
        for label in sorted(fitted):
            if label not in active:
                continue
            for cspec in spec.criteria:
                rep = _run_criterion(cspec, fitted[label], test, threads=threads)
                fold_reports.setdefault((label, cspec["name"]), []).append(rep)
            doc = _fit_json(fitted[label])
            if doc is not None:
                wrapped = {"provenance": {"config_sha256": spec.config_hash(),
                                          "seeds": spec.seed_set(), "fold": k},
                           "fit": doc}
                fname = f"fold{k}_{label.replace(':', '_').replace('/', '_')}.json"
                with open(os.path.join(out, "fits", fname), "w", encoding="utf-8") as fh:
                    json.dump(wrapped, fh, indent=2, sort_keys=True)
                    fh.write("\n")

    reports = {
        key: _aggregate_reports(reps, fold_weights)
        for key, reps in fold_reports.items()
        if key[0] in active and len(reps) == spec.k_folds
    }
    _warn_on_differing_skips(reports)

    # risks.csv
    rows = []
    for (label, criterion) in sorted(reports):
        rows.extend(report_to_rows(reports[(label, criterion)], ds.column_names))
    _write_csv(os.path.join(out, "risks.csv"), header, crit.REPORT_CSV_FIELDS, rows)

    # PI diagram: x = moo risk, y = each imputation criterion
    pi_points: list[PiPoint] = []
    criteria_present = {c["name"] for c in spec.criteria}
    if "moo" in criteria_present:
        for y_crit in sorted(criteria_present & {"moort", "mooen", "moort_sum"}):
            for label in sorted(active):
                if (label, "moo") in reports and (label, y_crit) in reports:
                    pi_points.append(PiPoint(
                        model=label, x=reports[(label, "moo")].total_risk,
                        y=reports[(label, y_crit)].total_risk, criterion=y_crit))
    pi_rows = [{"model": p.model, "x_moo": repr(p.x), "y_criterion": repr(p.y),
                "criterion": p.criterion} for p in pi_points]
    _write_csv(os.path.join(out, "pi_points.csv"), header,
               ("model", "x_moo", "y_criterion", "criterion"), pi_rows)
    for y_crit in sorted({p.criterion for p in pi_points}):
        pts = [p for p in pi_points if p.criterion == y_crit]
        emit_pi_diagram(pts, os.path.join(out, f"pi_diagram_{y_crit}.svg"),
                        header_comment=header.lstrip("# "))

    # oracle concordance
    oracle = None
    if gt is not None and spec.oracle is not None:
        per_fold_oracle: list[OracleReport] = []
        for k in range(spec.k_folds):
            fitted = {lab: m for lab, m in fold_models[k].items() if lab in active}
            per_fold_oracle.append(oracle_risk(
                fitted, gt, M=int(spec.oracle.get("M", 20)),
                seed=int(spec.oracle["seed"]), entry_rows=folds.test_rows(k)))
        oracle = _merge_oracle(per_fold_oracle, reports)
        orows = []
        for label in sorted(oracle.per_model):
            vals = oracle.per_model[label]
            for criterion in sorted(criteria_present):
                key = (label, criterion)
                if key not in reports:
                    continue
                analog = {"moo": "oracle_loss", "mko": "oracle_loss",
                          "moort": "oracle_rank", "moort_sum": "oracle_rank",
                          "mooen": "oracle_energy"}[criterion]
                orows.append({
                    "criterion": criterion, "model": label,
                    "mask_risk": repr(reports[key].total_risk),
                    "oracle_risk": repr(vals[analog]),
                    "spearman": repr(oracle.concordance.get(criterion, float("nan"))),
                })
        _write_csv(os.path.join(out, "oracle_ranks.csv"), header,
                   ("criterion", "model", "mask_risk", "oracle_risk", "spearman"), orows)

    with open(os.path.join(out, "config_resolved.json"), "w", encoding="utf-8") as fh:
        fh.write(spec.to_json() + "\n")

    return ExperimentResult(reports=reports, fold_reports=fold_reports,
                            fold_weights=fold_weights, pi_points=pi_points,
                            oracle=oracle, output_dir=out)


def _merge_oracle(per_fold: list[OracleReport],
                  reports: dict[tuple[str, str], CriterionReport]) -> OracleReport:
    """Entry-count-weighted merge of per-fold oracle scores, then concordance
    against the aggregated masking risks."""
    labels = sorted({lab for rep in per_fold for lab in rep.per_model})
    per_model = {}
    for lab in labels:
        acc = {"oracle_loss": 0.0, "oracle_energy": 0.0}
        ranks_w = []
        n_total = 0
        for rep in per_fold:
            if lab not in rep.per_model:
                continue
            vals = rep.per_model[lab]
            w = vals["n_entries"]
            acc["oracle_loss"] += vals["oracle_loss"] * w
            acc["oracle_energy"] += vals["oracle_energy"] * w
            ranks_w.append((vals["oracle_rank"], w))
            n_total += w
        if n_total == 0:
            continue
        per_model[lab] = {
            "oracle_loss": acc["oracle_loss"] / n_total,
            "oracle_energy": acc["oracle_energy"] / n_total,
            "oracle_rank": float(sum(r * w for r, w in ranks_w) / n_total),
            "n_entries": n_total,
        }
    concordance = {}
    analog = {"moo": "oracle_loss", "mko": "oracle_loss", "moort": "oracle_rank",
              "moort_sum": "oracle_rank", "mooen": "oracle_energy"}
    by_criterion: dict[str, list[tuple[str, float]]] = {}
    for (label, criterion), rep in reports.items():
        if label in per_model:
            by_criterion.setdefault(criterion, []).append((label, rep.total_risk))
    for criterion, pairs in sorted(by_criterion.items()):
        if len(pairs) < 2:
            continue
        labels_c = [p[0] for p in pairs]
        rho = spearmanr([p[1] for p in pairs],
                        [per_model[lab][analog[criterion]] for lab in labels_c]).statistic
        concordance[criterion] = float(rho)
    n_entries = max((v["n_entries"] for v in per_model.values()), default=0)
    return OracleReport(per_model=per_model, concordance=concordance, n_entries=n_entries)


def _warn_on_differing_skips(reports: dict[tuple[str, str], CriterionReport]) -> None:
    """Risks are only comparable across models when they skipped the same
    entries; warn per criterion when the skipped sets differ."""
    by_criterion: dict[str, dict[str, str]] = {}
    for (label, criterion), rep in reports.items():
        by_criterion.setdefault(criterion, {})[label] = rep.extras.get("skipped_digest", "")
    for criterion, digests in sorted(by_criterion.items()):
        if len(set(digests.values())) > 1:
            counts = {label: reports[(label, criterion)].n_skipped for label in digests}
            logger.warning("%s: models skipped different entry sets (skip counts %s); "
                           "risks are not directly comparable", criterion, counts)


def _fit_json(model) -> dict | None:
    try:
        return model.to_json_dict()
    except Exception:  # noqa: BLE001 - not every model is serializable
        return None
