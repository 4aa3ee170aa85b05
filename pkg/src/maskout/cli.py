"""Command-line frontend.

Subcommands: evaluate, fit, select, estimate, ampute, experiment, pi-diagram.
Every run prints the resolved seed set; identical invocations produce
identical files. Exit codes: 0 success, 2 usage or config error,
3 environment error (files, directories), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import criteria as crit
from .criteria import CriterionConfig, get_loss, report_to_rows, REPORT_CSV_FIELDS
from .dataset import (
    ampute_mar,
    ampute_mcar,
    ampute_monotone_dropout,
    as_monotone,
    from_arrays,
    load_csv,
    make_folds,
    standardize,
    write_csv,
)
from .estimators import fit_odds, fit_outcome, ipw_estimate, mr_estimate, ra_estimate
from .harness import ExperimentSpec, PiPoint, emit_pi_diagram, run_experiment, _aggregate_reports
from .likelihood import bic, fit_result_to_json, fit_separable_gaussian_closed_form
from .models import MODEL_NAMES, Unsupported, make_model

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_ENV = 3
EXIT_NUMERIC = 4

CRITERIA = ("moo", "moo_variable", "mko", "moort", "moort_variable", "moort_sum",
            "mooen", "moolc", "moobl")


def _print_seeds(seeds: dict):
    print("seeds: " + " ".join(f"{k}={v}" for k, v in sorted(seeds.items())))


def _load_standardized(path, na_token, do_standardize):
    ds = load_csv(path, na_token=na_token)
    return standardize(ds) if do_standardize else ds


def _dump_rows(rows, fieldnames, out, fmt):
    if fmt == "json":
        text = json.dumps(rows, indent=2, sort_keys=True) + "\n"
    else:
        lines = [",".join(fieldnames)]
        lines += [",".join(str(r[k]) for k in fieldnames) for r in rows]
        text = "\n".join(lines) + "\n"
    if out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)


def _run_one_criterion(args, model, ds):
    cfg = CriterionConfig(M=args.M, repeats=args.repeats, seed=args.seed,
                          metric=args.metric, discrete_rank=args.discrete_rank)
    loss = get_loss(args.loss)
    name = args.criterion
    if name == "moo":
        return crit.moo_risk(model, ds, loss, cfg, threads=args.threads)
    if name == "moo_variable":
        return crit.moo_risk_variable(model, ds, args.variable, loss, cfg, threads=args.threads)
    if name == "mko":
        return crit.mko_risk(model, ds, args.K, loss, cfg, threads=args.threads)
    if name == "moort":
        return crit.moort(model, ds, cfg, threads=args.threads)
    if name == "moort_variable":
        return crit.moort_variable(model, ds, args.variable, cfg, threads=args.threads)
    if name == "moort_sum":
        return crit.moort_variable_sum(model, ds, cfg, threads=args.threads)
    if name == "mooen":
        return crit.mooen(model, ds, cfg, threads=args.threads)
    if name in ("moolc", "moobl"):
        mds = as_monotone(ds)
        fn = crit.moolc_risk if name == "moolc" else crit.moobl_risk
        return fn(model, mds, mode=args.mode, cfg=cfg, loss=loss, threads=args.threads)
    raise ValueError(f"unknown criterion {name!r}")


def cmd_evaluate(args) -> int:
    _print_seeds({"criterion": args.seed, "folds": args.fold_seed})
    ds = _load_standardized(args.data, args.na_token, args.standardize)
    label, fit = make_model(args.model)
    if args.folds:
        folds = make_folds(ds, args.folds, args.fold_seed)
        reports, weights = [], []
        for k in range(args.folds):
            model = fit(ds.subset_rows(folds.train_rows(k)))
            test = ds.subset_rows(folds.test_rows(k))
            weights.append(int(test.mask.any(axis=1).sum()))
            reports.append(_run_one_criterion(args, model, test))
        report = _aggregate_reports(reports, weights)
    else:
        model = fit(ds)
        report = _run_one_criterion(args, model, ds)
    rows = report_to_rows(report, ds.column_names)
    _dump_rows(rows, REPORT_CSV_FIELDS, args.out, args.format)
    return EXIT_OK


def cmd_fit(args) -> int:
    _print_seeds({})
    ds = _load_standardized(args.data, args.na_token, args.standardize)
    if args.model.startswith("sep_gauss"):
        _, _, rest = args.model.partition(":")
        degree = 1
        for item in filter(None, rest.split(",")):
            k, _, v = item.partition("=")
            if k.strip() == "degree":
                degree = int(v)
        params, diag = fit_separable_gaussian_closed_form(ds, degree=degree)
        text = fit_result_to_json(params, diag)
    else:
        label, fit = make_model(args.model)
        model = fit(ds)
        try:
            doc = model.to_json_dict()
        except Unsupported:
            raise ValueError(f"model {label} has no serializable fit")
        text = json.dumps({"fit": doc}, indent=2, sort_keys=True)
    if args.out == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    return EXIT_OK


def cmd_select(args) -> int:
    specs = [s.strip() for s in args.models.split(",") if s.strip()]
    if len(specs) < 2:
        raise ValueError("need at least 2 models to select between")
    _print_seeds({"criterion": args.seed})
    ds = _load_standardized(args.data, args.na_token, args.standardize)
    cfg = CriterionConfig(M=args.M, repeats=args.repeats, seed=args.seed, metric=args.metric)
    rows = []
    digests = set()
    for spec in specs:
        label, fit = make_model(spec)
        model = fit(ds)
        try:
            n_params = model.parameter_count()
        except Unsupported:
            n_params = float("inf")
        if args.by == "bic":
            score = bic(model, ds)  # raises Unsupported for density-free models
            better_is_higher = True
        elif args.by == "moort":
            rep = crit.moort(model, ds, cfg)
            score, better_is_higher = rep.total_risk, False
            digests.add(rep.extras.get("skipped_digest", ""))
        else:
            rep = crit.mooen(model, ds, cfg)
            score, better_is_higher = rep.total_risk, False
            digests.add(rep.extras.get("skipped_digest", ""))
        rows.append({"model": label, "score": score, "n_params": n_params})
    if len(digests) > 1:
        print("warning: models skipped different entry sets; ranking may not be "
              "directly comparable", file=sys.stderr)
    sign = -1.0 if better_is_higher else 1.0
    rows.sort(key=lambda r: (sign * r["score"], r["n_params"], r["model"]))
    for rank, r in enumerate(rows, start=1):
        r["rank"] = rank
        r["winner"] = "*" if rank == 1 else ""
        r["score"] = repr(float(r["score"]))
        r["n_params"] = "" if r["n_params"] == float("inf") else int(r["n_params"])
    _dump_rows(rows, ("rank", "model", "score", "n_params", "winner"), args.out, args.format)
    return EXIT_OK


def cmd_estimate(args) -> int:
    _print_seeds({"seed": args.seed})
    ds = _load_standardized(args.data, args.na_token, args.standardize)
    if args.target_col in ds.column_names:
        target = ds.column_names.index(args.target_col)
    else:
        try:
            target = int(args.target_col)
        except ValueError:
            raise ValueError(f"unknown target column {args.target_col!r}; "
                             f"columns: {', '.join(ds.column_names)}")
        if not 0 <= target < ds.d:
            raise ValueError(f"target column index {target} out of range")
    odds = fit_odds(ds, target=target,
                    intercept_only=args.misspecify in ("odds", "both"))
    outcome = fit_outcome(ds, target=target,
                          intercept_only=args.misspecify in ("outcome", "both"))
    methods = ("mr", "ipw", "ra") if args.method == "all" else (args.method,)
    rows = []
    for method in methods:
        if method == "mr":
            rep = mr_estimate(ds, odds, outcome, target=target)
        elif method == "ipw":
            rep = ipw_estimate(ds, odds, target=target)
        else:
            rep = ra_estimate(ds, outcome, target=target)
        rows.append({
            "estimator": rep.estimator, "mu_hat": repr(rep.mu_hat),
            "per_pattern_json": json.dumps(rep.per_pattern, sort_keys=True).replace(",", ";"),
            "seed": args.seed,
        })
    _dump_rows(rows, ("estimator", "mu_hat", "per_pattern_json", "seed"), args.out, args.format)
    return EXIT_OK


def cmd_ampute(args) -> int:
    _print_seeds({"amputation": args.seed})
    ds = load_csv(args.data, na_token=args.na_token)
    if not ds.mask.all():
        raise ValueError("ampute requires a complete input dataset")
    if args.mechanism == "mcar":
        gt = ampute_mcar(ds.values, args.fraction, args.seed)
    elif args.mechanism == "mar":
        gt = ampute_mar(ds.values, args.fraction, args.seed, slope=args.slope)
    else:
        gt = ampute_monotone_dropout(ds.values, args.hazard, args.seed, slope=args.slope)
    inc = from_arrays(gt.incomplete.values, gt.incomplete.mask, ds.column_names)
    write_csv(inc, args.out, na_token=args.na_token)
    print(f"wrote {args.out} (missing fraction "
          f"{1 - inc.mask.mean():.4f})")
    return EXIT_OK


def cmd_experiment(args) -> int:
    spec = ExperimentSpec.load(args.spec)
    _print_seeds(spec.seed_set())
    if args.dry_run:
        spec.validate()
        print(f"config ok (sha256 {spec.config_hash()})")
        return EXIT_OK
    result = run_experiment(spec, output_dir=args.out, force=args.force,
                            threads=args.threads)
    print(f"wrote {result.output_dir}")
    return EXIT_OK


def cmd_pi_diagram(args) -> int:
    _print_seeds({})
    points: list[PiPoint] = []
    with open(args.points, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().splitlines() if ln and not ln.startswith("#")]
    header = lines[0].split(",")
    idx = {name: k for k, name in enumerate(header)}
    for ln in lines[1:]:
        cells = ln.split(",")
        points.append(PiPoint(model=cells[idx["model"]], x=float(cells[idx["x_moo"]]),
                              y=float(cells[idx["y_criterion"]]),
                              criterion=cells[idx["criterion"]]))
    if not points:
        raise ValueError(f"{args.points}: no diagram points")
    if not args.out.endswith(".svg"):
        os.makedirs(args.out, exist_ok=True)
    for criterion in sorted({p.criterion for p in points}):
        pts = [p for p in points if p.criterion == criterion]
        path = f"{args.out}/pi_diagram_{criterion}.svg" if not args.out.endswith(".svg") \
            else args.out
        emit_pi_diagram(pts, path)
        print(f"wrote {path}")
    return EXIT_OK


def _add_common_data_flags(p):
    p.add_argument("data", help="input CSV (header row, numeric cells)")
    p.add_argument("--na-token", default="NA", help="missing-value token (default: NA)")
    p.add_argument("--standardize", action=argparse.BooleanOptionalAction, default=True,
                   help="standardize observed entries per column (default: on)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="maskout",
        description="Masking criteria for evaluating, selecting, and learning "
                    "missing-data imputation models.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="score one model under one masking criterion")
    _add_common_data_flags(p)
    p.add_argument("--model", required=True,
                   help=f"model spec, e.g. gaussian_em or hot_deck_nn:k=10 "
                        f"(names: {', '.join(MODEL_NAMES)})")
    p.add_argument("--criterion", required=True, choices=CRITERIA)
    p.add_argument("--M", type=int, default=20, help="imputation draws per entry (default: 20)")
    p.add_argument("--repeats", type=int, default=1, help="outer repetitions (default: 1)")
    p.add_argument("--seed", type=int, default=0, help="criterion seed (default: 0)")
    p.add_argument("--loss", default="squared", choices=("squared", "absolute"),
                   help="loss for loss-scored criteria (default: squared)")
    p.add_argument("--K", type=int, default=2, help="mask size bound for mko (default: 2)")
    p.add_argument("--metric", default="kolmogorov", choices=("kolmogorov", "cramer_von_mises"),
                   help="rank-distribution distance (default: kolmogorov)")
    p.add_argument("--discrete-rank", action="store_true",
                   help="stochastic rank for discrete data (default: off)")
    p.add_argument("--variable", type=int, default=0,
                   help="variable index for variable-wise criteria (default: 0)")
    p.add_argument("--mode", default="loss", choices=("loss", "rank", "energy"),
                   help="scoring mode for monotone criteria (default: loss)")
    p.add_argument("--folds", type=int, default=0,
                   help="cross-fit with this many folds (default: fit on full data)")
    p.add_argument("--fold-seed", type=int, default=0, help="fold assignment seed (default: 0)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
    p.add_argument("--out", default="risks.csv", help="output path, '-' for stdout "
                   "(default: risks.csv)")
    p.add_argument("--format", default="csv", choices=("csv", "json"),
                   help="output format (default: csv)")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("fit", help="fit a model and write its JSON fit document")
    _add_common_data_flags(p)
    p.add_argument("--model", required=True, help="model spec (see evaluate)")
    p.add_argument("--out", default="fit.json", help="output path, '-' for stdout "
                   "(default: fit.json)")
    p.set_defaults(fn=cmd_fit)

    p = sub.add_parser("select", help="rank models by BIC or a masking criterion")
    _add_common_data_flags(p)
    p.add_argument("--models", required=True, help="comma-separated model specs (>= 2)")
    p.add_argument("--by", default="bic", choices=("bic", "moort", "mooen"),
                   help="selection criterion (default: bic)")
    p.add_argument("--M", type=int, default=20, help="imputation draws (default: 20)")
    p.add_argument("--repeats", type=int, default=1, help="outer repetitions (default: 1)")
    p.add_argument("--seed", type=int, default=0, help="criterion seed (default: 0)")
    p.add_argument("--metric", default="kolmogorov", choices=("kolmogorov", "cramer_von_mises"),
                   help="rank distance for --by moort (default: kolmogorov)")
    p.add_argument("--out", default="-", help="output path, '-' for stdout (default: stdout)")
    p.add_argument("--format", default="csv", choices=("csv", "json"),
                   help="output format (default: csv)")
    p.set_defaults(fn=cmd_select)

    p = sub.add_parser("estimate", help="estimate a marginal mean under missingness")
    _add_common_data_flags(p)
    p.add_argument("--target-col", required=True,
                   help="column name or 0-based index of the target variable")
    p.add_argument("--method", default="all", choices=("mr", "ipw", "ra", "all"),
                   help="estimator (default: all)")
    p.add_argument("--misspecify", default="none", choices=("none", "odds", "outcome", "both"),
                   help="force intercept-only nuisances for robustness experiments "
                        "(default: none)")
    p.add_argument("--seed", type=int, default=0, help="echoed into the output (default: 0)")
    p.add_argument("--out", default="-", help="output path, '-' for stdout (default: stdout)")
    p.add_argument("--format", default="csv", choices=("csv", "json"),
                   help="output format (default: csv)")
    p.set_defaults(fn=cmd_estimate)

    p = sub.add_parser("ampute", help="introduce synthetic missingness into a complete CSV")
    _add_common_data_flags(p)
    p.add_argument("--mechanism", default="mcar", choices=("mcar", "mar", "monotone"),
                   help="missingness mechanism (default: mcar)")
    p.add_argument("--fraction", type=float, default=0.3,
                   help="target missing fraction for mcar/mar (default: 0.3)")
    p.add_argument("--hazard", type=float, default=0.2,
                   help="per-stage dropout hazard for monotone (default: 0.2)")
    p.add_argument("--slope", type=float, default=1.0,
                   help="dependence of missingness on observed values (default: 1.0)")
    p.add_argument("--seed", type=int, default=0, help="amputation seed (default: 0)")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(fn=cmd_ampute)

    p = sub.add_parser("experiment", help="run a cross-fitted experiment from a JSON config")
    p.add_argument("spec", help="experiment config path (JSON)")
    p.add_argument("--out", default=None, help="output directory (default: from config)")
    p.add_argument("--force", action="store_true",
                   help="write into a nonempty output directory (default: refuse)")
    p.add_argument("--dry-run", action="store_true",
                   help="validate the config without computing (default: off)")
    p.add_argument("--threads", type=int, default=1, help="worker threads (default: 1)")
    p.set_defaults(fn=cmd_experiment)

    p = sub.add_parser("pi-diagram", help="redraw PI diagrams from a pi_points.csv")
    p.add_argument("points", help="pi_points.csv path")
    p.add_argument("--out", default=".", help="output directory or .svg path (default: .)")
    p.set_defaults(fn=cmd_pi_diagram)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValueError, Unsupported, KeyError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FileNotFoundError, FileExistsError, PermissionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (np.linalg.LinAlgError, FloatingPointError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
