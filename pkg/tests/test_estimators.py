import numpy as np
import pytest

from maskout.dataset import from_arrays
from maskout.estimators import (
    OddsModel,
    OutcomeModel,
    fit_odds,
    fit_outcome,
    ipw_estimate,
    mr_estimate,
    ra_estimate,
)
from maskout.patterns import ResponsePattern
from maskout.rng import substream


def P(s):
    return ResponsePattern.from_string(s)


def mar_on_x2(n=2000, seed=0, alpha=1.0, beta=1.0, a=-0.5, b=1.0, sigma=0.8):
    """x2 always observed; x1 = alpha + beta*x2 + noise, missing with
    probability logistic(a + b*x2). The masking-optimal conditional
    independence holds because missingness of x1 depends only on x2."""
    rng = substream(seed, 0)
    x2 = rng.standard_normal(n)
    x1 = alpha + beta * x2 + sigma * rng.standard_normal(n)
    p_missing = 1.0 / (1.0 + np.exp(-(a + b * x2)))
    missing = rng.random(n) < p_missing
    values = np.column_stack([x1, x2])
    mask = np.ones((n, 2), dtype=bool)
    mask[missing, 0] = False
    return from_arrays(values, mask), values


class TestNuisances:
    def test_odds_recover_logistic_coefficients(self):
        a, b = -0.5, 1.0
        ds, _ = mar_on_x2(n=8000, seed=1, a=a, b=b)
        odds = fit_odds(ds, target=0)
        fn = odds.fns[P("01").bits]
        assert fn.kind == "logistic"
        n_eff = ds.n
        se = 3.0 / np.sqrt(n_eff)  # generous scale for logistic SEs here
        assert abs(fn.intercept - a) < 4 * se + 0.1
        assert abs(fn.coef[0] - b) < 4 * se + 0.1

    def test_balanced_missingness_gives_unit_odds(self):
        # P(missing | x) = 1/2 everywhere: odds should be about 1
        ds, _ = mar_on_x2(n=8000, seed=2, a=0.0, b=0.0)
        odds = fit_odds(ds, target=0)
        rng = substream(3, 0)
        vals = [odds.evaluate(np.array([np.nan, x2]), P("01"))
                for x2 in rng.standard_normal(50)]
        assert np.quantile(np.abs(np.log(vals)), 0.9) < 0.2

    def test_ipw_moment_identity_with_oracle_odds(self):
        a, b = -0.5, 1.0
        ds, complete = mar_on_x2(n=60_000, seed=4, a=a, b=b)
        oracle = OddsModel.from_callables(0, {
            P("01").bits: lambda row: np.exp(a + b * row[1]),
        })
        patterns = ds.row_patterns()
        obs = np.array([R.is_observed(0) for R in patterns])
        lhs = np.mean([
            oracle.evaluate(ds.values[i], P("01")) * ds.values[i, 0] if obs[i] else 0.0
            for i in range(ds.n)
        ])
        rhs = np.mean(np.where(~obs, complete[:, 0], 0.0))  # identified target
        assert abs(lhs - rhs) < 0.05

    def test_outcome_recovers_linear_truth(self):
        alpha, beta = 1.0, 1.0
        ds, _ = mar_on_x2(n=8000, seed=5, alpha=alpha, beta=beta)
        outcome = fit_outcome(ds, target=0)
        fn = outcome.fns[P("01").bits]
        donor = int(ds.mask[:, 0].sum())
        se = 0.8 / np.sqrt(donor)
        assert abs(fn.intercept - alpha) < 4 * se
        assert abs(fn.coef[0] - beta) < 4 * se

    def test_empty_pattern_key_is_intercept_only(self):
        rng = substream(6, 0)
        x1 = rng.standard_normal(300) + 2.0
        values = np.column_stack([x1])
        mask = np.ones((300, 1), dtype=bool)
        mask[:100, 0] = False
        ds = from_arrays(values, mask)
        outcome = fit_outcome(ds, target=0)
        assert outcome.fns[0].feature_idx == ()
        assert outcome.fns[0].intercept == pytest.approx(x1[100:].mean())

    def test_constant_target_gives_zero_slope(self):
        rng = substream(7, 0)
        x2 = rng.standard_normal(400)
        values = np.column_stack([np.full(400, 3.0), x2])
        mask = np.ones((400, 2), dtype=bool)
        mask[:150, 0] = False
        ds = from_arrays(values, mask)
        outcome = fit_outcome(ds, target=0)
        assert abs(outcome.fns[P("01").bits].coef[0]) < 1e-10


class TestEstimators:
    def test_complete_data_gives_sample_mean(self):
        rng = substream(8, 0)
        values = rng.standard_normal((200, 2)) + 1.5
        ds = from_arrays(values, np.ones((200, 2), dtype=bool))
        odds = fit_odds(ds, target=0)
        outcome = fit_outcome(ds, target=0)
        mean = values[:, 0].mean()
        assert mr_estimate(ds, odds, outcome).mu_hat == pytest.approx(mean)
        assert ipw_estimate(ds, odds).mu_hat == pytest.approx(mean)
        assert ra_estimate(ds, outcome).mu_hat == pytest.approx(mean)

    def test_algebraic_identity(self):
        # ipw and ra both carry the observed-part term, so recovering mr
        # subtracts it once along with the odds-weighted outcome prediction
        ds, _ = mar_on_x2(n=1500, seed=9)
        odds = fit_odds(ds, target=0)
        outcome = fit_outcome(ds, target=0)
        mr = mr_estimate(ds, odds, outcome).mu_hat
        ipw = ipw_estimate(ds, odds).mu_hat
        ra = ra_estimate(ds, outcome).mu_hat
        patterns = ds.row_patterns()
        correction = 0.0
        for i, R in enumerate(patterns):
            if R.is_observed(0):
                r = R.mask(0)
                correction += ds.values[i, 0] + \
                    odds.evaluate(ds.values[i], r) * outcome.evaluate(ds.values[i], r)
        correction /= ds.n
        assert mr == pytest.approx(ipw + ra - correction, abs=1e-10)

    def test_ipw_equals_mr_with_zero_outcome(self):
        ds, _ = mar_on_x2(n=800, seed=10)
        odds = fit_odds(ds, target=0)
        zero = OutcomeModel.from_callables(0, {P("01").bits: lambda row: 0.0,
                                               0: lambda row: 0.0})
        assert mr_estimate(ds, odds, zero).mu_hat == \
               pytest.approx(ipw_estimate(ds, odds).mu_hat)

    def test_ra_equals_mr_with_zero_odds(self):
        ds, _ = mar_on_x2(n=800, seed=11)
        outcome = fit_outcome(ds, target=0)
        zero = OddsModel.from_callables(0, {P("01").bits: lambda row: 0.0,
                                            0: lambda row: 0.0})
        assert mr_estimate(ds, zero, outcome).mu_hat == \
               pytest.approx(ra_estimate(ds, outcome).mu_hat, abs=1e-12)

    def test_empirical_influence_mean_is_zero(self):
        ds, _ = mar_on_x2(n=1000, seed=12)
        odds = fit_odds(ds, target=0)
        outcome = fit_outcome(ds, target=0)
        rep = mr_estimate(ds, odds, outcome)
        # per-pattern sums add to the estimate, so the centered influence
        # contributions average to zero by construction
        assert sum(rep.per_pattern.values()) == pytest.approx(rep.mu_hat, abs=1e-12)

    def test_missing_nuisance_key_with_rows_present(self):
        ds, _ = mar_on_x2(n=500, seed=13)
        odds = fit_odds(ds, target=0)
        empty = OutcomeModel(target=0, fns={})
        with pytest.raises(KeyError):
            mr_estimate(ds, odds, empty)


class TestRobustnessGrid:
    def test_consistency_signature(self):
        # both correct / odds only / outcome only: consistent;
        # both wrong: biased. 60 replicates keep this quick; the acceptance
        # suite runs the full 200.
        alpha, beta = 1.0, 1.0
        mu_true = alpha  # E[x1] = alpha + beta * E[x2] = alpha
        reps = 60
        cells = {"both": [], "odds_only": [], "outcome_only": [], "neither": []}
        for rep in range(reps):
            ds, _ = mar_on_x2(n=1500, seed=2000 + rep, alpha=alpha, beta=beta)
            odds_ok = fit_odds(ds, target=0)
            odds_bad = fit_odds(ds, target=0, intercept_only=True)
            out_ok = fit_outcome(ds, target=0)
            out_bad = fit_outcome(ds, target=0, intercept_only=True)
            cells["both"].append(mr_estimate(ds, odds_ok, out_ok).mu_hat)
            cells["odds_only"].append(mr_estimate(ds, odds_ok, out_bad).mu_hat)
            cells["outcome_only"].append(mr_estimate(ds, odds_bad, out_ok).mu_hat)
            cells["neither"].append(mr_estimate(ds, odds_bad, out_bad).mu_hat)
        for name in ("both", "odds_only", "outcome_only"):
            est = np.array(cells[name])
            se = est.std(ddof=1) / np.sqrt(reps)
            assert abs(est.mean() - mu_true) <= 3 * se, name
        est = np.array(cells["neither"])
        se = est.std(ddof=1) / np.sqrt(reps)
        assert abs(est.mean() - mu_true) > 3 * se
