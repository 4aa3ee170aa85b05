import numpy as np
import pytest
from scipy.stats import chisquare

from maskout.dataset import ampute_mcar, as_monotone, from_arrays, standardize
from maskout.models import (
    ConditionalUnavailable,
    GaussianJointModel,
    PatternRegressionModel,
    Unsupported,
    fit_ccmv,
    fit_gaussian_em,
    fit_hot_deck,
    fit_mean,
    fit_monotone,
    fit_moopm_empirical,
    make_model,
)
from maskout.patterns import ResponsePattern, all_patterns
from maskout.rng import substream


def P(s):
    return ResponsePattern.from_string(s)


def mcar_gaussian(n=1000, rho=0.6, p=0.3, seed=0, d=2):
    cov = rho ** np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    rng = substream(seed, 0)
    X = rng.multivariate_normal(np.zeros(d), cov, size=n, method="cholesky")
    return ampute_mcar(X, p, seed=seed + 1).incomplete


class TestMeanImputer:
    def test_unstandardized_column_mean(self):
        ds = from_arrays([[2.0], [4.0], [np.nan], [6.0]],
                         [[True], [True], [False], [True]])
        model = fit_mean(ds)
        assert model.sample_marginal(0, ds.values[0], P("0"), substream(0)) == 4.0

    def test_standardized_data_imputes_near_zero(self):
        ds = standardize(mcar_gaussian(seed=3))
        model = fit_mean(ds)
        val = model.sample_marginal(1, ds.values[0], P("10"), substream(0))
        assert abs(val) < 1e-10

    def test_no_density(self):
        ds = mcar_gaussian(seed=4)
        with pytest.raises(Unsupported):
            fit_mean(ds).log_density_marginal(0.0, 0, ds.values[0], P("01"))

    def test_parameter_count(self):
        assert fit_mean(mcar_gaussian(seed=5)).parameter_count() == 2


class TestGaussianEm:
    def test_complete_data_single_step(self):
        rng = substream(10, 0)
        X = rng.standard_normal((200, 3))
        ds = from_arrays(X, np.ones_like(X, dtype=bool))
        model = fit_gaussian_em(ds)
        np.testing.assert_allclose(model.mean, X.mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(model.cov, np.cov(X.T, bias=True), atol=1e-10)

    def test_loglik_nondecreasing(self):
        ds = mcar_gaussian(n=400, seed=11)
        model = fit_gaussian_em(ds)
        trace = np.array(model.loglik_trace)
        assert (np.diff(trace) >= -1e-8).all()

    def test_recovers_correlation(self):
        ds = mcar_gaussian(n=5000, rho=0.6, seed=12)
        model = fit_gaussian_em(ds)
        rho_hat = model.cov[0, 1] / np.sqrt(model.cov[0, 0] * model.cov[1, 1])
        assert abs(rho_hat - 0.6) < 0.05

    def test_conditional_variance_below_marginal(self):
        ds = mcar_gaussian(n=800, rho=0.5, seed=13, d=3)
        model = fit_gaussian_em(ds)
        row = np.zeros(3)
        for r in all_patterns(3):
            for j in r.missing_indices():
                _, var = model.conditional_mean_var(j, row, r)
                assert var <= model.cov[j, j] + 1e-10

    def test_log_density_integrates_to_one(self):
        ds = mcar_gaussian(n=600, seed=14)
        model = fit_gaussian_em(ds)
        row = np.array([0.7, np.nan])
        grid = np.linspace(-12, 12, 4001)
        dens = np.exp([model.log_density_marginal(x, 1, row, P("10")) for x in grid])
        assert abs(np.trapezoid(dens, grid) - 1.0) < 1e-4

    def test_json_round_trip(self):
        model = fit_gaussian_em(mcar_gaussian(n=300, seed=15))
        back = GaussianJointModel.from_json_dict(model.to_json_dict())
        np.testing.assert_allclose(back.mean, model.mean)
        np.testing.assert_allclose(back.cov, model.cov)

    def test_needs_enough_rows(self):
        ds = from_arrays(np.zeros((2, 3)), np.ones((2, 3), dtype=bool))
        with pytest.raises(ValueError):
            fit_gaussian_em(ds)


class TestReproducibility:
    def test_same_seed_same_draws(self):
        ds = mcar_gaussian(n=500, seed=16)
        model = fit_gaussian_em(ds)
        row = np.array([0.5, np.nan])
        a = model.sample_marginal(1, row, P("10"), substream(99, 1, 2), size=8)
        b = model.sample_marginal(1, row, P("10"), substream(99, 1, 2), size=8)
        np.testing.assert_array_equal(a, b)

    def test_never_reads_outside_pattern(self):
        # garbage outside the conditioning pattern must not change the draw
        ds = mcar_gaussian(n=500, seed=17)
        for model in (fit_gaussian_em(ds), fit_moopm_empirical(ds, min_rows=5),
                      fit_hot_deck(ds, "nn", 5)):
            row1 = np.array([0.5, -123.0])
            row2 = np.array([0.5, 777.0])
            a = model.sample_marginal(1, row1, P("10"), substream(1, 2), size=5)
            b = model.sample_marginal(1, row2, P("10"), substream(1, 2), size=5)
            np.testing.assert_array_equal(a, b)


class TestHotDeck:
    def test_exact_match_k1(self):
        values = np.array([[1.0, 10.0], [2.0, 20.0], [3.0, 30.0]])
        ds = from_arrays(values, np.ones_like(values, dtype=bool))
        model = fit_hot_deck(ds, "nn", k_neighbors=1)
        v = model.sample_marginal(1, np.array([2.0, np.nan]), P("10"), substream(0))
        assert v == 20.0

    def test_random_variant_matches_empirical_distribution(self):
        vals = np.array([0.0, 1.0, 2.0, 3.0])
        values = np.tile(vals, 25).reshape(-1, 1)
        ds = from_arrays(values, np.ones_like(values, dtype=bool))
        model = fit_hot_deck(ds, "random")
        draws = model.sample_marginal(0, np.array([np.nan]), P("0"), substream(5), size=5000)
        counts = [np.sum(draws == v) for v in vals]
        assert chisquare(counts).pvalue > 1e-4

    def test_fallback_to_random_when_no_shared_coordinate(self):
        # the query pattern observes nothing, so no donor shares a coordinate
        ds = mcar_gaussian(n=200, seed=18)
        model = fit_hot_deck(ds, "nn", 3)
        model.sample_marginal(0, np.array([np.nan, np.nan]), P("00"), substream(1))
        assert model.n_fallbacks == 1

    def test_no_donor_for_variable(self):
        values = np.array([[1.0, np.nan], [2.0, np.nan]])
        mask = np.array([[True, False], [True, False]])
        model = fit_hot_deck(from_arrays(values, mask), "nn", 2)
        with pytest.raises(ConditionalUnavailable):
            model.sample_marginal(1, np.array([1.5, np.nan]), P("10"), substream(2))


def two_subpop_dataset(n=3000, seed=20):
    """Complete rows follow x1 = x2 + noise; rows missing x1 come from a
    different subpopulation, so the pattern-specific conditional differs from
    the marginal one."""
    rng = substream(seed, 0)
    n_a = n // 2
    x2_a = rng.standard_normal(n_a)
    x1_a = x2_a + 0.5 * rng.standard_normal(n_a)
    x2_b = rng.standard_normal(n - n_a)
    x1_b = -x2_b + 0.5 * rng.standard_normal(n - n_a)  # never observed
    values = np.concatenate([np.column_stack([x1_a, x2_a]),
                             np.column_stack([x1_b, x2_b])])
    mask = np.ones_like(values, dtype=bool)
    mask[n_a:, 0] = False
    return from_arrays(values, mask)


class TestMoopm:
    def test_fitted_conditional_uses_donor_pattern_only(self):
        ds = two_subpop_dataset()
        model = fit_moopm_empirical(ds, min_rows=10)
        cond = model.conditionals[(P("01").bits, 0)]
        # slope 1 from the complete-row subpopulation, not the mixture slope 0
        se = np.sqrt(cond.sigma2 / (cond.n_fit * 1.0))
        assert abs(cond.coef[0] - 1.0) < 3 * se
        assert abs(cond.coef[0] - 0.0) > 10 * se

    def test_coefficient_identity_with_direct_regression(self):
        ds = mcar_gaussian(n=600, seed=21)
        model = fit_moopm_empirical(ds, min_rows=5)
        # donor rows for key (pattern 01, variable 1) are exactly pattern 11
        complete = ds.mask.all(axis=1)
        X = np.column_stack([np.ones(complete.sum()), ds.values[complete, 1]])
        beta = np.linalg.lstsq(X, ds.values[complete, 0], rcond=None)[0]
        cond = model.conditionals[(P("01").bits, 0)]
        np.testing.assert_allclose([cond.intercept, cond.coef[0]], beta, atol=1e-10)

    def test_recovers_generating_conditional_within_3se(self):
        rho = 0.6
        ds = mcar_gaussian(n=4000, rho=rho, seed=22)
        model = fit_moopm_empirical(ds, min_rows=20)
        cond = model.conditionals[(P("01").bits, 0)]
        se = np.sqrt(cond.sigma2 / cond.n_fit)
        assert abs(cond.coef[0] - rho) < 3 * se

    def test_unavailable_key_raises(self):
        ds = mcar_gaussian(n=100, seed=23)
        model = fit_moopm_empirical(ds, min_rows=10_000)
        with pytest.raises(ConditionalUnavailable):
            model.sample_marginal(0, np.array([np.nan, 0.0]), P("01"), substream(0))

    def test_joint_draws_uncorrelated(self):
        ds = mcar_gaussian(n=2000, rho=0.8, seed=24, d=3)
        model = fit_moopm_empirical(ds, min_rows=10)
        row = np.array([np.nan, np.nan, 0.3])
        draws = model.sample_joint(P("110"), row, P("001"), substream(3), size=4000)
        corr = np.corrcoef(draws[:, 0], draws[:, 1])[0, 1]
        assert abs(corr) < 0.05

    def test_json_round_trip(self):
        ds = mcar_gaussian(n=400, seed=25)
        model = fit_moopm_empirical(ds, min_rows=5)
        back = PatternRegressionModel.from_json_dict(model.to_json_dict())
        r = P("01")
        x = np.array([np.nan, 0.4])
        assert back.log_density_marginal(0.2, 0, x, r) == \
               model.log_density_marginal(0.2, 0, x, r)


class TestCcmv:
    def test_needs_complete_rows(self):
        values = np.array([[1.0, np.nan], [np.nan, 2.0]] * 10)
        mask = ~np.isnan(values)
        with pytest.raises(ValueError, match="complete"):
            fit_ccmv(from_arrays(values, mask))

    def test_agrees_with_moopm_under_mcar(self):
        ds = mcar_gaussian(n=20_000, rho=0.5, seed=26)
        ccmv = fit_ccmv(ds)
        moopm = fit_moopm_empirical(ds, min_rows=20)
        key = (P("01").bits, 0)
        gap = abs(ccmv.conditionals[key].coef[0] - moopm.conditionals[key].coef[0])
        assert gap < 0.05

    def test_parameter_count(self):
        ds = mcar_gaussian(n=500, seed=27)
        model = fit_ccmv(ds)
        expected = sum(2 + len(P2.observed_indices())
                       for (bits, j) in model.conditionals
                       for P2 in [ResponsePattern(d=2, bits=bits)])
        assert model.parameter_count() == expected

    def test_lazy_key_for_unseen_pattern(self):
        ds = mcar_gaussian(n=500, seed=28, d=3)
        model = fit_ccmv(ds)
        model.conditionals.clear()  # force the lazy path
        v = model.sample_marginal(2, np.array([0.1, 0.2, np.nan]), P("110"), substream(1))
        assert np.isfinite(v)


def monotone_ar_dataset(n=2000, d=4, rho=0.7, seed=30, hazard=0.25, slope=0.8):
    from maskout.dataset import ampute_monotone_dropout
    rng = substream(seed, 0)
    X = np.empty((n, d))
    X[:, 0] = rng.standard_normal(n)
    for t in range(1, d):
        X[:, t] = rho * X[:, t - 1] + np.sqrt(1 - rho ** 2) * rng.standard_normal(n)
    gt = ampute_monotone_dropout(X, hazard, seed=seed + 1, slope=slope)
    return as_monotone(gt.incomplete), X


class TestMonotone:
    def test_acmv_donors_superset_of_ncmv(self):
        mds, _ = monotone_ar_dataset()
        ncmv = fit_monotone(mds, "ncmv")
        acmv = fit_monotone(mds, "acmv")
        for j in range(mds.d):
            assert acmv.stages[j].n_fit >= ncmv.stages[j].n_fit

    def test_d2_last_stage_coincides(self):
        mds, _ = monotone_ar_dataset(d=2)
        ncmv = fit_monotone(mds, "ncmv")
        acmv = fit_monotone(mds, "acmv")
        assert ncmv.stages[1].intercept == acmv.stages[1].intercept
        np.testing.assert_array_equal(ncmv.stages[1].coef, acmv.stages[1].coef)

    def test_acmv_matches_full_data_conditional_under_mar(self):
        # dropout hazard depends only on observed history (MAR), so the
        # available-case regressions estimate the complete-data conditionals
        mds, X = monotone_ar_dataset(n=6000, rho=0.7, seed=31)
        acmv = fit_monotone(mds, "acmv")
        for j in range(1, mds.d):
            Xd = np.column_stack([np.ones(len(X))] + [X[:, k] for k in range(j)])
            beta = np.linalg.lstsq(Xd, X[:, j], rcond=None)[0]
            got = np.concatenate([[acmv.stages[j].intercept], acmv.stages[j].coef])
            se = np.sqrt(acmv.stages[j].sigma2 / acmv.stages[j].n_fit)
            assert np.max(np.abs(got - beta)) < 4 * se + 0.05

    def test_rejects_wrong_next_variable(self):
        mds, _ = monotone_ar_dataset()
        model = fit_monotone(mds, "ncmv")
        with pytest.raises(ValueError, match="next variable"):
            model.sample_marginal(3, np.zeros(4), P("1100"), substream(0))

    def test_sequential_joint_sampling(self):
        mds, _ = monotone_ar_dataset(d=3)
        model = fit_monotone(mds, "acmv")
        row = np.array([0.5, np.nan, np.nan])
        draws = model.sample_joint(P("011"), row, P("100"), substream(2), size=100)
        assert np.isfinite(draws[:, 1]).all() and np.isfinite(draws[:, 2]).all()


class TestRegistry:
    def test_known_specs(self):
        ds = standardize(mcar_gaussian(n=300, seed=32))
        for spec in ("mean", "gaussian_em", "hot_deck_nn:k=5", "hot_deck_random",
                     "moopm:min_rows=5", "ccmv", "sep_gauss"):
            label, fit = make_model(spec)
            model = fit(ds)
            assert label == spec
            assert np.isfinite(model.sample_marginal(
                0, np.array([np.nan, 0.0]), P("01"), substream(0)))

    def test_unknown_model(self):
        with pytest.raises(ValueError, match="unknown model"):
            make_model("nope")

    def test_bad_option(self):
        with pytest.raises(ValueError, match="bad model option"):
            make_model("hot_deck_nn:k")
