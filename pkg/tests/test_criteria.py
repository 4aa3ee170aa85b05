import numpy as np
import pytest

from maskout.criteria import (
    ABSOLUTE,
    SQUARED,
    CriterionConfig,
    cramer_von_mises_distance,
    get_loss,
    kolmogorov_distance,
    mko_risk,
    moo_risk,
    moo_risk_variable,
    moobl_risk,
    mooen,
    moolc_risk,
    moort,
    moort_variable,
    moort_variable_sum,
    report_to_rows,
)
from maskout.dataset import ampute_mcar, as_monotone, from_arrays, standardize
from maskout.models import (
    ConditionalUnavailable,
    ImputationModel,
    fit_gaussian_em,
    fit_mean,
    fit_monotone,
    fit_moopm_empirical,
)
from maskout.patterns import ResponsePattern
from maskout.rng import substream


def P(s):
    return ResponsePattern.from_string(s)


def mcar_gaussian(n=500, rho=0.6, p=0.3, seed=0, d=2):
    cov = rho ** np.abs(np.subtract.outer(np.arange(d), np.arange(d)))
    rng = substream(seed, 0)
    X = rng.multivariate_normal(np.zeros(d), cov, size=n, method="cholesky")
    return ampute_mcar(X, p, seed=seed + 1).incomplete


class ConstantModel(ImputationModel):
    """Point mass at a fixed value."""

    label = "constant"

    def __init__(self, value: float):
        self.value = value

    def sample_marginal(self, j, row, r, rng, size=None):
        if size is None:
            return self.value
        return np.full(size, self.value)


class SpreadModel(ImputationModel):
    """N(0, sd^2) regardless of conditioning."""

    label = "spread"

    def __init__(self, sd: float):
        self.sd = sd

    def sample_marginal(self, j, row, r, rng, size=None):
        out = self.sd * rng.standard_normal(1 if size is None else size)
        return float(out[0]) if size is None else out


class ProbeModel(ImputationModel):
    """Records every (variable, pattern) query."""

    label = "probe"

    def __init__(self):
        self.calls = []

    def sample_marginal(self, j, row, r, rng, size=None):
        self.calls.append((j, r.to_string()))
        out = rng.standard_normal(1 if size is None else size)
        return float(out[0]) if size is None else out


class TestDistances:
    def test_kolmogorov_uniform_grid(self):
        # EDF of (i - 0.5)/n is 1/(2n) away from the diagonal everywhere
        n = 10
        s = (np.arange(1, n + 1) - 0.5) / n
        assert kolmogorov_distance(s) == pytest.approx(0.05)

    def test_kolmogorov_two_point_mass(self):
        s = np.array([0.0] * 50 + [1.0] * 50)
        assert kolmogorov_distance(s) == pytest.approx(0.5)

    def test_cvm_decreases_with_better_fit(self):
        good = (np.arange(1, 101) - 0.5) / 100
        bad = np.clip(good ** 3, 0, 1)
        assert cramer_von_mises_distance(good) < cramer_von_mises_distance(bad)

    def test_loss_registry(self):
        assert get_loss("squared") is SQUARED
        assert get_loss("absolute") is ABSOLUTE
        with pytest.raises(ValueError):
            get_loss("hinge")


class TestMooRisk:
    def test_bitwise_determinism(self):
        ds = standardize(mcar_gaussian(seed=1))
        model = fit_gaussian_em(ds)
        cfg = CriterionConfig(M=7, repeats=2, seed=42)
        a = moo_risk(model, ds, SQUARED, cfg)
        b = moo_risk(model, ds, SQUARED, cfg)
        assert a.total_risk == b.total_risk
        np.testing.assert_array_equal(a.per_variable, b.per_variable)

    def test_thread_count_does_not_change_output(self):
        ds = standardize(mcar_gaussian(seed=2))
        model = fit_gaussian_em(ds)
        cfg = CriterionConfig(M=5, seed=3)
        a = moo_risk(model, ds, SQUARED, cfg, threads=1)
        b = moo_risk(model, ds, SQUARED, cfg, threads=4)
        assert a.total_risk == b.total_risk

    def test_variable_wise_decomposition_exact(self):
        ds = standardize(mcar_gaussian(n=1000, seed=4, d=5, rho=0.4))
        model = fit_gaussian_em(ds)
        cfg = CriterionConfig(M=3, repeats=2, seed=5)
        total = moo_risk(model, ds, SQUARED, cfg)
        parts = [moo_risk_variable(model, ds, j, SQUARED, cfg) for j in range(5)]
        assert abs(sum(p.total_risk for p in parts) - total.total_risk) < 1e-12
        for j in range(5):
            assert parts[j].total_risk == pytest.approx(total.per_variable[j], abs=1e-15)

    def test_variable_never_observed(self):
        values = np.array([[1.0, np.nan]] * 10)
        ds = from_arrays(values, ~np.isnan(values))
        with pytest.raises(ValueError, match="never observed"):
            moo_risk_variable(ConstantModel(0.0), ds, 1, SQUARED, CriterionConfig())

    def test_d1_variable_wise_equals_total(self):
        values = substream(6, 0).standard_normal((50, 1))
        ds = from_arrays(values, np.ones_like(values, dtype=bool))
        cfg = CriterionConfig(M=4, seed=7)
        model = ConstantModel(0.0)
        assert moo_risk_variable(model, ds, 0, SQUARED, cfg).total_risk == \
               moo_risk(model, ds, SQUARED, cfg).total_risk

    def test_point_mass_at_truth_has_zero_risk(self):
        # noiseless linear data: the fitted conditional is exact
        x1 = substream(8, 0).standard_normal(200)
        values = np.column_stack([x1, 2 * x1])
        mask = np.ones_like(values, dtype=bool)
        ds = from_arrays(values, mask)
        model = fit_moopm_empirical(ds, min_rows=5)
        rep = moo_risk(model, ds, SQUARED, CriterionConfig(M=10, seed=9))
        assert rep.total_risk < 1e-12

    def test_skipped_entries_counted_and_excluded(self):
        ds = standardize(mcar_gaussian(n=200, seed=10))
        model = fit_moopm_empirical(ds, min_rows=10_000)  # nothing fitted

        with pytest.raises(ValueError, match="skipped"):
            moo_risk(model, ds, SQUARED, CriterionConfig(M=2, seed=1))

    def test_partial_skip_reported(self):
        # make exactly one conditional available
        ds = standardize(mcar_gaussian(n=400, seed=11))
        model = fit_moopm_empirical(ds, min_rows=5)
        full = moo_risk(model, ds, SQUARED, CriterionConfig(M=2, seed=1))
        some_key = next(iter(model.conditionals))
        del model.conditionals[some_key]
        rep = moo_risk(model, ds, SQUARED, CriterionConfig(M=2, seed=1))
        assert rep.n_skipped > 0
        assert rep.n_evaluated + rep.n_skipped == full.n_evaluated
        # skipped-set fingerprints flag the models as not directly comparable
        assert rep.extras["skipped_digest"] != full.extras["skipped_digest"]

    def test_report_rows_schema(self):
        ds = standardize(mcar_gaussian(n=100, seed=12))
        rep = moo_risk(ConstantModel(0.0), ds, SQUARED, CriterionConfig(M=2, seed=1))
        rows = report_to_rows(rep, ds.column_names)
        assert rows[-1]["variable"] == "total"
        assert {r["variable"] for r in rows} == {"x1", "x2", "total"}


class TestMko:
    def test_k1_equals_moo_exactly(self):
        ds = standardize(mcar_gaussian(n=150, seed=13, d=3, rho=0.5))
        model = fit_gaussian_em(ds)
        cfg = CriterionConfig(M=4, repeats=2, seed=14)
        a = moo_risk(model, ds, SQUARED, cfg)
        b = mko_risk(model, ds, 1, SQUARED, cfg)
        assert a.total_risk == b.total_risk
        np.testing.assert_array_equal(a.per_variable, b.per_variable)

    def test_loss_count_identity_single_rows(self):
        from math import comb
        rng = substream(15, 0)
        for trial in range(20):
            d = int(rng.integers(2, 9))
            L = int(rng.integers(1, d + 1))
            K = int(rng.integers(1, d + 1))
            obs = rng.choice(d, size=L, replace=False)
            mask = np.zeros((1, d), dtype=bool)
            mask[0, obs] = True
            values = rng.standard_normal((1, d))
            ds = from_arrays(values, mask)
            rep = mko_risk(ConstantModel(0.0), ds, K, SQUARED, CriterionConfig(M=1, seed=1))
            expected = sum(comb(L, k) * k for k in range(1, min(K, L) + 1))
            assert rep.n_evaluated == expected

    def test_counts_for_three_and_two_observed(self):
        # L=3, K=2: 3 single maskings + 3 pairs scoring 2 variables each = 9;
        # L=2, K=2: 2 singles + the one pair scoring 2 = 4 (the general
        # count formula, sum_k C(L,k)*k)
        values = substream(16, 0).standard_normal((1, 3))
        ds = from_arrays(values, np.ones((1, 3), dtype=bool))
        rep = mko_risk(ConstantModel(0.0), ds, 2, SQUARED, CriterionConfig(M=1, seed=1))
        assert rep.n_evaluated == 9
        mask = np.array([[True, True, False]])
        ds2 = from_arrays(values, mask)
        rep2 = mko_risk(ConstantModel(0.0), ds2, 2, SQUARED, CriterionConfig(M=1, seed=1))
        assert rep2.n_evaluated == 4

    def test_mao_is_k_equal_d(self):
        ds = standardize(mcar_gaussian(n=120, seed=17, d=3, rho=0.3))
        model = fit_gaussian_em(ds)
        rep = mko_risk(model, ds, 3, SQUARED, CriterionConfig(M=3, seed=18))
        assert rep.n_evaluated > 0


class TestMoort:
    def test_ranks_are_in_unit_interval_and_uniformish(self):
        ds = standardize(mcar_gaussian(n=800, seed=19))
        model = fit_gaussian_em(ds)
        rep = moort(model, ds, CriterionConfig(M=100, seed=20))
        assert 0.0 <= rep.total_risk <= 0.2

    def test_point_mass_model_is_far_from_uniform(self):
        ds = standardize(mcar_gaussian(n=800, seed=21))
        rep = moort(ConstantModel(0.0), ds, CriterionConfig(M=50, seed=22))
        assert rep.total_risk >= 0.3

    def test_stochastic_rank_close_to_plain_on_tie_free_draws(self):
        ds = standardize(mcar_gaussian(n=300, seed=23))
        model = fit_gaussian_em(ds)
        M = 40
        plain = moort(model, ds, CriterionConfig(M=M, seed=24, discrete_rank=False))
        stoch = moort(model, ds, CriterionConfig(M=M, seed=24, discrete_rank=True))
        # continuous draws are tie-free, so per-entry ranks differ by < 1/(M+1)
        # and the sup-distance to uniform moves by at most that much
        assert abs(plain.total_risk - stoch.total_risk) <= 1.0 / (M + 1) + 1e-12

    def test_resamples_variable_when_unavailable(self):
        ds = standardize(mcar_gaussian(n=400, seed=25))
        model = fit_moopm_empirical(ds, min_rows=5)
        # drop one conditional; rows choosing it must fall through to the other
        key = (P("01").bits, 0)
        del model.conditionals[key]
        rep = moort(model, ds, CriterionConfig(M=10, seed=26))
        complete_rows = int(ds.mask.all(axis=1).sum())
        assert rep.n_evaluated >= complete_rows

    def test_variable_wise_and_sum(self):
        ds = standardize(mcar_gaussian(n=400, seed=27))
        model = fit_gaussian_em(ds)
        cfg = CriterionConfig(M=30, seed=28)
        parts = [moort_variable(model, ds, j, cfg).total_risk for j in range(2)]
        total = moort_variable_sum(model, ds, cfg)
        assert total.total_risk == pytest.approx(sum(parts))
        assert all(p < 0.1 for p in parts)  # correct model: each near zero

    def test_needs_m_at_least_2(self):
        ds = standardize(mcar_gaussian(n=50, seed=29))
        with pytest.raises(ValueError, match="M >= 2"):
            moort(ConstantModel(0.0), ds, CriterionConfig(M=1, seed=1))


class TestMooen:
    def test_deterministic_model_spread_term_zero_and_equals_mae(self):
        ds = standardize(mcar_gaussian(n=300, seed=30))
        model = fit_mean(ds)
        cfg = CriterionConfig(M=10, seed=31)
        rep = mooen(model, ds, cfg)
        assert rep.extras["spread_term"] == 0.0
        mae = moo_risk(model, ds, ABSOLUTE, cfg)
        assert rep.total_risk == pytest.approx(mae.total_risk, abs=1e-12)

    def test_spread_term_increases_with_model_variance(self):
        ds = standardize(mcar_gaussian(n=200, seed=32))
        cfg = CriterionConfig(M=40, seed=33)
        spreads = [mooen(SpreadModel(sd), ds, cfg).extras["spread_term"]
                   for sd in (0.0, 0.5, 1.0, 2.0)]
        assert spreads[0] == 0.0
        assert all(a < b for a, b in zip(spreads, spreads[1:]))

    def test_correct_model_near_zero(self):
        ds = standardize(mcar_gaussian(n=1200, seed=34))
        model = fit_gaussian_em(ds)
        rep = mooen(model, ds, CriterionConfig(M=60, seed=35))
        assert abs(rep.total_risk) < 0.05

    def test_overdispersed_vs_underdispersed_sign(self):
        ds = standardize(mcar_gaussian(n=400, seed=36))
        cfg = CriterionConfig(M=60, seed=37)
        under = mooen(ConstantModel(0.0), ds, cfg).total_risk
        over = mooen(SpreadModel(4.0), ds, cfg).total_risk
        assert under > 0.0
        assert over < 0.0


class TestMonotoneCriteria:
    def _monotone_ds(self, n=600, d=4, rho=0.7, seed=38):
        from maskout.dataset import ampute_monotone_dropout
        rng = substream(seed, 0)
        X = np.empty((n, d))
        X[:, 0] = rng.standard_normal(n)
        for t in range(1, d):
            X[:, t] = rho * X[:, t - 1] + np.sqrt(1 - rho ** 2) * rng.standard_normal(n)
        gt = ampute_monotone_dropout(X, 0.25, seed=seed + 1, slope=0.6)
        return as_monotone(gt.incomplete)

    def test_moolc_masks_only_latest(self):
        values = np.array([[1.3, 2.5, 1.5, 3.1, np.nan]])
        mask = ~np.isnan(values)
        mds = as_monotone(from_arrays(values, mask))
        probe = ProbeModel()
        moolc_risk(probe, mds, "loss", CriterionConfig(M=1, seed=1))
        assert probe.calls == [(3, "11100")]

    def test_moobl_blocks_later_variables(self):
        values = np.array([[1.3, 2.5, 1.5, 3.1, np.nan]])
        mask = ~np.isnan(values)
        mds = as_monotone(from_arrays(values, mask))
        probe = ProbeModel()
        moobl_risk(probe, mds, "loss", CriterionConfig(M=1, seed=1))
        assert sorted(probe.calls) == [(0, "00000"), (1, "10000"),
                                       (2, "11000"), (3, "11100")]

    def test_d1_moobl_equals_moolc(self):
        values = substream(39, 0).standard_normal((40, 1))
        mds = as_monotone(from_arrays(values, np.ones_like(values, dtype=bool)))
        cfg = CriterionConfig(M=5, seed=40)
        a = moolc_risk(ConstantModel(0.0), mds, "loss", cfg)
        b = moobl_risk(ConstantModel(0.0), mds, "loss", cfg)
        assert a.total_risk == b.total_risk

    def test_ncmv_passes_moolc_rank(self):
        mds = self._monotone_ds(n=1500, seed=41)
        model = fit_monotone(mds, "ncmv")
        rep = moolc_risk(model, mds, "rank", CriterionConfig(M=100, seed=42))
        assert rep.total_risk < 0.07

    def test_acmv_passes_moobl_rank(self):
        mds = self._monotone_ds(n=1500, seed=43)
        model = fit_monotone(mds, "acmv")
        rep = moobl_risk(model, mds, "rank", CriterionConfig(M=100, seed=44))
        assert rep.total_risk < 0.07

    def test_t0_rows_contribute_nothing(self):
        values = np.array([[np.nan, np.nan], [1.0, 2.0], [0.5, np.nan]])
        mask = ~np.isnan(values)
        mds = as_monotone(from_arrays(values, mask))
        rep = moolc_risk(ConstantModel(0.0), mds, "loss", CriterionConfig(M=2, seed=1))
        assert rep.n_evaluated == 2  # the t=0 row is excluded

    def test_energy_mode_runs(self):
        mds = self._monotone_ds(n=300, seed=45)
        model = fit_monotone(mds, "acmv")
        rep = moobl_risk(model, mds, "energy", CriterionConfig(M=30, seed=46))
        assert abs(rep.total_risk) < 0.3


class TestUnavailableMkoSkip:
    def test_mko_skips_unavailable_masks(self):
        ds = standardize(mcar_gaussian(n=300, seed=47))

        class FlakyModel(ImputationModel):
            label = "flaky"

            def sample_marginal(self, j, row, r, rng, size=None):
                if j == 0:
                    raise ConditionalUnavailable(r, j)
                out = rng.standard_normal(1 if size is None else size)
                return float(out[0]) if size is None else out

        rep = mko_risk(FlakyModel(), ds, 2, SQUARED, CriterionConfig(M=2, seed=48))
        assert rep.n_skipped > 0 and rep.n_evaluated > 0
