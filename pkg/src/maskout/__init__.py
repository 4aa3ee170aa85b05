"""Masking criteria for evaluating, comparing, and learning missing-data
imputation models: the plain masking risk and its rank-transform and
energy-distance variants, the masked log-likelihood with maximum-likelihood
training and BIC selection, the multiply-robust mean estimator, and the
monotone-missingness variants, plus a reproducible experiment harness."""

from .criteria import (
    ABSOLUTE,
    SQUARED,
    CriterionConfig,
    CriterionReport,
    mko_risk,
    moo_risk,
    moo_risk_variable,
    moobl_risk,
    mooen,
    moolc_risk,
    moort,
    moort_variable,
)
from .dataset import (
    FoldAssignment,
    GroundTruthDataset,
    IncompleteDataset,
    MonotoneDataset,
    ampute_mar,
    ampute_mcar,
    as_monotone,
    from_arrays,
    load_csv,
    make_folds,
    standardize,
    write_csv,
)
from .likelihood import (
    GradientAscentConfig,
    SeparableGaussianFamily,
    bic,
    fit_moo_mle_gradient,
    fit_separable_gaussian_closed_form,
    fit_shared_variance,
    moo_loglik,
    moo_loglik_mc,
    sandwich_covariance,
)
from .models import (
    ConditionalUnavailable,
    GaussianJointModel,
    ImputationModel,
    Unsupported,
    fit_ccmv,
    fit_gaussian_em,
    fit_hot_deck,
    fit_mean,
    fit_monotone,
    fit_moopm_empirical,
    make_model,
)
from .patterns import ResponsePattern, donor_patterns, mask, maskable_subsets, unmask

__version__ = "0.1.0"
