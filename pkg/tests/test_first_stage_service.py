'''
Tests the proxy first stage: likelihood, maximum likelihood fit and influence values.
'''
import numpy as np
import pytest
from scipy import linalg, stats

from app.services.dataset_service import dataset_from_columns
from app.services.first_stage_service import (
    ProxyModel,
    conditional_cdf,
    control_values,
    fit_mle,
    fixed_first_stage,
    influence_check,
    loglik,
    score,
    theta_jacobian,
)
from app.utils.errors import ConfigError, DimensionMismatch, RankDeficientDesign


def test_loglik_matches_gaussian_density(continuous_sample):
    data, _ = continuous_sample
    beta = np.array([0.1, 0.4, 0.9, 0.2])
    loc = beta[0] + beta[1] * data.x + beta[2] * data.z[:, 0]
    expected = np.sum(stats.norm.logpdf(data.w[:, 0], loc, np.exp(beta[3])))
    assert loglik(beta, data, ProxyModel()) == pytest.approx(expected, rel=1e-12)


def test_score_matches_finite_differences(continuous_sample):
    data, _ = continuous_sample
    model = ProxyModel()
    beta = np.array([0.1, 0.4, 0.9, 0.2])
    h = 1e-6
    numeric = np.array([
        (loglik(beta + h * e, data, model) - loglik(beta - h * e, data, model)) / (2 * h)
        for e in np.eye(4)
    ])
    np.testing.assert_allclose(score(beta, data, model), numeric, rtol=1e-5, atol=1e-4)


def test_mle_recovers_the_design(continuous_sample):
    data, oracle = continuous_sample
    fit = fit_mle(data, ProxyModel())
    assert fit.converged
    np.testing.assert_allclose(fit.beta_hat, oracle.beta, atol=0.25)
    assert np.max(np.abs(score(fit.beta_hat, data, fit.model))) <= 1e-8 * data.n
    assert fit.control_values.shape == (data.n, 1)
    assert fit.influence.shape == (data.n, 4)
    assert fit.to_dict()["d_v"] == 1


def test_influence_values_have_mean_zero(continuous_sample):
    data, _ = continuous_sample
    fit = fit_mle(data, ProxyModel())
    report = influence_check(fit, data, jackknife=0)
    assert report.mean_ok
    assert report.jackknife_ok is None
    assert report.passed


def test_influence_matches_leave_one_out(continuous_sample):
    data, _ = continuous_sample
    fit = fit_mle(data, ProxyModel(information="hessian"))
    report = influence_check(fit, data, jackknife=5, seed=1)
    assert len(report.jackknife_indices) == 5
    assert report.jackknife_median_error <= 0.05
    assert report.passed


def test_known_scale_is_least_squares(continuous_sample):
    data, _ = continuous_sample
    model = ProxyModel(fixed_scale=1.0)
    fit = fit_mle(data, model)
    design = np.column_stack([np.ones(data.n), data.x, data.z[:, 0]])
    expected, *_ = linalg.lstsq(design, data.w[:, 0])
    np.testing.assert_allclose(fit.beta_hat, expected, atol=1e-10)
    assert model.parameter_names() == ["location:1", "location:x", "location:z1"]


def test_indexed_scale_gives_two_controls(continuous_sample):
    data, _ = continuous_sample
    model = ProxyModel(scale_terms=("1", "x"))
    assert model.d_v == 2
    fit = fit_mle(data, model)
    assert fit.control_values.shape == (data.n, 2)
    jac = theta_jacobian(fit, data)
    assert jac.shape == (data.n, 2, 5)
    np.testing.assert_array_equal(jac[:, 1, 3:], np.column_stack([np.ones(data.n), data.x]))


def test_control_values_at_a_fixed_treatment(continuous_sample):
    data, _ = continuous_sample
    beta = np.array([0.0, 0.5, 1.0, 0.1])
    v = control_values(beta, data, ProxyModel(), x_override=2.0)
    np.testing.assert_allclose(v[:, 0], 1.0 + data.z[:, 0])
    with pytest.raises(DimensionMismatch):
        control_values(beta[:3], data, ProxyModel())


def test_fixed_first_stage_has_no_influence(continuous_sample):
    data, oracle = continuous_sample
    fs = fixed_first_stage(data, ProxyModel(), oracle.beta)
    assert fs.degenerate
    assert not fs.influence.any()
    np.testing.assert_allclose(fs.control_values, oracle.control_values)


def test_conditional_cdf_standardizes(continuous_sample):
    data, _ = continuous_sample
    fs = fixed_first_stage(data, ProxyModel(), [0.0, 0.0, 0.0, np.log(2.0)])
    assert conditional_cdf(2.0, 0.3, [[0.1]], fs) == pytest.approx(0.841345, abs=1e-6)


def test_rank_deficient_design():
    x = np.linspace(-1, 1, 40)
    data = dataset_from_columns({"y": x, "x": x, "z1": 2 * x, "w1": np.sin(x)}, x_discrete=False)
    with pytest.raises(RankDeficientDesign):
        fit_mle(data, ProxyModel())


def test_model_validation():
    with pytest.raises(ConfigError):
        ProxyModel(location_terms=("x", "z1"))
    with pytest.raises(ConfigError):
        ProxyModel(information="sandwich")
    with pytest.raises(ConfigError):
        ProxyModel(fixed_scale=-1.0)
