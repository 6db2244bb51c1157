'''
Tests the flexible parametric and naive ASF estimators.
'''
import numpy as np
import pytest

from app.services.dataset_service import TrimmingSet
from app.services.first_stage_service import ProxyModel, fit_mle, fixed_first_stage
from app.services.parametric_service import (
    KroneckerBasis,
    asf_conditional,
    asf_naive,
    asf_unconditional,
    fit_ols,
    parametric_influence,
    variance_parametric,
)
from app.services.simulation_service import DgpSpec, generate, true_asf
from app.utils.errors import ConfigError, SingularSecondMoment

LINEAR = KroneckerBasis(p1_terms=("1", "x"), p2_terms=("1", "v"))


def test_kronecker_evaluation():
    x = np.array([2.0, -1.0])
    v = np.array([[3.0], [0.5]])
    np.testing.assert_array_equal(LINEAR.evaluate(x, v), [[1, 3, 2, 6], [1, 0.5, -1, -0.5]])
    assert LINEAR.names() == ["1*1", "1*v", "x*1", "x*v"]
    deriv = KroneckerBasis(p1_terms=("1", "x"), p2_terms=("1", "v", "v^2")).derivative_v(x, v)
    np.testing.assert_array_equal(deriv[0, :, 0], [0, 1, 6, 0, 2, 12])


def test_levels_basis():
    assert KroneckerBasis.for_levels([1.0, 0.0]).p1_terms == ("1", "x==1")
    with pytest.raises(ConfigError):
        KroneckerBasis(p1_terms=("x",))
    with pytest.raises(ConfigError):
        KroneckerBasis(p1_terms=("1", "z1"))


def test_fit_matches_least_squares(continuous_sample):
    data, oracle = continuous_sample
    fs = fixed_first_stage(data, ProxyModel(), oracle.beta)
    basis = KroneckerBasis()
    fit = fit_ols(data, fs, basis)
    expected, *_ = np.linalg.lstsq(basis.evaluate(data.x, fs.control_values), data.y, rcond=None)
    np.testing.assert_allclose(fit.gamma_hat, expected, rtol=1e-8, atol=1e-10)


def test_exact_surface_gives_exact_asf(noiseless_continuous):
    data, fs, oracle = noiseless_continuous
    fit = fit_ols(data, fs, LINEAR)
    values = oracle.m0(1.5, oracle.control_values[:, 0])

    est = asf_unconditional(1.5, fit, fs)
    assert est.mu_hat == pytest.approx(np.mean(values), abs=1e-8)
    # no residual noise and a known first stage leave only the averaging term
    assert est.sigma2_hat == pytest.approx(np.var(values), rel=1e-6)

    mask = TrimmingSet().indicator(data)
    est = asf_conditional(1.5, fit, fs, TrimmingSet(), data)
    assert est.mu_hat == pytest.approx(np.mean(values[mask]), abs=1e-8)
    assert est.estimator == "parametric-conditional"


def test_variance_options(continuous_sample):
    data, _ = continuous_sample
    fs = fit_mle(data, ProxyModel())
    fit = fit_ols(data, fs, KroneckerBasis())
    at_x0 = variance_parametric(1.0, fit, fs, data, TrimmingSet())
    observed = variance_parametric(1.0, fit, fs, data, TrimmingSet(), derivative_at="observed")
    assert at_x0 > 0 and observed > 0
    with pytest.raises(ConfigError):
        variance_parametric(1.0, fit, fs, derivative_at="observed")
    with pytest.raises(ConfigError):
        variance_parametric(1.0, fit, fs, data, derivative_at="elsewhere")


def test_singular_second_moment(continuous_sample):
    data, oracle = continuous_sample
    small = data.take(np.arange(6))
    fs = fixed_first_stage(small, ProxyModel(), oracle.beta)
    with pytest.raises(SingularSecondMoment):
        fit_ols(small, fs, KroneckerBasis())
    fs = fixed_first_stage(data, ProxyModel(), oracle.beta)
    with pytest.raises(SingularSecondMoment):
        fit_ols(data, fs, KroneckerBasis(p1_terms=("1", "x"), p2_terms=("1", "v", "v1")))


def test_naive_is_exact_without_endogeneity(noiseless_continuous):
    data, _, _ = noiseless_continuous
    est = asf_naive(0.7, data.with_outcome(2 + 3 * data.x))
    assert est.mu_hat == pytest.approx(2 + 3 * 0.7, abs=1e-10)
    assert est.sigma2_hat < 1e-16


def test_control_removes_the_naive_bias():
    spec = DgpSpec(name="DGP-C", n=4000, seed=21)
    data, _ = generate(spec)
    fs = fit_mle(data, ProxyModel())
    fit = fit_ols(data, fs, KroneckerBasis())
    truth = true_asf(spec, 1.0)
    controlled = asf_conditional(1.0, fit, fs, TrimmingSet(), data)
    naive = asf_naive(1.0, data)
    assert abs(controlled.mu_hat - truth) < 0.25
    assert abs(naive.mu_hat - truth) > 0.5


@pytest.mark.parametrize("derivative_at, tolerance", [("observed", 1e-4), ("x0", 0.1)])
def test_first_stage_row_matches_the_numerical_derivative(derivative_at, tolerance):
    data, _ = generate(DgpSpec(name="DGP-P", n=1000, seed=8))
    model = ProxyModel()
    fs = fit_mle(data, model)
    basis = KroneckerBasis()
    mask = TrimmingSet().indicator(data)
    _, row = parametric_influence(1.0, fit_ols(data, fs, basis), fs, data, mask, derivative_at)

    def mu(beta):
        shifted = fixed_first_stage(data, model, beta)
        return asf_conditional(1.0, fit_ols(data, shifted, basis), shifted, mask).mu_hat

    h = 1e-5
    numeric = np.array([
        (mu(fs.beta_hat + h * e) - mu(fs.beta_hat - h * e)) / (2 * h) for e in np.eye(len(fs.beta_hat))
    ])
    assert np.linalg.norm(row - numeric) <= tolerance * np.linalg.norm(numeric)


def test_variance_is_the_mean_squared_influence(continuous_sample):
    data, _ = continuous_sample
    fs = fit_mle(data, ProxyModel())
    fit = fit_ols(data, fs, KroneckerBasis())
    psi, row = parametric_influence(0.5, fit, fs)
    assert row.shape == (4,)
    assert variance_parametric(0.5, fit, fs) == pytest.approx(np.mean(psi ** 2))
