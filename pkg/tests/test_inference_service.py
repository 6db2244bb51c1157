import math

import pytest

from app.services.inference_service import AsfEstimate, Rate, confidence_interval
from app.utils.errors import ConfigError


def test_interval_half_width():
    est = AsfEstimate(x0=0.0, mu_hat=0.0, sigma2_hat=1.0, rate=Rate.SQRT_N, n=100, estimator="test")
    assert est.ci[0] == pytest.approx(-0.195996, abs=1e-6)
    assert est.ci[1] == pytest.approx(0.195996, abs=1e-6)
    assert est.standard_error == pytest.approx(0.1)


def test_bandwidth_rate_denominator():
    est = AsfEstimate(x0=1.0, mu_hat=2.0, sigma2_hat=0.5, rate="sqrt-n-b^dx", n=1000,
                      estimator="test", bandwidth=0.2)
    assert est.rate is Rate.SQRT_N_B
    assert est.rate_denominator == pytest.approx(200.0)
    lo, hi = confidence_interval(est, 0.9)
    assert hi - 2.0 == pytest.approx(1.644854 * math.sqrt(0.5 / 200), abs=1e-6)
    assert est.with_level(0.9).ci == (lo, hi)


def test_consistency_only_has_no_interval():
    est = AsfEstimate(x0=0.0, mu_hat=1.0, sigma2_hat=float("nan"), rate=Rate.CONSISTENCY, n=10,
                      estimator="test")
    assert math.isnan(est.ci[0])
    assert est.to_dict()["rate"] == "consistency-only"


def test_validation():
    with pytest.raises(ConfigError):
        AsfEstimate(x0=0.0, mu_hat=0.0, sigma2_hat=-1.0, rate=Rate.SQRT_N, n=10, estimator="test")
    with pytest.raises(ConfigError):
        AsfEstimate(x0=0.0, mu_hat=0.0, sigma2_hat=1.0, rate=Rate.SQRT_N_B, n=10, estimator="test")
    est = AsfEstimate(x0=0.0, mu_hat=0.0, sigma2_hat=1.0, rate=Rate.SQRT_N, n=10, estimator="test")
    with pytest.raises(ConfigError):
        confidence_interval(est, 1.5)
