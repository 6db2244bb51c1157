'''
Tests the quadrature rules.
'''
import numpy as np
import pytest

from app.utils.errors import ConfigError
from app.utils.quadrature import legendre_rule, normal_rule


def test_normal_rule_moments():
    rule = normal_rule(20)
    assert rule.nodes == 20
    assert rule.integrate(np.ones(20)) == pytest.approx(1.0)
    assert rule.integrate(rule.knots ** 2) == pytest.approx(1.0)
    assert rule.integrate(rule.knots ** 4) == pytest.approx(3.0)
    shifted = normal_rule(20, mean=1.0, sd=2.0)
    assert shifted.integrate(shifted.knots) == pytest.approx(1.0)
    assert shifted.integrate((shifted.knots - 1.0) ** 2) == pytest.approx(4.0)


def test_legendre_rule_is_exact_for_low_degree_polynomials():
    rule = legendre_rule(0.0, 2.0, 10)
    assert rule.integrate(rule.knots ** 3) == pytest.approx(4.0)
    assert rule.integrate(np.ones(10)) == pytest.approx(2.0)
    assert np.all((rule.knots > 0.0) & (rule.knots < 2.0))


def test_cached_rules_stay_intact():
    first = normal_rule(8, mean=5.0)
    second = normal_rule(8)
    np.testing.assert_allclose(first.knots - 5.0, second.knots)


@pytest.mark.parametrize("build", [
    lambda: legendre_rule(0.0, 1.0, 0),
    lambda: legendre_rule(1.0, 0.0, 5),
    lambda: legendre_rule(-np.inf, 0.0, 5),
    lambda: normal_rule(5, sd=0.0),
])
def test_rejects_bad_rules(build):
    with pytest.raises(ConfigError):
        build()
