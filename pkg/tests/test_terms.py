import numpy as np
import pytest

from app.utils.errors import ConfigError
from app.utils.terms import parse_term, parse_terms, term_derivative_matrix, term_matrix

COLUMNS = {"x": np.array([0.0, 1.0, 2.0]), "z1": np.array([1.0, -1.0, 3.0])}


def test_parse_and_evaluate():
    assert parse_term("1").is_constant
    np.testing.assert_array_equal(parse_term("x^2").evaluate(COLUMNS, 3), [0.0, 1.0, 4.0])
    np.testing.assert_array_equal(parse_term("X * z1").evaluate(COLUMNS, 3), [0.0, -1.0, 6.0])
    np.testing.assert_array_equal(parse_term("x==1").evaluate(COLUMNS, 3), [0.0, 1.0, 0.0])
    assert parse_term("x*z1").variables == frozenset({"x", "z1"})


def test_derivatives():
    terms = parse_terms(["1", "x", "x^2", "x*z1", "x==1"])
    np.testing.assert_array_equal(
        term_derivative_matrix(terms, COLUMNS, "x", 3),
        np.column_stack([np.zeros(3), np.ones(3), 2 * COLUMNS["x"], COLUMNS["z1"], np.zeros(3)]),
    )
    assert term_matrix(terms, COLUMNS, 3).shape == (3, 5)


def test_rejects_bad_terms():
    with pytest.raises(ConfigError):
        parse_term("2x")
    with pytest.raises(ConfigError):
        parse_terms(["1", "x", "x"])
    with pytest.raises(ConfigError):
        parse_terms([])
    with pytest.raises(ConfigError):
        parse_term("w9").evaluate(COLUMNS, 3)
