import numpy as np
import pytest

from errors import ParseError
from forcing.expressions import parse_expression, parse_vector
from forcing.spec import MACRO_VARIABLES, ForcingSpec


def test_precedence_and_power():
    expr = parse_expression("1 + 2*3^2 - -4/2")
    assert float(expr.evaluate({})) == 1 + 2 * 9 + 2
    assert float(parse_expression("2^3^2").evaluate({})) == 2.0 ** 9


def test_functions_and_constants():
    expr = parse_expression("sin(pi*y1)*exp(x2)")
    env = {"y1": np.array([0.5]), "x2": np.array([0.0])}
    assert np.allclose(expr.evaluate(env), 1.0)


def test_symbolic_derivative():
    expr = parse_expression("sin(2*pi*y1)*cos(2*pi*y2) + y1^2")
    dy1 = expr.derivative("y1")
    y1, y2 = np.array([0.1, 0.3]), np.array([0.2, 0.7])
    exact = 2 * np.pi * np.cos(2 * np.pi * y1) * np.cos(2 * np.pi * y2) + 2 * y1
    assert np.allclose(dy1.evaluate({"y1": y1, "y2": y2}), exact)
    assert parse_expression("x1 + 3").derivative("y2").is_zero()


def test_parse_errors_report_columns():
    with pytest.raises(ParseError) as info:
        parse_expression("1 + * 2")
    assert info.value.column == 5
    with pytest.raises(ParseError):
        parse_expression("sin(y1")
    with pytest.raises(ParseError):
        parse_expression("z + 1")
    with pytest.raises(ParseError):
        parse_vector("(y1, 0)", MACRO_VARIABLES)


def test_forcing_parts():
    forcing = ForcingSpec("(1, x1)", "sin(2*pi*y1)", "(0, y2)")
    x = np.array([[0.5, 0.5]])
    y = np.array([[0.25, 0.5]])
    assert np.allclose(forcing.macro_part(x), [[1.0, 0.5]])
    assert np.allclose(forcing.gradient_part(x, y), [[0.0, 0.0]], atol=1e-12)
    assert np.allclose(forcing.rotational_part(x, y), [[0.0, 0.5]])
    assert forcing.has_micro_part and not forcing.is_irrotational
    assert not ForcingSpec.macroscopic(1.0, 0.0).has_micro_part


def test_eps_sampler_uses_the_fast_variable():
    forcing = ForcingSpec("(0, 0)", "0", "(y1, 0)")
    sample = forcing.eps_sampler(0.25)
    values = sample(np.array([[0.3, 0.1], [0.55, 0.9]]))
    assert np.allclose(values[:, 0], [0.2, 0.2])
