import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.integrate import quad

from betapool.special import BetaParams, BoundaryDensityWarning, beta_cdf, beta_pdf, betainc, log_beta


def poly_cdf_2_3(x: Fraction) -> Fraction:
    """Exact I_x(2, 3) = 12 (x^2/2 - 2x^3/3 + x^4/4)."""
    return 12 * (x**2 / 2 - 2 * x**3 / 3 + x**4 / 4)


def quad_cdf(a: float, b: float, x: float) -> float:
    """Integral of the density from 0 to x, with the x^(a-1) factor handled by an algebraic weight."""
    norm = math.exp(-log_beta(a, b))
    val, _ = quad(lambda t: (1.0 - t) ** (b - 1.0), 0.0, x, weight="alg", wvar=(a - 1.0, 0.0),
                  epsabs=1e-14, epsrel=1e-13, limit=200)
    return norm * val


def test_uniform_identity():
    assert beta_cdf(BetaParams(1, 1), 0.37) == pytest.approx(0.37, abs=1e-15)


@pytest.mark.parametrize("x", [Fraction(1, 2), Fraction(1, 4), Fraction(1, 10), Fraction(9, 10)])
def test_integer_parameters_match_polynomial(x):
    expected = float(poly_cdf_2_3(x))
    assert beta_cdf(BetaParams(2, 3), float(x)) == pytest.approx(expected, abs=1e-14)


def test_known_values():
    assert poly_cdf_2_3(Fraction(1, 2)) == Fraction(11, 16)
    assert poly_cdf_2_3(Fraction(1, 4)) == Fraction(67, 256)
    assert abs(beta_cdf(BetaParams(2, 3), 0.5) - 0.6875) <= 1e-10
    assert abs(beta_cdf(BetaParams(2, 3), 0.25) - 0.26171875) <= 1e-10


def test_endpoints():
    for a, b in [(0.5, 0.5), (2, 3), (10, 0.3)]:
        assert beta_cdf(BetaParams(a, b), 0.0) == 0.0
        assert beta_cdf(BetaParams(a, b), 1.0) == 1.0


def test_vectorized_and_broadcast():
    x = np.linspace(0, 1, 11)
    out = betainc(2.0, 3.0, x)
    assert out.shape == (11,)
    both = betainc(np.array([1.0, 2.0]), np.array([1.0, 3.0]), np.tile(x[:, None], (1, 2)))
    np.testing.assert_allclose(both[:, 0], x, atol=1e-15)
    np.testing.assert_allclose(both[:, 1], out, atol=0)


@pytest.mark.parametrize("a", [0.5, 1, 2, 5, 10])
@pytest.mark.parametrize("b", [0.5, 1, 2, 5, 10])
def test_against_quadrature(a, b):
    xs = np.round(np.arange(0.01, 1.0, 0.07), 2).tolist() + [0.99]
    for x in xs:
        assert abs(beta_cdf(BetaParams(a, b), x) - quad_cdf(a, b, x)) <= 1e-8


@pytest.mark.parametrize("a", [0.5, 1, 2, 5, 10])
@pytest.mark.parametrize("b", [0.5, 1, 2, 5, 10])
def test_density_integrates_to_one(a, b):
    p = BetaParams(a, b)
    total, _ = quad(lambda t: beta_pdf(p, t), 0, 1, epsabs=1e-12, epsrel=1e-12, limit=500)
    assert total == pytest.approx(1.0, abs=1e-8)
    for x in (0.1, 0.5, 0.9):
        assert beta_pdf(p, x) == pytest.approx(x ** (a - 1) * (1 - x) ** (b - 1) * math.exp(-log_beta(a, b)),
                                               rel=1e-12)


@pytest.mark.parametrize(
    "a, b, x, expected",
    [(1, 1, 0.8, 1.0), (2, 3, 0.5, 1.5), (2, 2, 0.5, 1.5)],
)
def test_density_values(a, b, x, expected):
    assert beta_pdf(BetaParams(a, b), x) == pytest.approx(expected, rel=1e-13)


def test_density_boundary_is_flagged():
    with pytest.warns(BoundaryDensityWarning):
        v = beta_pdf(BetaParams(0.5, 2), 0.0)
    assert math.isfinite(v) and v > 1e300
    assert beta_pdf(BetaParams(2, 3), 0.0) == 0.0
    assert beta_pdf(BetaParams(1, 3), 0.0) == pytest.approx(3.0)


@pytest.mark.parametrize("a, b", [(0, 1), (1, -1), (float("inf"), 1)])
def test_domain_errors(a, b):
    with pytest.raises(ValueError):
        BetaParams(a, b)
    with pytest.raises(ValueError):
        betainc(a, b, 0.5)


def test_x_outside_unit_interval():
    with pytest.raises(ValueError):
        betainc(2, 2, 1.2)


shape = st.floats(0.05, 50)


@given(shape, shape, st.integers(0, 2**20))
def test_symmetry(a, b, k):
    # dyadic x keeps 1 - x exact
    x = k / 2**20
    lhs = betainc(a, b, x)
    rhs = 1.0 - betainc(b, a, 1.0 - x)
    assert abs(lhs - rhs) <= 1e-12


@given(shape, shape)
def test_monotone_in_x(a, b):
    vals = betainc(a, b, np.linspace(0, 1, 201))
    assert np.all(np.diff(vals) >= 0)


def test_extreme_shapes_stay_accurate():
    # reference from the symmetric relation and exact integer cases
    assert betainc(1000.0, 1000.0, 0.5) == pytest.approx(0.5, abs=1e-12)
    assert betainc(1.0, 1e3, 1e-3) == pytest.approx(1 - (1 - 1e-3) ** 1e3, abs=1e-13)
    assert betainc(1e3, 1.0, 0.999) == pytest.approx(0.999**1e3, abs=1e-13)
