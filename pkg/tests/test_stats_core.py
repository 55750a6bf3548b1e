import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from sgfa.errors import InvalidArgumentError, NumericalError
from sgfa.stats_core import (
    DistParams,
    Family,
    cosine_similarity,
    from_positive,
    log_pdf_gamma,
    log_pdf_half_cauchy,
    log_pdf_inv_gamma,
    log_pdf_normal,
    to_positive,
)

mpmath.mp.dps = 40


def test_normal_examples():
    assert log_pdf_normal(0, 0, 1) == pytest.approx(-0.9189385, abs=1e-7)
    assert log_pdf_normal(1, 0, 1) == pytest.approx(-1.4189385, abs=1e-7)
    x, mu, sd = map(mpmath.mpf, ("0.7", "0.2", "1.3"))
    ref = mpmath.log(mpmath.npdf(x, mu, sd))
    assert log_pdf_normal(0.7, 0.2, 1.3) == pytest.approx(float(ref), abs=1e-10)


def test_half_cauchy_examples():
    assert log_pdf_half_cauchy(0, 1) == pytest.approx(math.log(2 / math.pi), abs=1e-12)
    assert log_pdf_half_cauchy(1, 1) == pytest.approx(-1.1447299, abs=1e-7)
    x, s = mpmath.mpf("2.5"), mpmath.mpf("0.7")
    ref = mpmath.log(2 / (mpmath.pi * s * (1 + (x / s) ** 2)))
    assert log_pdf_half_cauchy(2.5, 0.7) == pytest.approx(float(ref), abs=1e-10)


def test_gamma_examples():
    assert log_pdf_gamma(1, 1, 1) == pytest.approx(-1.0, abs=1e-12)
    ref = mpmath.log(mpmath.mpf(2) ** 2 * mpmath.exp(-2) / mpmath.gamma(3))
    assert log_pdf_gamma(2, 3, 1) == pytest.approx(float(ref), abs=1e-10)
    assert log_pdf_gamma(1e-300, 1, 2) == pytest.approx(math.log(2), abs=1e-12)


def test_inv_gamma_examples():
    assert log_pdf_inv_gamma(1, 1, 1) == pytest.approx(-1.0, abs=1e-12)
    x, a, b = mpmath.mpf(2), mpmath.mpf(2), mpmath.mpf(2)
    ref = mpmath.log(b**a / mpmath.gamma(a) * x ** (-a - 1) * mpmath.exp(-b / x))
    assert log_pdf_inv_gamma(2, 2, 2) == pytest.approx(float(ref), abs=1e-10)


@pytest.mark.parametrize("call", [
    lambda: log_pdf_normal(0, 0, 0),
    lambda: log_pdf_normal(0, 0, -1),
    lambda: log_pdf_normal(float("nan"), 0, 1),
    lambda: log_pdf_normal(float("inf"), 0, 1),
    lambda: log_pdf_half_cauchy(-0.1, 1),
    lambda: log_pdf_gamma(0, 1, 1),
    lambda: log_pdf_gamma(-1, 1, 1),
    lambda: log_pdf_inv_gamma(0, 1, 1),
    lambda: log_pdf_inv_gamma(1, -1, 1),
])
def test_domain_errors(call):
    with pytest.raises(InvalidArgumentError):
        call()


def _integral(f, lo, hi):
    return integrate.quad(lambda x: math.exp(f(x)), lo, hi, limit=500, epsabs=1e-12, epsrel=1e-10)[0]


@settings(max_examples=25, deadline=None)
@given(mu=st.floats(-5, 5), sd=st.floats(0.05, 20))
def test_normal_normalised(mu, sd):
    total = sum(_integral(lambda x: log_pdf_normal(x, mu, sd), a, b)
                for a, b in ((-np.inf, mu), (mu, np.inf)))
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(scale=st.floats(0.01, 50))
def test_half_cauchy_normalised(scale):
    total = _integral(lambda x: log_pdf_half_cauchy(x, scale), 0, scale) + \
        _integral(lambda x: log_pdf_half_cauchy(x, scale), scale, np.inf)
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(shape=st.floats(1.0, 20), rate=st.floats(0.1, 10))
def test_gamma_normalised(shape, rate):
    mode = (shape - 1) / rate
    f = lambda x: log_pdf_gamma(x, shape, rate)  # noqa: E731
    total = sum(_integral(f, a, b) for a, b in ((0, mode + 1e-300), (mode + 1e-300, mode + 1 / rate),
                                                  (mode + 1 / rate, np.inf)))
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=25, deadline=None)
@given(shape=st.floats(0.5, 20), scale=st.floats(0.1, 10))
def test_inv_gamma_normalised(shape, scale):
    # substitute y = 1/x: the integrand becomes the gamma(shape, scale) density
    mode = scale / (shape + 1)
    f = lambda x: log_pdf_inv_gamma(x, shape, scale)  # noqa: E731
    total = _integral(f, 0, mode) + _integral(f, mode, 10 * mode) + _integral(f, 10 * mode, np.inf)
    assert total == pytest.approx(1.0, abs=1e-6)


@settings(max_examples=100, deadline=None)
@given(x=st.floats(0, 1e6), s=st.floats(1e-3, 1e3))
def test_half_cauchy_scaling(x, s):
    assert log_pdf_half_cauchy(x, s) == pytest.approx(log_pdf_half_cauchy(x / s, 1) - math.log(s), abs=1e-10)


def test_to_positive_examples():
    t = to_positive(0.0)
    assert (t.constrained, t.log_jacobian) == (1.0, 0.0)
    t = to_positive(math.log(2))
    assert t.constrained == pytest.approx(2.0, abs=1e-15)
    assert t.log_jacobian == pytest.approx(math.log(2), abs=1e-15)
    for c in (1e-6, 1.0, 1e6):
        assert to_positive(math.log(c)).constrained == pytest.approx(c, rel=1e-12)


def test_to_positive_overflow_names_coordinate():
    with pytest.raises(NumericalError, match="tau_w"):
        to_positive(1000.0, coordinate="tau_w")


@settings(max_examples=200, deadline=None)
@given(u=st.floats(-700, 700))
def test_to_positive_bijection_and_jacobian(u):
    t = to_positive(u)
    assert t.constrained > 0
    assert from_positive(t.constrained) == pytest.approx(u, abs=1e-12 * max(1, abs(u)))
    # d exp(u)/du = exp(u), so log|J| = u
    h = 1e-6
    if abs(u) < 50:
        fd = (math.exp(u + h) - math.exp(u - h)) / (2 * h)
        assert math.log(fd) == pytest.approx(t.log_jacobian, abs=1e-8)
    assert t.log_jacobian == u


def test_cosine_examples():
    assert cosine_similarity([1, 0], [1, 0]) == 1
    assert cosine_similarity([1, 0], [0, 1]) == 0
    assert cosine_similarity([1, 2, 3], [-1, -2, -3]) == pytest.approx(-1, abs=1e-15)
    with pytest.raises(InvalidArgumentError):
        cosine_similarity([0, 0], [1, 0])
    with pytest.raises(InvalidArgumentError):
        cosine_similarity([1, 0], [1, 0, 0])


vectors = st.lists(st.floats(-100, 100), min_size=3, max_size=3).filter(lambda v: np.linalg.norm(v) > 1e-3)


@settings(max_examples=200, deadline=None)
@given(a=vectors, b=vectors, kappa=st.floats(1e-3, 1e3))
def test_cosine_properties(a, b, kappa):
    a, b = np.array(a), np.array(b)
    c = cosine_similarity(a, b)
    assert -1 <= c <= 1
    assert cosine_similarity(kappa * a, b) == pytest.approx(c, abs=1e-12)
    assert cosine_similarity(-a, b) == pytest.approx(-c, abs=1e-12)


def test_dist_params():
    assert DistParams(Family.NORMAL, 0, 1).log_pdf(0) == pytest.approx(-0.9189385, abs=1e-7)
    assert DistParams(Family.HALF_CAUCHY, 0, 1).log_pdf(1) == pytest.approx(-1.1447299, abs=1e-7)
    assert DistParams(Family.GAMMA, 1, 1).log_pdf(1) == pytest.approx(-1)
    assert DistParams(Family.INV_GAMMA, 1, 1).log_pdf(1) == pytest.approx(-1)
    with pytest.raises(InvalidArgumentError):
        DistParams(Family.NORMAL, 0, 0)
    with pytest.raises(InvalidArgumentError):
        DistParams(Family.HALF_CAUCHY, 1, 1)
