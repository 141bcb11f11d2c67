import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats as sps

from bladerag.stats import BinomialObservation, beta_quantile, clopper_pearson, regularized_incomplete_beta


@pytest.mark.parametrize(
    "a,b,x",
    [(1, 1, 0.3), (0.5, 0.5, 0.2), (2, 5, 0.7), (30, 1, 0.9), (28, 3, 0.93), (100, 80, 0.55), (0.3, 40, 0.01)],
)
def test_incomplete_beta_against_scipy(a, b, x):
    assert regularized_incomplete_beta(a, b, x) == pytest.approx(sps.beta.cdf(x, a, b), abs=1e-12)


def test_incomplete_beta_closed_forms():
    # I_x(a, 1) = x^a and I_x(1, b) = 1 - (1-x)^b
    for a in (1, 2.5, 30):
        assert regularized_incomplete_beta(a, 1, 0.4) == pytest.approx(0.4**a, rel=1e-12)
        assert regularized_incomplete_beta(1, a, 0.4) == pytest.approx(1 - 0.6**a, rel=1e-12)
    assert regularized_incomplete_beta(3, 4, 0.0) == 0.0
    assert regularized_incomplete_beta(3, 4, 1.0) == 1.0


def test_invalid_arguments():
    with pytest.raises(ValueError):
        regularized_incomplete_beta(0, 1, 0.5)
    with pytest.raises(ValueError):
        regularized_incomplete_beta(1, 1, 1.5)
    with pytest.raises(ValueError):
        beta_quantile(1.2, 1, 1)
    for x, n, level in ((-1, 5, 0.95), (6, 5, 0.95), (0, 0, 0.95), (1, 5, 1.0), (1, 5, 0.0)):
        with pytest.raises(ValueError):
            clopper_pearson(x, n, level)


@settings(max_examples=300, deadline=None)
@given(p=st.floats(1e-6, 1 - 1e-6), a=st.floats(0.5, 60), b=st.floats(0.5, 60))
def test_quantile_inverts_cdf(p, a, b):
    q = beta_quantile(p, a, b)
    assert abs(regularized_incomplete_beta(a, b, q) - p) <= 1e-9


def test_closed_form_endpoints():
    for n in (1, 5, 30, 200):
        lo, hi = clopper_pearson(n, n)
        assert hi == 1.0 and lo == pytest.approx(0.025 ** (1 / n), abs=1e-10)
        lo, hi = clopper_pearson(0, n)
        assert lo == 0.0 and hi == pytest.approx(1 - 0.025 ** (1 / n), abs=1e-10)
    assert clopper_pearson(0, 1) == (0.0, pytest.approx(0.975, abs=1e-10))


@pytest.mark.parametrize("x,n", [(1, 10), (5, 11), (10, 11), (27, 30), (28, 30), (150, 400)])
def test_interior_against_scipy_beta_ppf(x, n):
    lo, hi = clopper_pearson(x, n)
    assert lo == pytest.approx(sps.beta.ppf(0.025, x, n - x + 1), abs=1e-9)
    assert hi == pytest.approx(sps.beta.ppf(0.975, x + 1, n - x), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(data=st.data(), n=st.integers(1, 200))
def test_interval_invariants(data, n):
    x = data.draw(st.integers(0, n))
    lo, hi = clopper_pearson(x, n)
    assert 0.0 <= lo <= x / n <= hi <= 1.0
    assert (lo == 0.0) == (x == 0)
    assert (hi == 1.0) == (x == n)
    lo99, hi99 = clopper_pearson(x, n, 0.99)
    assert lo99 <= lo and hi <= hi99


def test_observation_alpha():
    assert BinomialObservation(3, 10, 0.9).alpha == pytest.approx(0.1)


def test_exact_coverage_is_conservative_at_n30():
    # Exact coverage: sum of binomial pmf over x whose interval contains p.
    intervals = [clopper_pearson(x, 30) for x in range(31)]
    for p in [i / 10 for i in range(1, 10)]:
        cov = sum(math.comb(30, x) * p**x * (1 - p) ** (30 - x) for x, (lo, hi) in enumerate(intervals) if lo <= p <= hi)
        assert cov >= 0.95
