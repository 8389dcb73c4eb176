import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate

from catalytic_bbm import DomainError, IntervalSet, ValidationError
from catalytic_bbm import analytics as an

mp.mp.dps = 30
HALF = IntervalSet.half_line(0.0)
EMPTY = IntervalSet.empty()


def mp_phi(z):
    return mp.ncdf(z)


def mp_expected_count(x0, t, lo, hi, beta):
    """Integrates the two-term first-moment integrand with mpmath, splitting at 0."""
    x0, t, beta = mp.mpf(x0), mp.mpf(t), mp.mpf(beta)
    sq = mp.sqrt(t)

    def f(x):
        gauss = mp.exp(-((x0 - x) ** 2) / (2 * t)) / mp.sqrt(2 * mp.pi * t)
        cat = beta * mp.exp(-beta * abs(x0) + beta**2 * t / 2) * mp.exp(-beta * abs(x)) * mp_phi(
            (beta * t - abs(x0) - abs(x)) / sq
        )
        return gauss + cat

    pts = [mp.mpf(lo)] + ([mp.mpf(0)] if lo < 0 < hi else []) + [mp.inf if hi == math.inf else mp.mpf(hi)]
    return float(mp.quad(f, pts))


# --- measures ---------------------------------------------------------------


def test_mu_examples():
    assert an.mu_measure(EMPTY, 1.0) == 0.0
    assert an.mu_measure(HALF, 1.0) == pytest.approx(1.0, rel=1e-15)
    assert an.mu_measure(IntervalSet([(0, 1)]), 1.0) == pytest.approx(1 - math.exp(-1), rel=1e-14)
    # extends below 0, so exceeds 1
    assert an.mu_measure(IntervalSet.half_line(-1.0), 1.0) == pytest.approx(math.e, rel=1e-14)


def test_mu_against_quadrature():
    s = IntervalSet([(-0.5, 0.3), (1.0, 2.5), (4.0, math.inf)])
    ref = sum(float(mp.quad(lambda y: 2 * mp.exp(-2 * y), [lo, mp.inf if hi == math.inf else hi])) for lo, hi in s)
    assert an.mu_measure(s, 2.0) == pytest.approx(ref, rel=1e-13)


def test_mu_rejects_unbounded():
    with pytest.raises(DomainError):
        an.mu_measure(IntervalSet.real_line(), 1.0)


def test_pi_examples():
    assert an.pi_measure(IntervalSet.real_line(), 1.0) == pytest.approx(2.0, rel=1e-15)
    assert an.pi_measure(HALF, 1.0) == pytest.approx(1.0, rel=1e-15)
    ref = float(mp.quad(lambda x: 2 * mp.exp(-2 * abs(x)), [-1, 0, 1]))
    assert an.pi_measure(IntervalSet([(-1, 1)]), 2.0) == pytest.approx(ref, rel=1e-14)
    assert ref == pytest.approx(2 * (1 - math.exp(-2)), rel=1e-14)


@st.composite
def set_and_cut(draw):
    lo = draw(st.floats(-5, 5))
    hi = draw(st.one_of(st.just(math.inf), st.floats(lo + 0.01, lo + 10)))
    frac = draw(st.floats(0.01, 0.99))
    cut = lo + frac * ((hi if hi != math.inf else lo + 10) - lo)
    return lo, hi, cut


@given(set_and_cut(), st.floats(0.1, 4))
def test_measures_finitely_additive(sc, beta):
    lo, hi, cut = sc
    whole = IntervalSet([(lo, hi)])
    left, right = IntervalSet([(lo, cut)]), IntervalSet([(cut, hi)])
    for m in (an.mu_measure, an.pi_measure):
        assert m(whole, beta) == pytest.approx(m(left, beta) + m(right, beta), rel=1e-12, abs=1e-300)


# --- rates ------------------------------------------------------------------


def test_delta_lambda_values_and_shape():
    assert an.delta_lambda(0.25, 1.0) == pytest.approx(0.25)
    assert an.delta_lambda(0.5, 1.0) == 0.0
    assert an.delta_lambda(0.75, 1.0) == pytest.approx(-0.25)
    # continuity at lam = beta
    b = 1.7
    assert an.delta_lambda(b, b) == pytest.approx(an.delta_lambda(b * (1 + 1e-12), b), abs=1e-9)
    lams = np.linspace(0.01, 4, 400)
    vals = [an.delta_lambda(l, b) for l in lams]
    assert all(np.diff(vals) < 0)
    for l, v in zip(lams, vals):
        assert np.sign(v) == np.sign(b / 2 - l)
    with pytest.raises(DomainError):
        an.delta_lambda(0.0, 1.0)


def test_speed_class_regimes():
    assert an.SpeedClass(0.2).regime(1.0) == "subcritical"
    assert an.SpeedClass(0.5).regime(1.0) == "critical"
    assert an.SpeedClass(0.7).regime(1.0) == "supercritical"
    assert an.SpeedClass(1.0).regime(1.0) == "out-of-scope"
    with pytest.raises(ValidationError):
        an.SpeedClass(0.0)


def test_normal_cdf():
    assert an.normal_cdf(0.0) == 0.5
    assert an.normal_cdf(1.0) == pytest.approx(float(mp_phi(1)), rel=1e-15)
    assert an.normal_cdf(-30.0) == pytest.approx(float(mp_phi(-30)), rel=1e-12)
    arr = an.normal_cdf(np.array([-1.0, 0.0, 2.0]))
    assert arr.shape == (3,)


# --- density and first moment ------------------------------------------------


@pytest.mark.parametrize("x0,t,beta", [(0.0, 1.0, 1.0), (0.7, 0.3, 2.0), (-2.0, 5.0, 0.5), (3.0, 0.05, 1.0)])
def test_transition_density_integrates_to_one(x0, t, beta):
    f = lambda x: an.transition_density(x0, x, t, beta)
    pts = sorted({0.0, x0})
    total = integrate.quad(f, -np.inf, pts[0], epsabs=1e-12)[0]
    for a, b in zip(pts, pts[1:]):
        total += integrate.quad(f, a, b, epsabs=1e-12)[0]
    total += integrate.quad(f, pts[-1], np.inf, epsabs=1e-12)[0]
    assert total == pytest.approx(1.0, abs=1e-6)


def test_transition_density_needs_positive_time():
    with pytest.raises(DomainError):
        an.transition_density(0.0, 0.0, 0.0, 1.0)


@pytest.mark.parametrize(
    "x0,t,lo,hi,beta",
    [
        (0.0, 2.0, 0.0, 1.0, 1.0),
        (0.3, 6.0, 3.0, math.inf, 1.0),
        (-1.2, 0.7, -2.0, 0.5, 2.0),
        (2.0, 3.0, -math.inf, math.inf, 0.8),
        (0.0, 14.0, 7.0, math.inf, 1.0),
        (5.0, 0.1, 4.5, 5.5, 1.0),
    ],
)
def test_expected_count_against_mpmath(x0, t, lo, hi, beta):
    s = IntervalSet([(lo, hi)], allow_unbounded=True)
    assert an.expected_count(x0, t, s, beta) == pytest.approx(mp_expected_count(x0, t, lo, hi, beta), rel=1e-9)


@given(st.floats(0.0, 6.0), st.floats(0.05, 12.0), st.floats(0.2, 2.0))
@settings(max_examples=40, deadline=None)
def test_half_line_closed_form(a, t, beta):
    # E|N_t^{[a, inf)}| from 0 = Phi(beta sqrt t - a / sqrt t) exp(beta^2 t / 2 - beta a)
    ref = float(mp_phi(beta * mp.sqrt(t) - a / mp.sqrt(t)) * mp.exp(beta**2 * t / 2 - beta * a))
    got = an.expected_count(0.0, t, IntervalSet.half_line(a), beta)
    assert got == pytest.approx(ref, rel=1e-9)


def test_expected_population_examples():
    assert an.expected_population(0.0, 0.0, 1.0) == 1.0
    assert an.expected_population(0.0, 1.0, 1.0) == pytest.approx(2 * math.exp(0.5) * float(mp_phi(1)), rel=1e-14)
    assert an.expected_population(0.0, 1.0, 1.0) == pytest.approx(2.774286, abs=5e-7)
    assert an.expected_population(1e3, 1.0, 1.0) == pytest.approx(1.0, abs=1e-12)


@given(st.floats(-4, 4), st.floats(0.01, 10), st.floats(0.2, 1.5))
@settings(max_examples=40, deadline=None)
def test_population_equals_count_over_line_and_is_bounded(x0, t, beta):
    pop = an.expected_population(x0, t, beta)
    assert an.expected_count(x0, t, IntervalSet.real_line(), beta) == pytest.approx(pop, rel=1e-9)
    assert 1.0 - 1e-12 <= pop <= an.population_upper_bound(x0, t, beta)


def test_expected_count_at_time_zero_is_indicator():
    s = IntervalSet([(0.0, 1.0)])
    assert an.expected_count(0.5, 0.0, s, 1.0) == 1.0
    assert an.expected_count(1.0, 0.0, s, 1.0) == 0.0


@given(st.floats(0, 5), st.floats(0.05, 10), st.floats(0.2, 2.0))
@settings(max_examples=30, deadline=None)
def test_exponential_window_bound(a, t, beta):
    got = an.expected_count(0.0, t, IntervalSet.half_line(a), beta)
    assert got <= math.exp(beta * beta * t / 2 - beta * a) * (1 + 1e-12)


def _asymptotic_ratio(x0, t, lam, beta=1.0, A=HALF):
    s = math.sqrt(t)
    got = an.expected_count(x0, t - s, A.shift(lam * t), beta)
    ref = an.mu_measure(A, beta) * math.exp(
        -beta * abs(x0) - beta * beta * s / 2 + an.delta_lambda(lam, beta) * t
    )
    return got / ref


@pytest.mark.parametrize("lam", [0.1, 0.25, 0.5, 0.6])
@pytest.mark.parametrize("x0", [0.0, 0.5, -1.0])
def test_moving_window_mean_matches_asymptote(lam, x0):
    assert _asymptotic_ratio(x0, 50.0, lam) == pytest.approx(1.0, rel=0.05)


@pytest.mark.parametrize("lam", [0.75, 0.9])
def test_moving_window_ratio_approaches_one_for_fast_speeds(lam):
    gaps = [abs(_asymptotic_ratio(0.0, t, lam) - 1) for t in (50.0, 200.0, 800.0)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 0.1


# --- second-moment correction -------------------------------------------------


def test_second_moment_bound_examples():
    c = an.second_moment_bound(0.0, 5.0, 5.0, 0.5, HALF, HALF, 1.0)
    assert c == pytest.approx(32 * math.exp(-5.0), rel=1e-14)
    c = an.second_moment_bound(2.0, 5.0, 1.0, 0.75, HALF, HALF, 1.0)
    assert c == pytest.approx(32 * math.exp(-2 - 1 - 2 * 0.25 * 5), rel=1e-14)
    assert an.second_moment_bound(80.0, 5.0, 1.0, 0.5, HALF, HALF, 1.0) < 1e-30
    full = an.second_moment_bound(0.0, 5.0, 1.0, 0.5, HALF, EMPTY, 1.0, full=True)
    part = an.expected_count(0.0, 4.0, IntervalSet.half_line(2.5), 1.0)
    assert full == pytest.approx(part + an.second_moment_bound(0.0, 5.0, 1.0, 0.5, HALF, EMPTY, 1.0))


@pytest.mark.parametrize(
    "kw",
    [dict(lam=1.0), dict(lam=0.0), dict(s=6.0), dict(s=-1.0), dict(A=IntervalSet.half_line(-10.0))],
)
def test_second_moment_bound_domain(kw):
    args = dict(x0=0.0, t=5.0, s=1.0, lam=0.5, A=HALF, B=HALF, beta=1.0)
    args.update(kw)
    with pytest.raises(DomainError):
        an.second_moment_bound(**args)


# --- limit laws ----------------------------------------------------------------


def test_mixed_poisson_examples():
    assert an.mixed_poisson_joint_pmf([(0.5, 0)], [2.0]) == pytest.approx(math.exp(-1))
    assert an.mixed_poisson_joint_pmf([(0.5, 1)], [2.0]) == pytest.approx(math.exp(-1))
    assert an.mixed_poisson_joint_pmf([(0.5, 3), (1.0, 0)], [0.0]) == 0.0
    assert an.mixed_poisson_joint_pmf([(0.5, 0), (1.0, 0)], [0.0]) == 1.0
    with pytest.raises(DomainError):
        an.mixed_poisson_joint_pmf([(1.0, 0)], [])
    with pytest.raises(DomainError):
        an.mixed_poisson_joint_pmf([(-1.0, 0)], [1.0])


@given(st.lists(st.floats(0, 5), min_size=1, max_size=20), st.floats(0.01, 2), st.floats(0.01, 2))
@settings(max_examples=40, deadline=None)
def test_mixed_poisson_normalised(mixing, mu_a, mu_b):
    K = 60
    total = sum(
        an.mixed_poisson_joint_pmf([(mu_a, k), (mu_b, l)], mixing) for k in range(K) for l in range(K)
    )
    assert total == pytest.approx(1.0, abs=1e-9)


def test_pgf_matches_pmf_sum():
    mixing = [0.3, 1.1, 2.5]
    for z in (0.25, 0.5, 0.75):
        series = sum(z**k * an.mixed_poisson_joint_pmf([(0.8, k)], mixing) for k in range(80))
        assert an.mixed_poisson_pgf(z, 0.8, mixing) == pytest.approx(series, rel=1e-12)


def test_rightmost_reduces_to_gumbel():
    for x in (-2.0, 0.0, 1.5):
        assert an.rightmost_cdf_limit(x, 1.3, [1.0]) == pytest.approx(math.exp(-math.exp(-1.3 * x)))
    assert an.rightmost_cdf_limit(200.0, 1.0, [0.5, 2.0]) == pytest.approx(1.0)
    assert an.rightmost_cdf_limit(-200.0, 1.0, [0.5, 2.0]) == 0.0


def test_nth_rightmost():
    mixing = [0.2, 1.0, 3.0]
    for x in np.linspace(-3, 3, 13):
        assert an.nth_rightmost_cdf_limit(1, x, 1.0, mixing) == an.rightmost_cdf_limit(x, 1.0, mixing)
    assert an.nth_rightmost_cdf_limit(2, 0.0, 1.0, [1.0]) == pytest.approx(2 * math.exp(-1))
    assert an.nth_rightmost_cdf_limit(60, 0.0, 1.0, mixing) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        an.nth_rightmost_cdf_limit(0, 0.0, 1.0, mixing)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=10), st.floats(-5, 5), st.floats(0, 3),
       st.integers(1, 5))
@settings(max_examples=50, deadline=None)
def test_nth_rightmost_monotone(mixing, x, dx, n):
    f = an.nth_rightmost_cdf_limit
    assert f(n, x, 1.0, mixing) <= f(n + 1, x, 1.0, mixing) + 1e-15
    assert f(n, x, 1.0, mixing) <= f(n, x + dx, 1.0, mixing) + 1e-15


def test_extremes_joint_limit():
    mixing = [0.5, 1.0, 2.0]
    for xp in (-1.0, 0.0, 2.0):
        assert an.extremes_joint_limit(300.0, xp, 1.0, mixing) == pytest.approx(
            an.rightmost_cdf_limit(xp, 1.0, mixing)
        )
    assert an.extremes_joint_limit(-300.0, 0.0, 1.0, mixing) == pytest.approx(0.0, abs=1e-100)
    assert an.extremes_joint_limit(0.0, 50.0, 1.0, [1.0]) == pytest.approx(1 - math.exp(-1))


def test_survival_asymptote():
    assert an.survival_asymptote(0.0, HALF, EMPTY, 1.0) == 1.0
    assert an.survival_asymptote(0.3, EMPTY, EMPTY, 1.0) == 0.0
    a = IntervalSet([(0.5, 2.0)])
    assert an.survival_asymptote(1.2, a, HALF, 2.0) == an.survival_asymptote(-1.2, a, HALF, 2.0)


def test_mixing_sample_validation():
    with pytest.raises(ValidationError):
        an.MixingSample([1.0, -0.1])
    with pytest.raises(ValidationError):
        an.MixingSample([math.nan])
    with pytest.raises(ValidationError):
        an.ModelParams(0.0)


def test_factorial_second_moment_trivial_cases():
    assert an.factorial_second_moment(0.0, 0.0, HALF, 1.0) == 0.0
    assert an.factorial_second_moment(0.0, 3.0, EMPTY, 1.0) == 0.0
    # far from the catalyst nothing branches before t
    assert an.factorial_second_moment(40.0, 1.0, IntervalSet.half_line(39.0), 1.0) < 1e-100


def test_factorial_second_moment_is_additive_in_the_rate():
    # splitting the time integral at tau = 1 gives the same value
    from scipy import integrate

    D, t, x0 = IntervalSet([(0.0, 2.0)]), 3.0, 0.4
    f = lambda tau: an.expected_count(0.0, t - tau, D, 1.0) ** 2 * an._population_rate(x0, tau, 1.0)
    pieces = 2 * (integrate.quad(f, 0, 1, limit=200)[0] + integrate.quad(f, 1, t, limit=200)[0])
    assert an.factorial_second_moment(x0, t, D, 1.0) == pytest.approx(pieces, rel=1e-6)


def test_population_rate_matches_finite_difference():
    for x0, tau in ((0.0, 0.5), (0.7, 2.0), (-2.0, 0.3)):
        h = 1e-6
        fd = (an.expected_population(x0, tau + h, 1.3) - an.expected_population(x0, tau - h, 1.3)) / (2 * h)
        assert an._population_rate(x0, tau, 1.3) == pytest.approx(fd, rel=1e-6)


@st.composite
def envelope_params(draw):
    beta = draw(st.floats(0.5, 2.0))
    lam = beta * draw(st.floats(0.05, 0.95))
    t = draw(st.floats(0.5, 6.0))
    s = t * draw(st.floats(0.0, 0.9))
    x0 = draw(st.floats(-1.5, 1.5))
    a = draw(st.floats(0.0, 1.0))
    width = draw(st.one_of(st.just(math.inf), st.floats(0.2, 2.0)))
    return beta, lam, t, s, x0, IntervalSet([(a, a + width)])


@given(envelope_params())
@settings(max_examples=25, deadline=None)
def test_second_moment_correction_dominates_exact_factorial_moment(p):
    beta, lam, t, s, x0, A = p
    exact = an.factorial_second_moment(x0, t - s, A.shift(lam * t), beta)
    assert exact <= an.second_moment_bound(x0, t, s, lam, A, EMPTY, beta) * (1 + 1e-9)


def test_smaller_constants_are_not_bounds():
    # E N(N-1) exceeds a quarter of the correction here ...
    A = IntervalSet([(0.0, 1.0)])
    exact = an.factorial_second_moment(0.0, 4.0, A.shift(2.25), 1.5)
    corr = an.second_moment_bound(0.0, 5.0, 1.0, 0.45, A, EMPTY, 1.5)
    assert corr / 4 < exact <= corr
    # ... and half of it here
    exact = an.factorial_second_moment(0.0, 2.0, HALF.shift(0.4), 2.0)
    corr = an.second_moment_bound(0.0, 2.0, 0.0, 0.2, HALF, EMPTY, 2.0)
    assert corr / 2 < exact <= corr


@pytest.mark.parametrize("x0", [0.0, 0.5, -2.0])
def test_discounted_branching_rate_integral(x0):
    # int_0^inf e^{-tau} d E|N_tau| at beta = 1: equals 1 + sqrt 2 from the origin, never above 4 e^{-|x0|}
    from scipy import integrate

    f = lambda tau: math.exp(-tau) * an._population_rate(x0, tau, 1.0)
    total = integrate.quad(f, 0, 1, limit=200)[0] + integrate.quad(f, 1, 200, limit=400)[0]
    if x0 == 0:
        assert total == pytest.approx(1 + math.sqrt(2), rel=1e-8)
    assert total <= 4 * math.exp(-abs(x0))
