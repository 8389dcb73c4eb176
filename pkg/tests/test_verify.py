import json
import math

import numpy as np
import pytest

from catalytic_bbm import CountingWindow, Ensemble, IntervalSet, ModelParams, SimConfig, ValidationError, run_ensemble
from catalytic_bbm import analytics as an
from catalytic_bbm.verify import (
    FAIL, INCONCLUSIVE, PASS, EnvelopeCase, TestReport, check_bernoulli_reduction, check_envelopes,
    check_extremes, check_first_moment, check_growth_rate, check_martingale, check_mixed_poisson,
    check_product_form, check_slln, check_survival_decay, default_grid, summary_table, write_reports,
)
from catalytic_bbm.verify.envelopes import run_envelope_suite

P = ModelParams(1.0, 0.0)
HALF = IntervalSet.half_line(0.0)
CRIT_A = CountingWindow(HALF, 0.5, "plus")
CRIT_B = CountingWindow(HALF, 0.5, "minus")
N = 20_000


def gen(seed=0):
    return np.random.default_rng(seed)


def mixing(rng, n=N):
    return rng.gamma(2.0, 0.5, size=n)


def config(checkpoints, windows=(), top_k=3, horizon=None):
    horizon = checkpoints[-1] if horizon is None else horizon
    return SimConfig(P, horizon, checkpoints, windows=windows, top_k=top_k, branching=False)


# --- report -------------------------------------------------------------------


def test_report_verdicts_and_serialisation(tmp_path):
    assert TestReport.compare("a", 1.0, 1.1, 0.2).passed
    assert not TestReport.compare("a", 1.0, 1.5, 0.2).passed
    assert TestReport.at_most("b", 1.05, 1.0, 0.02).passed
    assert not TestReport.at_most("b", 1.07, 1.0, 0.02).passed
    assert TestReport.at_least("c", 0.95, 1.0, 0.02).passed
    assert TestReport.p_value("p", 0.2, 0.01).passed
    assert not TestReport.p_value("p", 0.001, 0.01).passed
    inc = TestReport.inconclusive("i", "too few")
    both = TestReport.combine("all", [TestReport.compare("x", 0, 0, 0), inc])
    assert both.verdict == INCONCLUSIVE
    bad = TestReport.combine("all", [both, TestReport.compare("y", 1, 0, 0)])
    assert bad.verdict == FAIL and [f.name for f in bad.failures()] == ["y"]
    d = json.loads(bad.to_json(runtime=False))
    assert "runtime" not in d and d["parts"][0]["parts"][1]["statistic"] is None
    assert "parts pass" in summary_table([bad])
    write_reports([bad, inc], tmp_path / "r.jsonl")
    assert len((tmp_path / "r.jsonl").read_text().splitlines()) == 2


# --- first moment and martingale -------------------------------------------------


def test_first_moment_detects_bias():
    ref = an.expected_population(0.0, 1.0, 1.0)
    rng = gen(1)
    good = rng.normal(ref, 1.0, N)
    cfg = config((1.0,))
    assert check_first_moment(Ensemble.from_columns(cfg, counts=good[:, None]), None, 1.0, P).passed
    bad = good * 1.05
    assert check_first_moment(Ensemble.from_columns(cfg, counts=bad[:, None]), None, 1.0, P).verdict == FAIL
    few = Ensemble.from_columns(cfg, counts=good[:50, None])
    assert check_first_moment(few, None, 1.0, P).verdict == INCONCLUSIVE


def test_martingale_check():
    rng = gen(2)
    cfg = config((1.0, 2.0, 3.0))
    m_inf = rng.exponential(1.0, N)
    noise = rng.normal(0, 1, (N, 3)) * np.array([0.3, 0.1, 0.03])
    good = np.clip(m_inf[:, None] + noise - noise.mean(axis=0), 1e-9, None)
    good *= 1.0 / good.mean(axis=0)
    assert check_martingale(Ensemble.from_columns(cfg, martingale=good), P).passed
    assert check_martingale(Ensemble.from_columns(cfg, martingale=good * 1.1), P).verdict == FAIL
    growing = m_inf[:, None] + rng.normal(0, 1, (N, 3)) * np.array([0.03, 0.1, 0.3])
    rep = check_martingale(Ensemble.from_columns(cfg, martingale=np.abs(growing)), P)
    assert any("<=" in f.name for f in rep.failures())
    with pytest.raises(ValidationError):
        check_martingale(Ensemble.from_columns(config((1.0,)), martingale=good[:, :1]), P)


# --- mixed Poisson and product form ------------------------------------------------


def poisson_columns(rng, m, mu_a, mu_b, scale=1.0):
    a = rng.poisson(scale * mu_a * m)
    b = rng.poisson(scale * mu_b * m)
    wc = np.zeros((m.size, 2, 2))
    wc[:, 1, 0], wc[:, 1, 1] = a, b
    return wc


@pytest.fixture
def two_sided():
    rng = gen(3)
    m = mixing(rng)
    cfg = config((4.0, 14.0), windows=(CRIT_A, CRIT_B))
    mart = np.column_stack([m, m])
    good = Ensemble.from_columns(cfg, martingale=mart, window_counts=poisson_columns(rng, m, 1, 1))
    bad = Ensemble.from_columns(cfg, martingale=mart, window_counts=poisson_columns(rng, m, 1, 1, 2.0))
    wc = poisson_columns(rng, m, 1, 1)
    wc[:, 1, 1] = wc[:, 1, 0]
    coupled = Ensemble.from_columns(cfg, martingale=mart, window_counts=wc)
    return good, bad, coupled


def test_mixed_poisson_check(two_sided):
    good, bad, _ = two_sided
    specs = [(0,), (1,), (2,)]
    rep = check_mixed_poisson(good, [CRIT_A], specs, P, 4.0, 14.0)
    assert rep.passed and rep.details["max_discrepancy"] < 0.02
    assert check_mixed_poisson(bad, [CRIT_A], specs, P, 4.0, 14.0).verdict == FAIL
    rare = check_mixed_poisson(good, [CRIT_A], [(40,)], P, 4.0, 14.0, pgf_points=())
    assert rare.verdict == INCONCLUSIVE
    with pytest.raises(ValidationError):
        check_mixed_poisson(good, [CountingWindow(HALF, 0.4)], specs, P, 4.0, 14.0)
    with pytest.raises(ValidationError):
        check_mixed_poisson(good, [CRIT_A], specs, P, 14.0, 4.0)


def test_product_form_check(two_sided):
    good, bad, coupled = two_sided
    assert check_product_form(good, CRIT_A, CRIT_B, P, 4.0, 14.0).passed
    assert check_product_form(bad, CRIT_A, CRIT_B, P, 4.0, 14.0).verdict == FAIL
    assert check_product_form(coupled, CRIT_A, CRIT_B, P, 4.0, 14.0).verdict == FAIL


# --- growth, survival, strong law ----------------------------------------------------


def growth_ensembles(rng, lam, delta):
    out = {}
    m = mixing(rng, 4000)
    win = CountingWindow(HALF, lam)
    for t in (8.0, 10.0, 12.0, 14.0, 16.0):
        cfg = config((t,), windows=(win,))
        counts = rng.poisson(m * math.exp(delta * t))
        out[t] = Ensemble.from_columns(cfg, martingale=m[:, None], window_counts=counts[:, None, None])
    return out


def test_growth_rate_check():
    assert check_growth_rate(growth_ensembles(gen(4), 0.25, 0.25), 0.25, HALF, P).passed
    assert check_growth_rate(growth_ensembles(gen(4), 0.25, 0.35), 0.25, HALF, P).verdict == FAIL
    with pytest.raises(Exception):
        check_growth_rate(growth_ensembles(gen(4), 0.25, 0.25), 0.75, HALF, P)


def survival_ensembles(rng, p_of_t):
    win = CountingWindow(HALF, 0.75)
    out = {}
    for t in (8.0, 12.0, 16.0):
        occ = rng.random(200_000) < p_of_t(t)
        out[t] = Ensemble.from_columns(config((t,), windows=(win,)), window_counts=occ[:, None, None])
    return out


def test_survival_decay_check():
    empty = IntervalSet.empty()
    good = survival_ensembles(gen(5), lambda t: math.exp(-0.25 * t) * (1 - 2 * math.exp(-t / 4)))
    rep = check_survival_decay(good, 0.75, HALF, empty, P)
    assert rep.passed, summary_table([rep])
    flat = survival_ensembles(gen(5), lambda t: 0.05)
    assert check_survival_decay(flat, 0.75, HALF, empty, P).verdict == FAIL
    tiny = {16.0: survival_ensembles(gen(5), lambda t: 1e-4)[16.0].subset(slice(0, 1000))}
    assert check_survival_decay(tiny, 0.75, HALF, empty, P).verdict == INCONCLUSIVE


def test_slln_check():
    rng = gen(6)
    m = mixing(rng)
    unit = CountingWindow(IntervalSet([(0.0, 1.0)]))
    pi = an.pi_measure(IntervalSet([(0.0, 1.0)]), 1.0)
    scale = math.exp(7.0)
    cfg = config((14.0,), windows=(unit,))
    good = Ensemble.from_columns(cfg, martingale=m[:, None], window_counts=rng.poisson(pi * m * scale)[:, None, None])
    assert check_slln(good, unit, P, 14.0).passed
    bad = Ensemble.from_columns(cfg, martingale=m[:, None], window_counts=rng.poisson(1.5 * pi * m * scale)[:, None, None])
    assert check_slln(bad, unit, P, 14.0).verdict == FAIL


# --- extremes ------------------------------------------------------------------------


def limit_extremes(rng, m, t, k=3, shift=0.0):
    # points of a Poisson process with intensity M e^{-x} dx, largest first
    gaps = np.cumsum(rng.exponential(1.0, (m.size, k)), axis=1)
    right = np.log(m[:, None] / gaps) + t / 2 + shift
    left = -np.log(m / rng.exponential(1.0, m.size)) - t / 2
    return right, left


def test_extremes_check_accepts_the_limit_law_and_rejects_a_shift():
    rng = gen(7)
    m = mixing(rng)
    cfg = config((4.0, 14.0), top_k=3)
    mart = np.column_stack([m, m])

    def ens(shift):
        right, left = limit_extremes(rng, m, 14.0, shift=shift)
        top = np.full((m.size, 2, 3), np.nan)
        top[:, 1] = right
        lm = np.full((m.size, 2), np.nan)
        lm[:, 1] = left
        return Ensemble.from_columns(cfg, martingale=mart, top=top, leftmost=lm)

    rep = check_extremes(ens(0.0), P, 4.0, 14.0)
    assert rep.passed, summary_table([rep])
    assert check_extremes(ens(0.5), P, 4.0, 14.0).verdict == FAIL
    with pytest.raises(ValidationError):
        check_extremes(ens(0.0), P, 4.0, 14.0, orders=(4,))


# --- Bernoulli reduction ---------------------------------------------------------------


def test_bernoulli_reduction():
    rng = gen(8)
    t, lam = 10.0, 0.75
    win = CountingWindow(HALF.shift(lam * t))
    cfg = config((6.0, 8.0, 9.0), windows=(win,))
    n = 20_000
    wc = np.zeros((n, 3, 1))
    for c, p_many in enumerate((0.1, 0.3, 0.5)):
        occ = rng.random(n) < 0.2
        wc[:, c, 0] = occ * (1 + (rng.random(n) < p_many))
    ok = Ensemble.from_columns(cfg, window_counts=wc)
    assert check_bernoulli_reduction(ok, lam, HALF, t, [1.0, 2.0, 4.0], P).passed
    assert check_bernoulli_reduction(ok, lam, HALF, t, [1.0, 4.0], P).passed
    rev = Ensemble.from_columns(cfg, window_counts=wc[:, ::-1])
    assert check_bernoulli_reduction(rev, lam, HALF, t, [1.0, 2.0, 4.0], P).verdict == FAIL


# --- envelopes ---------------------------------------------------------------------------


def test_envelope_grid_shape():
    grid = default_grid()
    assert len(grid) >= 12
    assert len({(c.beta, c.x0, c.t, c.s, c.lam) for c in grid}) == len(grid)
    for c in grid:
        assert c.lam < c.beta


def test_envelope_case_validation():
    with pytest.raises(Exception):
        EnvelopeCase(1.0, 0.0, 5.0, 1.0, 1.0, HALF, HALF)
    with pytest.raises(Exception):
        EnvelopeCase(1.0, 0.0, 5.0, 5.0, 0.5, HALF, HALF)
    with pytest.raises(Exception):
        EnvelopeCase(1.0, 0.0, 1.0, 0.0, 0.5, IntervalSet.half_line(-2.0), HALF)


def test_envelopes_hold_on_simulation_and_fail_on_inflated_counts():
    case = EnvelopeCase(1.0, 0.0, 6.0, 2.0, 0.5, HALF, HALF)
    ens = run_ensemble(case.config(4000, 1))
    rep = check_envelopes(ens, case)
    assert rep.passed, summary_table([rep])
    ens.window_counts = ens.window_counts * 3 + 1
    ens.counts = ens.counts * 3
    assert check_envelopes(ens, case).verdict == FAIL


def test_envelope_suite_runs_on_a_small_grid():
    rep = run_envelope_suite(default_grid()[:2], replicates=1500)
    assert rep.passed and len(rep.parts) == 2
