"""Statistical checks of simulated ensembles against exact and limiting predictions.

All checks take an :class:`~catalytic_bbm.simulator.Ensemble` (or a mapping
of them) and return a :class:`TestReport`.  Aborted replicates are dropped.
Limit laws are compared at finite time with an explicit slack; where a
discrepancy should shrink with time, a trend over several times is checked
as well.
"""

from __future__ import annotations

import math
import time as _time
from typing import Mapping, Sequence

import numpy as np

from .. import analytics as an
from ..analytics import ModelParams
from ..errors import DomainError, ValidationError
from ..intervals import IntervalSet
from ..simulator import CountingWindow, Ensemble
from .report import FAIL, PASS, TestReport

MIN_REPLICATES = 100
N_SE = 3.0
PGF_POINTS = (0.25, 0.5, 0.75)
MIN_EXPECTED_HITS = 50


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = x.size
    m = float(np.mean(x))
    se = float(np.std(x, ddof=1) / math.sqrt(n)) if n > 1 else math.inf
    return m, se


def _binomial_se(p: float, n: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / n)


def _usable(ens: Ensemble) -> Ensemble:
    return ens if ens.ok.all() else ens.subset(ens.ok)


def window_reference(window: CountingWindow, time: float, params: ModelParams) -> float:
    """Exact mean count of ``window`` at ``time``."""
    shifted = window.base.shift(window.drift * time)
    if not shifted:
        return 0.0
    # counting in -D from x0 is counting in D from -x0
    x0 = params.x0 if window.side == "plus" else -params.x0
    return an.expected_count(x0, time, shifted, params.beta)


def check_first_moment(records: Ensemble, window: CountingWindow | None, time: float,
                       params: ModelParams, n_se: float = N_SE) -> TestReport:
    """Ensemble mean of a window count (or the total count if ``window`` is None) vs its exact mean."""
    start = _time.perf_counter()
    name = f"first moment t={time:g}" + (f" {window.render()}" if window else " total")
    ens = _usable(records)
    if len(ens) < MIN_REPLICATES:
        return TestReport.inconclusive(name, f"only {len(ens)} usable replicates")
    c = ens.index(time)
    if window is None:
        x = ens.counts[:, c]
        ref = an.expected_population(params.x0, time, params.beta)
    else:
        x = ens.window_counts[:, c, ens.window_index(window)]
        ref = window_reference(window, time, params)
    m, se = _mean_se(x)
    tol = max(n_se * se, 1e-12 * max(abs(ref), 1.0))
    return TestReport.compare(name, m, ref, tol, se, runtime=_time.perf_counter() - start)


def check_martingale(records: Ensemble, params: ModelParams, n_se: float = N_SE) -> TestReport:
    """Mean of M_t at every checkpoint, shrinking increments, and positivity at the horizon."""
    start = _time.perf_counter()
    ens = _usable(records)
    times = ens.times
    if times.size < 2:
        raise ValidationError("the martingale check needs at least two checkpoints")
    if len(ens) < MIN_REPLICATES:
        return TestReport.inconclusive("martingale", f"only {len(ens)} usable replicates")
    ref = math.exp(-params.beta * abs(params.x0))
    parts = []
    for c, t in enumerate(times):
        m, se = _mean_se(ens.martingale[:, c])
        parts.append(TestReport.compare(f"E M_{t:g}", m, ref, max(n_se * se, 1e-12), se))
    if times.size >= 3:
        first = float(np.mean(np.abs(ens.martingale[:, 1] - ens.martingale[:, 0])))
        last = float(np.mean(np.abs(ens.martingale[:, -1] - ens.martingale[:, -2])))
        parts.append(TestReport.at_most(
            f"mean |M_{times[-1]:g} - M_{times[-2]:g}| <= mean |M_{times[1]:g} - M_{times[0]:g}|",
            last, first, 0.0))
    low = float(np.min(ens.martingale[:, -1]))
    parts.append(TestReport(f"min M_{times[-1]:g} > 0", low, 0.0, 0.0, verdict=PASS if low > 0 else FAIL,
                            kind="positivity"))
    return TestReport.combine("martingale", parts, _time.perf_counter() - start)


def _check_critical(window: CountingWindow, beta: float) -> None:
    if not math.isclose(window.drift, beta / 2, rel_tol=1e-9):
        raise ValidationError(f"window {window.render()} does not move at the critical speed beta/2={beta / 2:g}")


def check_mixed_poisson(records: Ensemble, windows: Sequence[CountingWindow], counts_spec,
                        params: ModelParams, s_checkpoint: float, time: float | None = None,
                        bias_allowance: float = 0.02, n_se: float = N_SE,
                        pgf_points: Sequence[float] = PGF_POINTS) -> TestReport:
    """Joint counts in critical windows vs the Poisson law mixed over per-replicate M_s.

    ``counts_spec`` lists the count vectors (one entry per window) to compare.
    The pgf of the total count over all windows is compared at ``pgf_points``.
    The largest absolute discrepancy is kept in ``details["max_discrepancy"]``.
    """
    start = _time.perf_counter()
    ens = _usable(records)
    time = ens.config.horizon if time is None else time
    name = f"mixed Poisson t={time:g} s={s_checkpoint:g}"
    for w in windows:
        _check_critical(w, params.beta)
    if not s_checkpoint < time:
        raise ValidationError("the mixing checkpoint must precede the observation time")
    n = len(ens)
    if n < MIN_REPLICATES:
        return TestReport.inconclusive(name, f"only {n} usable replicates")
    h, s = ens.index(time), ens.index(s_checkpoint)
    mixing = ens.martingale[:, s]
    mus = [an.mu_measure(w.base, params.beta) for w in windows]
    cols = [ens.window_counts[:, h, ens.window_index(w)] for w in windows]
    parts = []
    worst = 0.0
    for spec in counts_spec:
        spec = tuple(int(k) for k in spec)
        if len(spec) != len(windows):
            raise ValidationError(f"count vector {spec} does not match {len(windows)} windows")
        hit = np.ones(n, dtype=bool)
        for col, k in zip(cols, spec):
            hit &= col == k
        emp = float(np.mean(hit))
        pred = an.mixed_poisson_joint_pmf(list(zip(mus, spec)), mixing)
        se = _binomial_se(pred, n)
        label = f"P(N={spec})"
        if pred * n < 10 and pred < 1:
            parts.append(TestReport.inconclusive(label, f"expected cell count {pred * n:.1f} < 10"))
            continue
        worst = max(worst, abs(emp - pred))
        parts.append(TestReport.compare(label, emp, pred, max(n_se * se, bias_allowance), se))
    total = np.sum(cols, axis=0) if cols else np.zeros(n)
    mu_total = float(sum(mus))
    for z in pgf_points:
        emp_vals = np.power(z, total)
        emp, se = _mean_se(emp_vals)
        pred = an.mixed_poisson_pgf(z, mu_total, mixing)
        worst = max(worst, abs(emp - pred))
        parts.append(TestReport.compare(f"E z^N z={z:g}", emp, pred, max(n_se * se, bias_allowance), se))
    return TestReport.combine(name, parts, _time.perf_counter() - start, max_discrepancy=worst)


def check_product_form(records: Ensemble, plus: CountingWindow, minus: CountingWindow,
                       params: ModelParams, s_checkpoint: float, time: float | None = None,
                       bias_allowance: float = 0.02, n_se: float = N_SE) -> TestReport:
    """Two-sided windows: joint emptiness vs the mixture, and factorisation given M_s.

    Given M_s the two window counts are asymptotically independent Poisson, so
    ``P(both empty) - E[P(plus empty | M_s) P(minus empty | M_s)]`` should
    vanish; the empirical conditional factors are the mixture predictions.
    """
    start = _time.perf_counter()
    ens = _usable(records)
    time = ens.config.horizon if time is None else time
    joint = check_mixed_poisson(ens, [plus, minus], [(0, 0)], params, s_checkpoint, time,
                                bias_allowance, n_se, pgf_points=())
    h = ens.index(time)
    a = ens.window_counts[:, h, ens.window_index(plus)] == 0
    b = ens.window_counts[:, h, ens.window_index(minus)] == 0
    # empirical factorisation: joint vs product of marginals
    p_ab, p_a, p_b = float(np.mean(a & b)), float(np.mean(a)), float(np.mean(b))
    fact = TestReport.compare("P(both empty) - P(plus empty) P(minus empty)", p_ab - p_a * p_b,
                              _product_form_reference(ens, plus, minus, params, s_checkpoint),
                              bias_allowance)
    return TestReport.combine(f"two-sided frontier t={time:g}", [joint, fact], _time.perf_counter() - start)


def _product_form_reference(ens, plus, minus, params, s_checkpoint) -> float:
    # the mixture makes the two counts positively correlated through M
    m = ens.martingale[:, ens.index(s_checkpoint)]
    ma, mb = an.mu_measure(plus.base, params.beta), an.mu_measure(minus.base, params.beta)
    return float(np.mean(np.exp(-(ma + mb) * m)) - np.mean(np.exp(-ma * m)) * np.mean(np.exp(-mb * m)))


def _series(ensembles_by_t: Mapping[float, Ensemble]):
    items = sorted((float(t), _usable(e)) for t, e in ensembles_by_t.items())
    return [t for t, _ in items], [e for _, e in items]


def check_growth_rate(ensembles_by_t: Mapping[float, Ensemble], lam: float, window: IntervalSet,
                      params: ModelParams, slope_rtol: float = 0.15,
                      ratio_band: tuple[float, float] = (0.8, 1.25)) -> TestReport:
    """Exponential growth of a subcritical speed class ``window + lam t``.

    Each ensemble must carry the window ``CountingWindow(window, lam)``
    observed at its key time.
    """
    start = _time.perf_counter()
    beta = params.beta
    if not 0 <= lam < beta / 2:
        raise DomainError(f"growth check needs 0 <= lam < beta/2, got lam={lam}")
    times, ens = _series(ensembles_by_t)
    if len(times) < 4:
        raise ValidationError("growth check needs at least four horizons")
    name = f"growth lam={lam:g}"
    if any(len(e) < MIN_REPLICATES for e in ens):
        return TestReport.inconclusive(name, "too few usable replicates at some horizon")
    win = CountingWindow(window, lam)
    target = an.delta_lambda(lam, beta) if lam > 0 else beta * beta / 2
    means = []
    for t, e in zip(times, ens):
        means.append(float(np.mean(e.window_counts[:, e.index(t), e.window_index(win)])))
    if min(means) <= 0:
        return TestReport.inconclusive(name, "zero mean count at some horizon")
    slope = float(np.polyfit(times, np.log(means), 1)[0])
    parts = [TestReport.compare("slope of log mean count", slope, target, slope_rtol * abs(target))]
    t_last, e_last = times[-1], ens[-1]
    c = e_last.index(t_last)
    counts = e_last.window_counts[:, c, e_last.window_index(win)]
    ratio = math.exp(-target * t_last) * counts / (an.mu_measure(window, beta) * e_last.martingale[:, c])
    med = float(np.median(ratio))
    lo, hi = ratio_band
    centre, half = (lo + hi) / 2, (hi - lo) / 2
    parts.append(TestReport.compare(f"median scaled count / (mu M) at t={t_last:g}", med, centre, half,
                                    note=f"band [{lo:g}, {hi:g}]"))
    return TestReport.combine(name, parts, _time.perf_counter() - start, slope=slope, means=means)


def check_survival_decay(ensembles_by_t: Mapping[float, Ensemble], lam: float, A: IntervalSet,
                         B: IntervalSet, params: ModelParams,
                         band: tuple[float, float] = (0.6, 1.4)) -> TestReport:
    """Decay of the probability that a supercritical window is occupied.

    ``r(t) = exp(-Delta t) P(count > 0)`` must be within ``band`` times the
    asymptote at the largest horizon, and ``|r(t) - asymptote|`` must not
    grow along the horizons.  The band is an engineering choice: the rate of
    convergence is not known.
    """
    start = _time.perf_counter()
    beta = params.beta
    if not beta / 2 < lam < beta:
        raise DomainError(f"survival check needs beta/2 < lam < beta, got lam={lam}")
    times, ens = _series(ensembles_by_t)
    if len(times) < 1:
        raise ValidationError("no horizons given")
    name = f"survival decay lam={lam:g}"
    asym = an.survival_asymptote(params.x0, A, B, beta)
    delta = an.delta_lambda(lam, beta)
    wins = []
    if A:
        wins.append(CountingWindow(A, lam, "plus"))
    if B:
        wins.append(CountingWindow(B, lam, "minus"))
    r_values, ses, hits = [], [], []
    for t, e in zip(times, ens):
        c = e.index(t)
        occupied = np.zeros(len(e), dtype=bool)
        for w in wins:
            occupied |= e.window_counts[:, c, e.window_index(w)] > 0
        p = float(np.mean(occupied))
        scale = math.exp(-delta * t)
        r_values.append(scale * p)
        ses.append(scale * _binomial_se(p, len(e)))
        hits.append(int(np.count_nonzero(occupied)))
    details = dict(r=r_values, se=ses, positives=hits, asymptote=asym, times=times)
    if asym == 0:
        verdict = PASS if max(hits) == 0 else FAIL
        return TestReport(name, float(max(hits)), 0.0, 0.0, verdict=verdict, kind="count",
                          runtime=_time.perf_counter() - start, details=details)
    expected = len(ens[-1]) * asym * math.exp(delta * times[-1])
    if hits[-1] == 0 or expected < MIN_EXPECTED_HITS:
        return TestReport.inconclusive(name, f"{hits[-1]} positives observed, {expected:.1f} expected",
                                       details=details)
    lo, hi = band
    parts = [TestReport.compare(f"r({times[-1]:g}) / asymptote", r_values[-1] / asym, (lo + hi) / 2,
                                (hi - lo) / 2, ses[-1] / asym, note=f"band [{lo:g}, {hi:g}] (engineering choice)")]
    gaps = [abs(r - asym) for r in r_values]
    for (t1, g1), (t2, g2) in zip(zip(times, gaps), zip(times[1:], gaps[1:])):
        parts.append(TestReport.at_most(f"|r - asymptote| at t={t2:g} <= at t={t1:g}", g2, g1, 0.0))
    return TestReport.combine(name, parts, _time.perf_counter() - start, **details)


def _ecdf(sample: np.ndarray, grid: np.ndarray) -> np.ndarray:
    s = np.sort(sample)
    return np.searchsorted(s, grid, side="right") / s.size


def check_extremes(records: Ensemble, params: ModelParams, mixing_checkpoint: float,
                   time: float | None = None, grid: Sequence[float] | None = None,
                   slack: float = 0.03, orders: Sequence[int] = (2, 3),
                   joint_grid: Sequence[float] = (-1.0, 0.0, 1.0)) -> TestReport:
    """Rightmost, n-th rightmost and joint (leftmost, rightmost) laws around the critical front."""
    start = _time.perf_counter()
    ens = _usable(records)
    time = ens.config.horizon if time is None else time
    name = f"extremes t={time:g} s={mixing_checkpoint:g}"
    if len(ens) < MIN_REPLICATES:
        return TestReport.inconclusive(name, f"only {len(ens)} usable replicates")
    if max(orders, default=1) > ens.config.top_k:
        raise ValidationError(f"order {max(orders)} needs top_k >= {max(orders)}")
    beta = params.beta
    h = ens.index(time)
    mixing = ens.martingale[:, ens.index(mixing_checkpoint)]
    grid = np.linspace(-3.0, 4.0, 71) if grid is None else np.asarray(grid, dtype=float)
    front = beta * time / 2
    parts = []
    curves = {}
    for n in (1, *orders):
        # fewer than n particles: the n-th position is -inf
        pos = np.nan_to_num(ens.top[:, h, n - 1], nan=-np.inf) - front
        emp = _ecdf(pos, grid)
        pred = np.array([an.nth_rightmost_cdf_limit(n, x, beta, mixing) for x in grid])
        curves[n] = (emp, pred)
        d = np.abs(emp - pred)
        j = int(np.argmax(d))
        parts.append(TestReport.compare(f"sup |F_{n} - limit|", float(d[j]), 0.0, slack,
                                        note=f"worst at x={grid[j]:g}"))
    for n in orders:
        emp_gap = float(np.max(curves[1][0] - curves[n][0]))
        pred_gap = float(np.max(curves[1][1] - curves[n][1]))
        parts.append(TestReport.at_most(f"F_1 <= F_{n} (empirical)", emp_gap, 0.0, 0.0))
        parts.append(TestReport.at_most(f"F_1 <= F_{n} (limit)", pred_gap, 0.0, 0.0))
    right = ens.top[:, h, 0] - front
    left = ens.leftmost[:, h] + front
    worst = 0.0
    for xm in joint_grid:
        for xp in joint_grid:
            emp = float(np.mean((left <= xm) & (right <= xp)))
            pred = an.extremes_joint_limit(xm, xp, beta, mixing)
            worst = max(worst, abs(emp - pred))
    parts.append(TestReport.compare("max joint (leftmost, rightmost) cell error", worst, 0.0, slack))
    return TestReport.combine(name, parts, _time.perf_counter() - start)


def check_slln(records: Ensemble, window: CountingWindow, params: ModelParams, time: float | None = None,
               band: tuple[float, float] = (0.85, 1.18)) -> TestReport:
    """Median of ``exp(-beta^2 t/2) count / (pi(A) M_t)`` for a fixed window."""
    start = _time.perf_counter()
    ens = _usable(records)
    time = ens.config.horizon if time is None else time
    if window.drift != 0:
        raise ValidationError("the strong-law check uses a fixed window (drift 0)")
    region = window.base if window.side == "plus" else IntervalSet(
        [(-hi, -lo) for lo, hi in reversed(window.base.intervals)]
    )
    c = ens.index(time)
    counts = ens.window_counts[:, c, ens.window_index(window)]
    scale = math.exp(-0.5 * params.beta ** 2 * time)
    ratio = scale * counts / (an.pi_measure(region, params.beta) * ens.martingale[:, c])
    med = float(np.median(ratio))
    lo, hi = band
    return TestReport.compare(f"median scaled count / (pi M) t={time:g}", med, (lo + hi) / 2, (hi - lo) / 2,
                              note=f"band [{lo:g}, {hi:g}]", runtime=_time.perf_counter() - start)


def check_bernoulli_reduction(records: Ensemble, lam: float, A: IntervalSet, t: float,
                              s_values: Sequence[float], params: ModelParams) -> TestReport:
    """``P(count > 1 | count > 0)`` for the window ``A + lam t`` at time ``t - s`` shrinks as ``s`` grows.

    The ensemble must observe ``CountingWindow(A.shift(lam t))`` at every
    time ``t - s``.
    """
    start = _time.perf_counter()
    ens = _usable(records)
    win = CountingWindow(A.shift(lam * t), 0.0)
    w = ens.window_index(win)
    ratios = []
    for s in sorted(s_values):
        n = ens.window_counts[:, ens.index(t - s), w]
        pos = np.count_nonzero(n > 0)
        if pos == 0:
            return TestReport.inconclusive("Bernoulli reduction", f"no occupied windows at s={s:g}")
        ratios.append(np.count_nonzero(n > 1) / pos)
    parts = [
        TestReport.at_most(f"ratio at s={s2:g} <= at s={s1:g}", r2, r1, 0.0)
        for (s1, r1), (s2, r2) in zip(zip(sorted(s_values), ratios), zip(sorted(s_values)[1:], ratios[1:]))
    ]
    return TestReport.combine("Bernoulli reduction", parts, _time.perf_counter() - start, ratios=ratios)
