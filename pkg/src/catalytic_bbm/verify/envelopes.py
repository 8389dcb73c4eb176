"""Empirical checks of the moment and probability inequalities.

All bounds here hold at every finite time, so each is tested as a one-sided
inequality with a 3 SE allowance.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass

import numpy as np

from .. import analytics as an
from ..analytics import ModelParams
from ..errors import DomainError
from ..intervals import IntervalSet
from ..simulator import CountingWindow, Ensemble, SimConfig, run_ensemble
from .checks import N_SE, _mean_se, _usable
from .report import TestReport


@dataclass(frozen=True)
class EnvelopeCase:
    """Count ``N`` in ``(A + lam t) u (-B - lam t)`` at time ``t - s`` from one particle at ``x0``."""

    beta: float
    x0: float
    t: float
    s: float
    lam: float
    A: IntervalSet
    B: IntervalSet

    def __post_init__(self):
        if not 0 < self.lam < self.beta:
            raise DomainError(f"need 0 < lam < beta, got lam={self.lam}, beta={self.beta}")
        if not 0 <= self.s < self.t:
            raise DomainError(f"need 0 <= s < t, got s={self.s}, t={self.t}")
        if self.A.inf + self.lam * self.t < 0 or self.B.inf + self.lam * self.t < 0:
            raise DomainError("need inf A + lam t >= 0 and inf B + lam t >= 0")

    @property
    def params(self) -> ModelParams:
        return ModelParams(self.beta, self.x0)

    @property
    def observation_time(self) -> float:
        return self.t - self.s

    def windows(self) -> tuple[CountingWindow, ...]:
        # the shift is fixed by t, not by the observation time t - s
        out = []
        if self.A:
            out.append(CountingWindow(self.A.shift(self.lam * self.t), 0.0, "plus"))
        if self.B:
            out.append(CountingWindow(self.B.shift(self.lam * self.t), 0.0, "minus"))
        return tuple(out)

    def config(self, replicates: int, seed: int) -> SimConfig:
        return SimConfig(self.params, self.observation_time, replicate_count=replicates, base_seed=seed,
                         windows=self.windows())

    def label(self) -> str:
        return (f"beta={self.beta:g} x0={self.x0:g} t={self.t:g} s={self.s:g} lam={self.lam:g} "
                f"A={self.A.render() or '{}'} B={self.B.render() or '{}'}")


def check_envelopes(records: Ensemble, case: EnvelopeCase, n_se: float = N_SE) -> TestReport:
    """Every finite-time inequality that applies to ``case``.

    * total population below ``1 + 2 exp(-beta|x0| + beta^2 u / 2)`` at ``u = t - s``;
    * for ``x0 = 0`` the window mean below ``(e^{-beta inf A'} + e^{-beta inf B'}) e^{beta^2 u/2}``
      with ``A' = A + lam t`` and ``B' = B + lam t``;
    * ``E N^2 <= E N + C exp(-beta|x0| - beta^2 s + 2 Delta t)``;
    * ``P(N > 1) <= C exp(-beta|x0| - beta^2 s + 2 Delta t)``;
    * Markov: ``P(N > 0) <= E N``;
    * Paley-Zygmund with the second-moment bound: ``P(N > 0) >= (E N)^2 / (E N + correction)``.

    ``E N`` is the exact first moment, not the sample mean.
    """
    start = _time.perf_counter()
    ens = _usable(records)
    beta, x0, u = case.beta, case.x0, case.observation_time
    n = np.zeros(len(ens))
    for w in case.windows():
        n += ens.window_counts[:, ens.index(u), ens.window_index(w)]
    total = ens.counts[:, ens.index(u)]
    exact_mean = 0.0
    if case.A:
        exact_mean += an.expected_count(x0, u, case.A.shift(case.lam * case.t), beta)
    if case.B:
        exact_mean += an.expected_count(-x0, u, case.B.shift(case.lam * case.t), beta)
    corr = an.second_moment_bound(x0, case.t, case.s, case.lam, case.A, case.B, beta)

    parts = []
    m, se = _mean_se(total)
    parts.append(TestReport.at_most("mean population <= 1 + 2 exp(-beta|x0| + beta^2 u/2)", m,
                                    an.population_upper_bound(x0, u, beta), se, n_se))
    if x0 == 0:
        bound = sum(math.exp(-beta * (D.inf + case.lam * case.t)) for D in (case.A, case.B) if D)
        m, se = _mean_se(n)
        parts.append(TestReport.at_most("mean window count <= exponential bound", m,
                                        bound * math.exp(0.5 * beta * beta * u), se, n_se))
    excess, se = _mean_se(n * n - n)
    parts.append(TestReport.at_most("E N^2 - E N <= correction", excess, corr, se, n_se))
    p_many, se = _mean_se(n > 1)
    parts.append(TestReport.at_most("P(N > 1) <= correction", p_many, corr, se, n_se))
    p_any, se = _mean_se(n > 0)
    parts.append(TestReport.at_most("P(N > 0) <= E N", p_any, exact_mean, se, n_se))
    if exact_mean > 0:
        pz = exact_mean ** 2 / (exact_mean + corr)
        parts.append(TestReport.at_least("P(N > 0) >= (E N)^2 / (E N + correction)", p_any, pz, se, n_se))
    return TestReport.combine(f"envelopes {case.label()}", parts, _time.perf_counter() - start)


def default_grid() -> list[EnvelopeCase]:
    """Sixteen parameter combinations with populations small enough for quick runs."""
    half = IntervalSet.half_line(0.0)
    unit = IntervalSet([(0.0, 1.0)])
    empty = IntervalSet.empty()
    shifted = IntervalSet.half_line(0.5)
    cases = []
    for beta in (1.0, 1.5):
        for x0 in (0.0, 0.5):
            for (t, s, lam, A, B) in (
                (6.0, 2.0, 0.5 * beta, half, half),
                (5.0, 1.0, 0.3 * beta, unit, empty),
                (4.0, 0.0, 0.75 * beta, half, empty),
                (6.0, 2.0, 0.6 * beta, shifted, unit),
            ):
                cases.append(EnvelopeCase(beta, x0, t, s, lam, A, B))
    return cases


def run_envelope_suite(cases=None, replicates: int = 4000, seed: int = 11) -> TestReport:
    start = _time.perf_counter()
    cases = default_grid() if cases is None else list(cases)
    reports = []
    for i, case in enumerate(cases):
        ens = run_ensemble(case.config(replicates, seed + i))
        reports.append(check_envelopes(ens, case))
    return TestReport.combine(f"envelope suite ({len(cases)} cases)", reports, _time.perf_counter() - start)
