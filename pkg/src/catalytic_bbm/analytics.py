"""Closed-form and quadrature evaluation of the model's exact moments and limit laws.

Everything here is a pure function of its arguments.  Limit laws that are
expectations against the (unknown) law of the martingale limit take an
empirical :class:`MixingSample` instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import integrate, special

from .errors import DomainError, NumericalError, ValidationError
from .intervals import IntervalSet

__all__ = [
    "ModelParams",
    "SpeedClass",
    "MixingSample",
    "mu_measure",
    "pi_measure",
    "delta_lambda",
    "normal_cdf",
    "transition_density",
    "expected_count",
    "expected_population",
    "population_upper_bound",
    "second_moment_bound",
    "factorial_second_moment",
    "mixed_poisson_joint_pmf",
    "mixed_poisson_pgf",
    "rightmost_cdf_limit",
    "nth_rightmost_cdf_limit",
    "extremes_joint_limit",
    "survival_asymptote",
]

_SQRT2 = math.sqrt(2.0)
QUAD_RTOL = 1e-10


@dataclass(frozen=True)
class ModelParams:
    beta: float
    x0: float = 0.0

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ValidationError(f"beta must be a positive finite number, got {self.beta!r}")
        if not math.isfinite(self.x0):
            raise ValidationError(f"x0 must be finite, got {self.x0!r}")


@dataclass(frozen=True)
class SpeedClass:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError(f"speed must be positive, got {self.lam!r}")

    def regime(self, beta: float) -> str:
        """One of 'subcritical', 'critical', 'supercritical', 'out-of-scope'."""
        if self.lam >= beta:
            return "out-of-scope"
        half = beta / 2.0
        if self.lam < half:
            return "subcritical"
        if self.lam == half:
            return "critical"
        return "supercritical"


class MixingSample:
    """Empirical stand-in for the law of the martingale limit."""

    def __init__(self, values: Iterable[float]):
        arr = np.asarray(list(values) if not isinstance(values, np.ndarray) else values, dtype=float)
        arr = arr.ravel()
        if np.any(~np.isfinite(arr)) or np.any(arr < 0):
            raise ValidationError("mixing values must be finite and non-negative")
        self.values = arr

    def __len__(self) -> int:
        return self.values.size

    def __repr__(self) -> str:
        return f"MixingSample(n={self.values.size}, mean={self.values.mean() if self.values.size else float('nan'):.6g})"


def _mixing_values(mixing) -> np.ndarray:
    if not isinstance(mixing, MixingSample):
        mixing = MixingSample(mixing)
    if len(mixing) == 0:
        raise DomainError("mixing sample is empty")
    return mixing.values


def _check_beta(beta: float) -> None:
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta!r}")


# ---------------------------------------------------------------------------
# measures and rates


def mu_measure(set: IntervalSet, beta: float) -> float:
    """Frontier intensity ``int_D beta e^{-beta y} dy`` (not normalised)."""
    _check_beta(beta)
    total = 0.0
    for lo, hi in set:
        if lo == -math.inf:
            raise DomainError("mu is infinite on sets unbounded below")
        # e^{-b lo} - e^{-b hi} = e^{-b lo} (1 - e^{-b (hi - lo)})
        total += math.exp(-beta * lo) * -math.expm1(-beta * (hi - lo))
    return total


def pi_measure(set: IntervalSet, beta: float) -> float:
    """Invariant measure ``int_D beta e^{-beta |x|} dx``; total mass 2."""
    _check_beta(beta)
    total = 0.0
    for lo, hi in set:
        if hi > 0:
            a = max(lo, 0.0)
            total += math.exp(-beta * a) * -math.expm1(-beta * (hi - a))
        if lo < 0:
            b = min(hi, 0.0)
            total += math.exp(beta * b) * -math.expm1(-beta * (b - lo))
    return total


def delta_lambda(lam: float, beta: float) -> float:
    """Exponential growth rate of the number of particles beyond ``lam * t``."""
    _check_beta(beta)
    if not lam > 0:
        raise DomainError(f"lam must be positive, got {lam!r}")
    if lam <= beta:
        return 0.5 * beta * beta - beta * lam
    return -0.5 * lam * lam


def normal_cdf(z):
    """Standard normal CDF via ``erfc``; works on scalars and arrays."""
    if np.ndim(z) == 0:
        return 0.5 * math.erfc(-float(z) / _SQRT2)
    return 0.5 * special.erfc(-np.asarray(z, dtype=float) / _SQRT2)


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / _SQRT2)


# ---------------------------------------------------------------------------
# first moment


def transition_density(x0: float, x, t: float, beta: float):
    """Density of the Girsanov-tilted spine, which drifts towards the origin at speed beta."""
    _check_beta(beta)
    if not t > 0:
        raise DomainError(f"transition density needs t > 0, got t={t!r}")
    x = np.asarray(x, dtype=float)
    ax0, ax = abs(x0), np.abs(x)
    sq = math.sqrt(t)
    gauss = np.exp(beta * (ax0 - ax) - 0.5 * beta * beta * t - (x0 - x) ** 2 / (2 * t)) / math.sqrt(
        2 * math.pi * t
    )
    tilt = beta * np.exp(-2 * beta * ax) * normal_cdf((beta * t - ax0 - ax) / sq)
    out = gauss + tilt
    return float(out) if out.ndim == 0 else out


def _gaussian_mass(x0: float, t: float, lo: float, hi: float) -> float:
    """P(N(x0, t) in [lo, hi)), computed on the tail side that avoids cancellation."""
    sq = math.sqrt(t)
    a, b = (lo - x0) / sq, (hi - x0) / sq
    if a > 0:
        return _normal_sf(a) - _normal_sf(b)
    return normal_cdf(b) - normal_cdf(a)


def _quad(f, a: float, b: float, rtol: float, what: str) -> float:
    if b <= a:
        return 0.0
    res = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=200, full_output=1)
    value, abserr, info = res[0], res[1], res[2]
    if len(res) > 3:
        raise NumericalError(
            f"quadrature did not converge for {what}",
            interval=(a, b),
            estimate=value,
            abserr=abserr,
            neval=info.get("neval"),
            detail=res[3],
        )
    return value


def expected_count(x0: float, t: float, set: IntervalSet, beta: float, rtol: float = QUAD_RTOL) -> float:
    """Expected number of particles inside ``set`` at time ``t``, started from one particle at ``x0``.

    The free-Brownian term is an exact normal probability.  On each piece of
    ``set`` with ``|x|`` running over ``[a, b)``, the branching term is
    integrated in ``w = 1 - exp(-beta (|x| - a))``, which maps the piece
    (including half-lines) onto a sub-interval of ``[0, 1)`` with a bounded
    integrand; the factor ``exp(-beta a)`` is folded into the exponent.
    """
    _check_beta(beta)
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t!r}")
    if t == 0:
        return float(bool(set.contains(x0)))
    sq = math.sqrt(t)
    ax0 = abs(x0)
    free = 0.0
    catalytic = 0.0
    for lo, hi in set.split_at([0.0]):
        free += _gaussian_mass(x0, t, lo, hi)
        a, b = (lo, hi) if lo >= 0 else (-hi, -lo)
        centre = (beta * t - ax0 - a) / sq

        def h(w: float, centre=centre) -> float:
            return normal_cdf(centre + math.log1p(-w) / (beta * sq))

        integral = _quad(h, 0.0, -math.expm1(-beta * (b - a)), rtol, f"piece [{lo}, {hi})")
        if integral > 0:
            catalytic += integral * math.exp(-beta * (ax0 + a) + 0.5 * beta * beta * t)
    return free + catalytic


def expected_population(x0: float, t: float, beta: float) -> float:
    """Exact mean of the total population at time ``t``."""
    _check_beta(beta)
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t!r}")
    if t == 0:
        return 1.0
    ax0, sq = abs(x0), math.sqrt(t)
    # 1 - 2 Phi(-|x0|/sqrt t) = erf(|x0| / sqrt(2t))
    return math.erf(ax0 / (_SQRT2 * sq)) + 2.0 * math.exp(-beta * ax0 + 0.5 * beta * beta * t) * normal_cdf(
        beta * sq - ax0 / sq
    )


def population_upper_bound(x0: float, t: float, beta: float) -> float:
    """``1 + 2 exp(-beta|x0| + beta^2 t / 2)``, an upper bound for :func:`expected_population`."""
    _check_beta(beta)
    return 1.0 + 2.0 * math.exp(-beta * abs(x0) + 0.5 * beta * beta * t)


def _population_rate(x0: float, tau: float, beta: float) -> float:
    """d/dtau of the expected population at time ``tau`` from ``x0``."""
    a = abs(x0)
    sq = math.sqrt(tau)
    z = beta * sq - a / sq
    free = -a / (math.sqrt(2.0 * math.pi) * tau * sq) * math.exp(-a * a / (2.0 * tau)) if a > 0 else 0.0
    dens = math.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
    dz = beta / (2.0 * sq) + a / (2.0 * tau * sq)
    return free + 2.0 * math.exp(-beta * a + 0.5 * beta * beta * tau) * (0.5 * beta * beta * normal_cdf(z) + dens * dz)


def factorial_second_moment(x0: float, t: float, set: IntervalSet, beta: float, rtol: float = 1e-8) -> float:
    """Exact ``E N(N - 1)`` for ``N`` the number of particles in ``set`` at time ``t``.

    Every branching splits the population into two independent subtrees
    rooted at 0, and branchings occur at the rate at which the expected
    population grows, so
    ``E N(N-1) = 2 int_0^t m_0(t - tau)^2 d/dtau E|N_tau| dtau`` with
    ``m_0(u)`` the expected count in ``set`` from the origin after time ``u``.
    """
    _check_beta(beta)
    if t < 0:
        raise DomainError(f"t must be non-negative, got {t!r}")
    if t == 0 or not set:
        return 0.0

    # tau = v^2 removes the 1/sqrt(tau) singularity of the rate at the origin
    def f(v: float) -> float:
        tau = v * v
        if tau <= 0.0 or tau >= t:
            return 0.0
        return expected_count(0.0, t - tau, set, beta) ** 2 * _population_rate(x0, tau, beta) * 2.0 * v

    root = math.sqrt(t)
    return 2.0 * _quad(f, 0.0, root, rtol, "factorial second moment")


def second_moment_bound(
    x0: float,
    t: float,
    s: float,
    lam: float,
    A: IntervalSet,
    B: IntervalSet,
    beta: float,
    full: bool = False,
) -> float:
    """Correction term bounding ``E N^2 - E N`` for ``N`` the count in ``(A + lam t) u (-B - lam t)`` at ``t - s``.

    With ``full=True`` returns the whole right-hand side, i.e. the exact first
    moment plus the correction.
    """
    _check_beta(beta)
    if not 0 < lam < beta:
        raise DomainError(f"need 0 < lam < beta, got lam={lam!r}, beta={beta!r}")
    if not 0 <= s <= t:
        raise DomainError(f"need 0 <= s <= t, got s={s!r}, t={t!r}")
    if A.inf + lam * t < 0 or B.inf + lam * t < 0:
        raise DomainError("need inf A + lam t >= 0 and inf B + lam t >= 0")
    # 2 from the pair term of the second-moment identity; its time integral
    # int e^{-beta^2 tau} d E|N_tau| is at most 4 e^{-beta|x0|} (1 + sqrt 2 at x0 = 0)
    const = 8.0 * (math.exp(-beta * A.inf) + math.exp(-beta * B.inf)) ** 2
    correction = const * math.exp(-beta * abs(x0) - beta * beta * s + 2.0 * delta_lambda(lam, beta) * t)
    if not full:
        return correction
    first = expected_count(x0, t - s, A.shift(lam * t), beta) if A else 0.0
    # count in -D from x0 equals count in D from -x0
    if B:
        first += expected_count(-x0, t - s, B.shift(lam * t), beta)
    return first + correction


# ---------------------------------------------------------------------------
# limit laws against an empirical mixing sample


def mixed_poisson_joint_pmf(counts: Sequence[tuple[float, int]], mixing) -> float:
    """Empirical-mixture probability of the joint counts ``[(mu_i, k_i), ...]``.

    Averages ``prod_i Poisson(k_i; mu_i m)`` over the mixing values ``m``.
    """
    m = _mixing_values(mixing)
    logp = np.zeros_like(m)
    for set_mu, k in counts:
        if set_mu < 0:
            raise DomainError(f"set measure must be non-negative, got {set_mu!r}")
        if int(k) != k or k < 0:
            raise DomainError(f"counts must be non-negative integers, got {k!r}")
        k = int(k)
        lam = set_mu * m
        with np.errstate(divide="ignore"):
            if k == 0:
                logp = logp - lam
            else:
                logp = logp + k * np.log(lam) - math.lgamma(k + 1) - lam
    return float(np.mean(np.exp(logp)))


def mixed_poisson_pgf(z: float, set_mu: float, mixing) -> float:
    """``E[z^N]`` for ``N`` mixed Poisson with intensity ``set_mu * m``."""
    m = _mixing_values(mixing)
    return float(np.mean(np.exp(-set_mu * (1.0 - z) * m)))


def _poisson_cdf_terms(n: int, lam: np.ndarray) -> np.ndarray:
    term = np.exp(-lam)
    acc = term.copy()
    for k in range(1, n):
        term = term * lam / k
        acc += term
    return acc


def nth_rightmost_cdf_limit(n: int, x: float, beta: float, mixing) -> float:
    """Limit of ``P(n-th largest position - beta t / 2 <= x)``."""
    if int(n) != n or n < 1:
        raise DomainError(f"n must be a positive integer, got {n!r}")
    _check_beta(beta)
    m = _mixing_values(mixing)
    with np.errstate(over="ignore", invalid="ignore"):
        lam = np.where(m > 0, np.exp(-beta * x) * m, 0.0)
        return float(np.mean(_poisson_cdf_terms(int(n), lam)))


def rightmost_cdf_limit(x: float, beta: float, mixing) -> float:
    """Limit of ``P(R_t - beta t / 2 <= x)``: ``E exp(-e^{-beta x} M)``."""
    return nth_rightmost_cdf_limit(1, x, beta, mixing)


def extremes_joint_limit(x_minus: float, x_plus: float, beta: float, mixing) -> float:
    """Limit of ``P(L_t + beta t/2 <= x_minus, R_t - beta t/2 <= x_plus)``."""
    _check_beta(beta)
    m = _mixing_values(mixing)
    with np.errstate(over="ignore", invalid="ignore"):
        right = np.where(m > 0, np.exp(-np.exp(-beta * x_plus) * m), 1.0)
        left = np.where(m > 0, -np.expm1(-np.exp(beta * x_minus) * m), 0.0)
    return float(np.mean(right * left))


def survival_asymptote(x0: float, A: IntervalSet, B: IntervalSet, beta: float) -> float:
    """Prefactor of ``e^{Delta t}`` in the probability that a supercritical window is occupied."""
    return (mu_measure(A, beta) + mu_measure(B, beta)) * math.exp(-beta * abs(x0))
