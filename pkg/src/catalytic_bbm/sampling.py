"""Exact samplers used by the event-driven simulator.

The ``_``-prefixed functions are numba kernels operating on a stream state
array (see :mod:`catalytic_bbm.rng`).  Rejection loops give up after
``MAX_REJECTIONS`` proposals and return NaN, which the Python wrappers turn
into :class:`~catalytic_bbm.errors.NumericalError`.

Laws used:

* first passage to 0 from ``x0``: ``T = x0^2 / Z^2`` (reflection principle);
* endpoint of a path that avoids 0: density proportional to
  ``phi_w(y - x0) - phi_w(y + x0)`` on the side of ``x0``;
* from the origin, ``(|X_w|, L_w)`` has the law of ``(U R, (1 - U) R)`` with
  ``R^2 / w`` chi-square with 3 degrees of freedom and ``U`` uniform (Levy);
* inverse local time ``tau_l = l^2 / Z^2``, so ``L_w >= l`` iff ``tau_l <= w``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DomainError, NumericalError
from .rng import RngStream, next_double

__all__ = [
    "MAX_REJECTIONS",
    "NoHit",
    "Hit",
    "Survived",
    "Branched",
    "sample_threshold",
    "sample_first_passage",
    "sample_no_hit_position",
    "sample_window_from_origin",
    "sample_truncated_normal_tail",
    "sample_many",
]

MAX_REJECTIONS = 1_000_000
TAIL_SWITCH = 1.0


@njit(cache=True)
def _std_normal(st):
    # Marsaglia polar method, second variate discarded
    while True:
        v1 = 2.0 * next_double(st) - 1.0
        v2 = 2.0 * next_double(st) - 1.0
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            return v1 * math.sqrt(-2.0 * math.log(s) / s)


@njit(cache=True)
def _exponential(rate, st):
    return -math.log(next_double(st)) / rate


@njit(cache=True)
def _truncated_normal_tail(a, st):
    """Z conditioned on |Z| >= a (a > 0); NaN if the rejection cap is hit."""
    if a < TAIL_SWITCH:
        for _ in range(MAX_REJECTIONS):
            z = _std_normal(st)
            if abs(z) >= a:
                return z
        return np.nan
    # exponential proposal on [a, inf) with the optimal rate
    alpha = 0.5 * (a + math.sqrt(a * a + 4.0))
    for _ in range(MAX_REJECTIONS):
        x = a - math.log(next_double(st)) / alpha
        d = x - alpha
        if math.log(next_double(st)) <= -0.5 * d * d:
            if next_double(st) < 0.5:
                return -x
            return x
    return np.nan


@njit(cache=True)
def _first_passage(x0, window, st):
    """Hitting time of 0 if it is <= window, else -1.0."""
    z = _std_normal(st)
    a = abs(x0) / math.sqrt(window)
    if abs(z) < a:
        return -1.0
    h = x0 * x0 / (z * z)
    return h if h <= window else window


@njit(cache=True)
def _no_hit_position(x0, window, st):
    a = abs(x0)
    sd = math.sqrt(window)
    for _ in range(MAX_REJECTIONS):
        y = a + sd * _std_normal(st)
        if y <= 0.0:
            continue
        if next_double(st) < -math.expm1(-2.0 * a * y / window):
            return y if x0 > 0 else -y
    return np.nan


@njit(cache=True)
def _window_from_origin(window, threshold, st):
    """Returns (branched, value): value is |X_window| if not branched, else the branch delay."""
    chi2 = -2.0 * math.log(next_double(st))
    z = _std_normal(st)
    r = math.sqrt(window * (chi2 + z * z))
    u = next_double(st)
    local_time = (1.0 - u) * r
    if local_time < threshold:
        return False, u * r
    zt = _truncated_normal_tail(threshold / math.sqrt(window), st)
    tau = threshold * threshold / (zt * zt)
    return True, tau if tau <= window else window


@njit(cache=True)
def _advance(x, t_from, t_to, threshold, st):
    """Move one particle from ``t_from`` to ``t_to`` unless it branches first.

    Returns (branched, value): the position at ``t_to`` or the branch time.
    """
    t = t_from
    if x != 0.0:
        h = _first_passage(x, t_to - t_from, st)
        if h < 0.0:
            return False, _no_hit_position(x, t_to - t_from, st)
        t = t_from + h
        if t >= t_to:
            return False, 0.0
    branched, v = _window_from_origin(t_to - t, threshold, st)
    if branched:
        return True, t + v
    if next_double(st) < 0.5:
        return False, -v
    return False, v


# ---------------------------------------------------------------------------
# Python-facing API


@dataclass(frozen=True)
class NoHit:
    pass


@dataclass(frozen=True)
class Hit:
    h: float


@dataclass(frozen=True)
class Survived:
    abs_position: float


@dataclass(frozen=True)
class Branched:
    elapsed: float


def _nan_check(value: float, what: str, **diag) -> float:
    if math.isnan(value):
        raise NumericalError(f"{what}: rejection cap of {MAX_REJECTIONS} proposals exceeded", **diag)
    return value


def sample_threshold(beta: float, rng: RngStream) -> float:
    """Local-time level at which a particle branches: Exponential(rate=beta)."""
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta!r}")
    return float(_exponential(float(beta), rng.state))


def sample_truncated_normal_tail(a: float, rng: RngStream) -> float:
    if not a > 0:
        raise DomainError(f"tail level must be positive, got {a!r}")
    return _nan_check(float(_truncated_normal_tail(float(a), rng.state)), "truncated normal tail", a=a)


def sample_first_passage(x0: float, window: float, rng: RngStream):
    """``Hit(h)`` if Brownian motion from ``x0`` reaches 0 at time ``h <= window``, else ``NoHit()``."""
    if x0 == 0 or not window > 0:
        raise DomainError(f"need x0 != 0 and window > 0, got x0={x0!r}, window={window!r}")
    h = float(_first_passage(float(x0), float(window), rng.state))
    return NoHit() if h < 0 else Hit(h)


def sample_no_hit_position(x0: float, window: float, rng: RngStream) -> float:
    """Position at ``window`` of Brownian motion from ``x0`` conditioned not to have hit 0."""
    if x0 == 0 or not window > 0:
        raise DomainError(f"need x0 != 0 and window > 0, got x0={x0!r}, window={window!r}")
    y = float(_no_hit_position(float(x0), float(window), rng.state))
    return _nan_check(y, "zero-avoiding endpoint", x0=x0, window=window)


def sample_window_from_origin(window: float, threshold: float, rng: RngStream):
    """Run a particle from the origin for ``window`` time units against a local-time ``threshold``."""
    if not window > 0 or not threshold > 0:
        raise DomainError(f"need window > 0 and threshold > 0, got {window!r}, {threshold!r}")
    branched, v = _window_from_origin(float(window), float(threshold), rng.state)
    v = _nan_check(float(v), "inverse local time", window=window, threshold=threshold)
    return Branched(v) if branched else Survived(v)


# vectorised drivers, mainly for statistical tests ----------------------------


@njit(cache=True)
def _many_threshold(n, beta, st):
    out = np.empty(n)
    for i in range(n):
        out[i] = _exponential(beta, st)
    return out


@njit(cache=True)
def _many_tail(n, a, st):
    out = np.empty(n)
    for i in range(n):
        out[i] = _truncated_normal_tail(a, st)
    return out


@njit(cache=True)
def _many_first_passage(n, x0, window, st):
    out = np.empty(n)
    for i in range(n):
        out[i] = _first_passage(x0, window, st)
    return out


@njit(cache=True)
def _many_no_hit(n, x0, window, st):
    out = np.empty(n)
    for i in range(n):
        out[i] = _no_hit_position(x0, window, st)
    return out


@njit(cache=True)
def _many_origin(n, window, threshold, st):
    flags = np.empty(n, dtype=np.bool_)
    vals = np.empty(n)
    for i in range(n):
        b, v = _window_from_origin(window, threshold, st)
        flags[i] = b
        vals[i] = v
    return flags, vals


@njit(cache=True)
def _many_origin_joint(n, window, st):
    # raw (|X|, L) pairs before any threshold comparison
    out = np.empty((n, 2))
    for i in range(n):
        chi2 = -2.0 * math.log(next_double(st))
        z = _std_normal(st)
        r = math.sqrt(window * (chi2 + z * z))
        u = next_double(st)
        out[i, 0] = u * r
        out[i, 1] = (1.0 - u) * r
    return out


@njit(cache=True)
def _many_advance(n, x, t_from, t_to, threshold, st):
    flags = np.empty(n, dtype=np.bool_)
    vals = np.empty(n)
    for i in range(n):
        b, v = _advance(x, t_from, t_to, threshold, st)
        flags[i] = b
        vals[i] = v
    return flags, vals


def sample_many(kind: str, n: int, rng: RngStream, **kw):
    """Draw ``n`` variates of one sampler in a single compiled loop.

    ``kind`` is one of ``threshold``, ``tail``, ``first_passage`` (NaN-free;
    -1 marks NoHit), ``no_hit``, ``origin`` (returns ``(branched, values)``),
    ``origin_joint`` (returns the ``(|X|, L)`` pairs) or ``advance``.
    """
    st = rng.state
    if kind == "threshold":
        return _many_threshold(n, float(kw["beta"]), st)
    if kind == "tail":
        return _many_tail(n, float(kw["a"]), st)
    if kind == "first_passage":
        return _many_first_passage(n, float(kw["x0"]), float(kw["window"]), st)
    if kind == "no_hit":
        return _many_no_hit(n, float(kw["x0"]), float(kw["window"]), st)
    if kind == "origin":
        return _many_origin(n, float(kw["window"]), float(kw["threshold"]), st)
    if kind == "origin_joint":
        return _many_origin_joint(n, float(kw["window"]), st)
    if kind == "advance":
        return _many_advance(
            n, float(kw["x"]), float(kw["t_from"]), float(kw["t_to"]), float(kw["threshold"]), st
        )
    raise ValueError(f"unknown sampler {kind!r}")
