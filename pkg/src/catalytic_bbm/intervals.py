"""Finite unions of half-open intervals ``[lo, hi)``.

This is the only kind of set the package works with.  Upper endpoints may be
``+inf``.  Lower endpoints must be finite unless the set is explicitly built
with ``allow_unbounded=True``, which integration routines accept (e.g. the
whole real line for total-mass checks) but the frontier measure ``mu`` and the
counting windows reject.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ValidationError

__all__ = ["IntervalSet"]

_INTERVAL_RE = re.compile(r"^\[\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$")


def _parse_number(token: str) -> float:
    low = token.strip().lower()
    if low in ("inf", "+inf", "infinity", "+infinity"):
        return math.inf
    if low in ("-inf", "-infinity"):
        return -math.inf
    try:
        return float(token)
    except ValueError:
        raise ValidationError(f"not a number: {token!r}") from None


def _format_number(x: float) -> str:
    if x == math.inf:
        return "inf"
    if x == -math.inf:
        return "-inf"
    return repr(float(x))


@dataclass(frozen=True)
class IntervalSet:
    """Sorted, pairwise disjoint half-open intervals.

    >>> IntervalSet([(0, 1), (2, math.inf)]).inf
    0.0
    """

    intervals: tuple[tuple[float, float], ...] = ()
    allow_unbounded: bool = field(default=False, compare=False)

    def __init__(self, intervals: Iterable[Sequence[float]] = (), allow_unbounded: bool = False):
        ivs = []
        for item in intervals:
            if len(item) != 2:
                raise ValidationError(f"interval must be a (lo, hi) pair, got {item!r}")
            lo, hi = float(item[0]), float(item[1])
            ivs.append((lo, hi))
        object.__setattr__(self, "intervals", tuple(ivs))
        object.__setattr__(self, "allow_unbounded", bool(allow_unbounded))
        self._validate()

    def _validate(self) -> None:
        prev_hi = -math.inf
        for i, (lo, hi) in enumerate(self.intervals):
            if math.isnan(lo) or math.isnan(hi):
                raise ValidationError(f"interval {i} has a NaN endpoint")
            if lo == math.inf or hi == -math.inf:
                raise ValidationError(f"interval {i} = [{lo}, {hi}) is degenerate at infinity")
            if lo == -math.inf and not self.allow_unbounded:
                raise ValidationError(
                    f"interval {i} is unbounded below; sets must satisfy inf > -inf"
                )
            if not lo < hi:
                raise ValidationError(f"interval {i} = [{lo}, {hi}) is empty or reversed")
            if i > 0 and lo < prev_hi:
                raise ValidationError(
                    f"interval {i} = [{lo}, {hi}) overlaps or is out of order "
                    f"(previous upper endpoint {prev_hi})"
                )
            prev_hi = hi

    # construction helpers -------------------------------------------------

    @classmethod
    def empty(cls) -> "IntervalSet":
        return cls(())

    @classmethod
    def half_line(cls, lo: float = 0.0) -> "IntervalSet":
        """``[lo, inf)``."""
        return cls([(lo, math.inf)])

    @classmethod
    def real_line(cls) -> "IntervalSet":
        return cls([(-math.inf, math.inf)], allow_unbounded=True)

    @classmethod
    def parse(cls, text: str) -> "IntervalSet":
        """Parse ``"[a,b);[c,inf)"``.  An empty string or ``"{}"`` is the empty set."""
        text = text.strip()
        if text in ("", "{}", "empty"):
            return cls.empty()
        parts = [p.strip() for p in text.split(";")]
        ivs = []
        for part in parts:
            m = _INTERVAL_RE.match(part)
            if m is None:
                raise ValidationError(f"malformed interval {part!r}; expected '[a,b)'")
            ivs.append((_parse_number(m.group(1)), _parse_number(m.group(2))))
        return cls(ivs)

    def render(self) -> str:
        return ";".join(f"[{_format_number(lo)},{_format_number(hi)})" for lo, hi in self.intervals)

    # basic properties -----------------------------------------------------

    def __iter__(self):
        return iter(self.intervals)

    def __len__(self) -> int:
        return len(self.intervals)

    def __bool__(self) -> bool:
        return bool(self.intervals)

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    @property
    def inf(self) -> float:
        """Infimum; ``+inf`` for the empty set."""
        return self.intervals[0][0] if self.intervals else math.inf

    @property
    def sup(self) -> float:
        return self.intervals[-1][1] if self.intervals else -math.inf

    def shift(self, c: float) -> "IntervalSet":
        """``D + c``."""
        return IntervalSet(((lo + c, hi + c) for lo, hi in self.intervals), self.allow_unbounded)

    def contains(self, x):
        """Vectorised membership test."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape, dtype=bool)
        for lo, hi in self.intervals:
            out |= (x >= lo) & (x < hi)
        return out

    def split_at(self, points: Iterable[float]) -> "IntervalSet":
        """Same set, with interval boundaries inserted at ``points``."""
        cuts = sorted(set(float(p) for p in points))
        out = []
        for lo, hi in self.intervals:
            start = lo
            for c in cuts:
                if start < c < hi:
                    out.append((start, c))
                    start = c
            out.append((start, hi))
        return IntervalSet(out, self.allow_unbounded)

    def pieces(self) -> list["IntervalSet"]:
        """One single-interval set per constituent interval."""
        return [IntervalSet([iv], self.allow_unbounded) for iv in self.intervals]

    def union(self, other: "IntervalSet") -> "IntervalSet":
        """Union of two sets that do not overlap."""
        merged = sorted(self.intervals + other.intervals)
        return IntervalSet(merged, self.allow_unbounded or other.allow_unbounded)
