"""Outcome records for statistical checks."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

PASS = "pass"
FAIL = "fail"
INCONCLUSIVE = "inconclusive"


@dataclass(frozen=True)
class TestReport:
    """One comparison of a statistic against a reference value.

    For a plain check ``verdict`` is ``pass`` iff
    ``|statistic - reference| <= tolerance`` (or, with ``kind="p-value"``,
    iff ``statistic >= reference``; with ``upper-bound``/``lower-bound``
    only an excess/deficit beyond ``tolerance`` fails).  A composite check keeps its sub-results
    in ``parts``; its statistic is the number of failed parts, so the same
    rule applies with reference and tolerance both 0.
    """

    __test__ = False  # keep pytest from collecting this class

    name: str
    statistic: float
    reference: float
    tolerance: float
    uncertainty: float = math.nan
    verdict: str = INCONCLUSIVE
    runtime: float = 0.0
    kind: str = "difference"
    note: str = ""
    parts: tuple["TestReport", ...] = ()
    details: dict = field(default_factory=dict, compare=False)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    @classmethod
    def compare(cls, name: str, statistic: float, reference: float, tolerance: float,
                uncertainty: float = math.nan, **kw) -> "TestReport":
        ok = abs(statistic - reference) <= tolerance
        return cls(name, float(statistic), float(reference), float(tolerance), float(uncertainty),
                   PASS if ok else FAIL, **kw)

    @classmethod
    def at_most(cls, name: str, statistic: float, bound: float, se: float, n_se: float = 3.0,
                **kw) -> "TestReport":
        """Pass iff ``statistic <= bound + n_se * se``."""
        ok = statistic - bound <= n_se * se
        return cls(name, float(statistic), float(bound), float(n_se * se), float(se),
                   PASS if ok else FAIL, kind="upper-bound", **kw)

    @classmethod
    def at_least(cls, name: str, statistic: float, bound: float, se: float, n_se: float = 3.0,
                 **kw) -> "TestReport":
        """Pass iff ``statistic >= bound - n_se * se``."""
        ok = bound - statistic <= n_se * se
        return cls(name, float(statistic), float(bound), float(n_se * se), float(se),
                   PASS if ok else FAIL, kind="lower-bound", **kw)

    @classmethod
    def p_value(cls, name: str, p: float, threshold: float, **kw) -> "TestReport":
        return cls(name, float(p), float(threshold), 0.0, float(p), PASS if p >= threshold else FAIL,
                   kind="p-value", **kw)

    @classmethod
    def inconclusive(cls, name: str, note: str, **kw) -> "TestReport":
        return cls(name, math.nan, math.nan, math.nan, verdict=INCONCLUSIVE, note=note, **kw)

    @classmethod
    def combine(cls, name: str, parts: Sequence["TestReport"], runtime: float = 0.0, note: str = "",
                **details) -> "TestReport":
        parts = tuple(parts)
        failed = sum(p.verdict == FAIL for p in parts)
        if failed:
            verdict = FAIL
        elif any(p.verdict == INCONCLUSIVE for p in parts):
            verdict = INCONCLUSIVE
        else:
            verdict = PASS
        return cls(name, float(failed), 0.0, 0.0, math.nan, verdict, runtime, "composite", note, parts, details)

    def with_runtime(self, runtime: float) -> "TestReport":
        return TestReport(self.name, self.statistic, self.reference, self.tolerance, self.uncertainty,
                          self.verdict, runtime, self.kind, self.note, self.parts, self.details)

    def failures(self) -> list["TestReport"]:
        if not self.parts:
            return [self] if self.verdict == FAIL else []
        return [f for p in self.parts for f in p.failures()]

    def to_dict(self, runtime: bool = True) -> dict:
        def num(x):
            return None if isinstance(x, float) and not math.isfinite(x) else x

        out = {
            "name": self.name,
            "verdict": self.verdict,
            "statistic": num(self.statistic),
            "reference": num(self.reference),
            "tolerance": num(self.tolerance),
            "uncertainty": num(self.uncertainty),
            "kind": self.kind,
        }
        if runtime:
            out["runtime"] = round(self.runtime, 6)
        if self.note:
            out["note"] = self.note
        if self.parts:
            out["parts"] = [p.to_dict(runtime) for p in self.parts]
        return out

    def to_json(self, runtime: bool = True) -> str:
        return json.dumps(self.to_dict(runtime), sort_keys=True)

    def summary_line(self) -> str:
        if self.kind == "composite":
            body = f"{len(self.parts) - int(self.statistic)}/{len(self.parts)} parts pass"
        elif self.kind == "p-value":
            body = f"p={self.statistic:.4g} (threshold {self.reference:g})"
        else:
            body = f"stat={self.statistic:.6g} ref={self.reference:.6g} tol={self.tolerance:.3g}"
        return f"[{self.verdict.upper():>12}] {self.name}: {body}"


def summary_table(reports: Iterable[TestReport], indent: int = 0) -> str:
    lines = []
    for r in reports:
        lines.append(" " * indent + r.summary_line())
        if r.parts:
            lines.append(summary_table(r.parts, indent + 4))
    return "\n".join(lines)


def write_reports(reports: Iterable[TestReport], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in reports:
            fh.write(r.to_json() + "\n")
