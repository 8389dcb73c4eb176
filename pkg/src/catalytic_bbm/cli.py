"""Command-line entry point: run ensembles, verification suites and the oracle comparison.

Modes:

``simulate``
    run an ensemble and write ``results.csv`` and ``summary.json``;
``verify``
    additionally check means, the martingale and (with ``--horizons``) the
    growth or decay of every moving window, writing ``reports.jsonl``;
``oracle``
    run the exact engine and the time-stepping oracle and compare them;
``report``
    summarise an existing ``results.csv`` without simulating.

Exit codes: 0 success, 1 a check failed (inconclusive checks do not count), 2 usage error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .analytics import ModelParams, SpeedClass
from .errors import CatalyticBBMError, ValidationError
from .intervals import IntervalSet
from .simulator import CountingWindow, Ensemble, SimConfig, run_ensemble
from .verify import (
    FAIL,
    EulerConfig,
    TestReport,
    check_first_moment,
    check_growth_rate,
    check_martingale,
    check_survival_decay,
    cross_validate,
    run_euler_oracle,
    summary_table,
)

OUT_ENV = "CATALYTIC_BBM_OUT"
DEFAULT_OUT = "results"
MODES = ("simulate", "verify", "oracle", "report")
FORMATS = ("csv", "json")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentPlan:
    mode: str
    config: SimConfig
    horizons: tuple[float, ...] = ()
    euler: EulerConfig | None = None
    out: str = DEFAULT_OUT
    formats: tuple[str, ...] = FORMATS

    @property
    def windows(self) -> tuple[CountingWindow, ...]:
        return self.config.windows


def parse_window(text: str, beta: float) -> CountingWindow:
    """``side:drift:intervals``, e.g. ``plus:crit:[0,inf)``; ``crit`` means beta/2."""
    parts = text.split(":", 2)
    if len(parts) != 3:
        raise ValidationError(f"window {text!r} is not of the form side:drift:intervals")
    side, drift, intervals = (p.strip() for p in parts)
    if drift == "crit":
        value = beta / 2
    else:
        try:
            value = float(drift)
        except ValueError:
            raise ValidationError(f"window drift {drift!r} is neither a number nor 'crit'") from None
    return CountingWindow(IntervalSet.parse(intervals), value, side)


def _float_list(text: str, what: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise ValidationError(f"{what} must be a comma-separated list of numbers, got {text!r}") from None


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="catalytic-bbm", description="Branching Brownian motion with a catalyst at the origin.",
                allow_abbrev=False)
    p.add_argument("--mode", choices=MODES, default="simulate")
    p.add_argument("--beta", type=float, default=1.0, help="branching intensity (default 1.0)")
    p.add_argument("--x0", type=float, default=0.0, help="initial position (default 0.0)")
    p.add_argument("--t", type=float, default=1.0, help="observation horizon (default 1.0)")
    p.add_argument("--checkpoints", default=None, help="comma-separated observation times; --t is appended")
    p.add_argument("--windows", action="append", default=[], metavar="SPEC",
                   help="counting window side:drift:intervals, e.g. 'plus:crit:[0,inf)'; repeatable")
    p.add_argument("--replicates", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--max-particles", type=int, default=1_000_000)
    p.add_argument("--horizons", default=None, help="comma-separated horizons for growth/decay studies")
    p.add_argument("--epsilon", type=float, default=None, help="oracle mollifier half-width (default 0.02)")
    p.add_argument("--dt", type=float, default=None, help="oracle time step (default 4e-5)")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or '{DEFAULT_OUT}')")
    p.add_argument("--format", default="csv,json", help="comma-separated subset of csv,json")
    return p


def parse_args(argv: Sequence[str]) -> ExperimentPlan:
    ns = _build_parser().parse_args(list(argv))
    if ns.mode != "oracle" and (ns.epsilon is not None or ns.dt is not None):
        raise ValidationError("--epsilon and --dt only apply to --mode oracle")
    if not (math.isfinite(ns.t) and ns.t > 0):
        raise ValidationError(f"--t must be positive, got {ns.t}")
    params = ModelParams(ns.beta, ns.x0)
    windows = tuple(parse_window(w, ns.beta) for w in ns.windows)
    horizons = tuple(sorted(set(_float_list(ns.horizons, "--horizons")))) if ns.horizons else ()
    if any(h <= 0 for h in horizons):
        raise ValidationError("--horizons must be positive")
    horizon = max((ns.t, *horizons))
    cps = set(_float_list(ns.checkpoints, "--checkpoints")) if ns.checkpoints else set()
    if any(c > ns.t for c in cps):
        raise ValidationError("checkpoints must not exceed --t")
    cps |= set(horizons) | {ns.t, horizon}
    formats = tuple(f.strip() for f in ns.format.split(",") if f.strip())
    if not formats or any(f not in FORMATS for f in formats):
        raise ValidationError(f"--format must be a comma-separated subset of {','.join(FORMATS)}")
    if ns.replicates < 1:
        raise ValidationError("--replicates must be at least 1")
    euler = None
    if ns.mode == "oracle":
        euler = EulerConfig(0.02 if ns.epsilon is None else ns.epsilon, 4e-5 if ns.dt is None else ns.dt)
    config = SimConfig(
        params,
        horizon,
        tuple(sorted(cps)),
        max_particles=ns.max_particles,
        replicate_count=ns.replicates,
        base_seed=ns.seed,
        windows=windows,
        keep_positions=ns.mode == "oracle",
    )
    out = ns.out if ns.out is not None else os.environ.get(OUT_ENV, DEFAULT_OUT)
    return ExperimentPlan(ns.mode, config, horizons, euler, out, formats)


def render(plan: ExperimentPlan) -> list[str]:
    """Arguments that :func:`parse_args` turns back into ``plan``."""
    cfg = plan.config
    args = [
        "--mode", plan.mode,
        "--beta", repr(cfg.params.beta),
        "--x0", repr(cfg.params.x0),
        "--t", repr(cfg.horizon),
        "--checkpoints", ",".join(repr(c) for c in cfg.checkpoints),
        "--replicates", str(cfg.replicate_count),
        "--seed", str(cfg.base_seed),
        "--max-particles", str(cfg.max_particles),
        "--out", plan.out,
        "--format", ",".join(plan.formats),
    ]
    for w in cfg.windows:
        args += ["--windows", w.render()]
    if plan.horizons:
        args += ["--horizons", ",".join(repr(h) for h in plan.horizons)]
    if plan.euler is not None:
        args += ["--epsilon", repr(plan.euler.epsilon), "--dt", repr(plan.euler.dt)]
    return args


# ---------------------------------------------------------------------------
# outputs


def _cell(x: float) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def csv_header(config: SimConfig) -> list[str]:
    return ["seed", "checkpoint_time", "count_total", "martingale", "rightmost", "leftmost"] + [
        f"window_{i + 1}" for i in range(len(config.windows))
    ]


def ensemble_csv(ens: Ensemble) -> str:
    """One row per usable replicate and checkpoint, sorted by replicate then checkpoint."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(csv_header(ens.config))
    times = ens.config.checkpoints
    for r in np.flatnonzero(ens.ok):
        seed = int(ens.seeds[r])
        for c, t in enumerate(times):
            row = [seed, repr(t), int(ens.counts[r, c]), _cell(ens.martingale[r, c]),
                   _cell(ens.top[r, c, 0]), _cell(ens.leftmost[r, c])]
            row += [int(v) for v in ens.window_counts[r, c]]
            w.writerow(row)
    return buf.getvalue()


def _mean_se(x) -> tuple[float | None, float | None]:
    x = np.asarray(x, dtype=float)
    x = x[np.isfinite(x)]
    if x.size == 0:
        return None, None
    se = float(np.std(x, ddof=1) / math.sqrt(x.size)) if x.size > 1 else None
    return float(np.mean(x)), se


def summarise_columns(header: Sequence[str], rows: Sequence[Sequence[str]]) -> dict:
    """Per-checkpoint means and standard errors of every numeric column."""
    by_time: dict[float, list[list[float]]] = {}
    for row in rows:
        t = float(row[1])
        by_time.setdefault(t, []).append([float(v) if v != "" else math.nan for v in row[2:]])
    out = []
    for t in sorted(by_time):
        cols = np.array(by_time[t], dtype=float).T
        entry = {"checkpoint_time": t, "replicates": len(by_time[t])}
        for name, col in zip(header[2:], cols):
            m, se = _mean_se(col)
            entry[name] = {"mean": m, "se": se}
        out.append(entry)
    return {"checkpoints": out}


def ensemble_summary(ens: Ensemble, plan: ExperimentPlan, reports: Sequence[TestReport] = ()) -> dict:
    text = ensemble_csv(ens)
    rows = list(csv.reader(io.StringIO(text)))
    summary = summarise_columns(rows[0], rows[1:])
    summary["mode"] = plan.mode
    summary["arguments"] = render(plan)
    summary["windows"] = {f"window_{i + 1}": w.render() for i, w in enumerate(plan.windows)}
    summary["aborted_seeds"] = [int(s) for s in ens.seeds[ens.aborted]]
    if reports:
        summary["checks"] = [r.to_dict(runtime=False) for r in reports]
        summary["verdict"] = "pass" if all(r.passed for r in reports) else "fail"
    return summary


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# modes


def _rate_checks(ens: Ensemble, plan: ExperimentPlan) -> list[TestReport]:
    params = plan.config.params
    by_t = {h: ens for h in plan.horizons}
    reports = []
    for w in plan.windows:
        if w.side != "plus" or w.drift <= 0:
            continue
        regime = SpeedClass(w.drift).regime(params.beta)
        if regime == "subcritical" and len(plan.horizons) >= 4:
            reports.append(check_growth_rate(by_t, w.drift, w.base, params))
        elif regime == "supercritical":
            reports.append(check_survival_decay(by_t, w.drift, w.base, IntervalSet.empty(), params))
    return reports


def _verify_reports(ens: Ensemble, plan: ExperimentPlan) -> list[TestReport]:
    params = plan.config.params
    reports = []
    for t in plan.config.checkpoints:
        reports.append(check_first_moment(ens, None, t, params))
        for w in plan.windows:
            reports.append(check_first_moment(ens, w, t, params))
    if len(plan.config.checkpoints) >= 2:
        reports.append(check_martingale(ens, params))
    if plan.horizons:
        reports.extend(_rate_checks(ens, plan))
    return reports


def _emit(plan: ExperimentPlan, name: str, ens: Ensemble, reports: Sequence[TestReport]) -> None:
    out = Path(plan.out)
    if "csv" in plan.formats:
        _write(out / f"{name}.csv", ensemble_csv(ens))
    if "json" in plan.formats:
        _write(out / f"{name}_summary.json" if name != "results" else out / "summary.json",
               _dump_json(ensemble_summary(ens, plan, reports)))


def execute(plan: ExperimentPlan, stdout=None) -> int:
    stdout = stdout or sys.stdout
    out = Path(plan.out)
    if plan.mode == "report":
        path = out / "results.csv"
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows:
            raise ValidationError(f"{path} is empty")
        summary = summarise_columns(rows[0], rows[1:])
        _write(out / "report.json", _dump_json(summary))
        for entry in summary["checkpoints"]:
            cols = ", ".join(f"{k}={v['mean']:.6g}" for k, v in entry.items()
                             if isinstance(v, dict) and v["mean"] is not None)
            print(f"t={entry['checkpoint_time']:g} n={entry['replicates']}: {cols}", file=stdout)
        return EXIT_OK

    ens = run_ensemble(plan.config)
    reports: list[TestReport] = []
    if plan.mode == "verify":
        reports = _verify_reports(ens, plan)
    elif plan.mode == "oracle":
        euler_cfg = SimConfig(plan.config.params, plan.config.horizon, plan.config.checkpoints,
                              max_particles=plan.config.max_particles,
                              replicate_count=plan.config.replicate_count,
                              base_seed=plan.config.base_seed + 1, windows=plan.config.windows,
                              keep_positions=True)
        oracle = run_euler_oracle(euler_cfg, plan.euler)
        reports = [cross_validate(ens, oracle, min_replicates=min(10_000, plan.config.replicate_count))]
        _emit(plan, "oracle", oracle, ())
    _emit(plan, "results", ens, reports)
    if reports:
        _write(out / "reports.jsonl", "".join(r.to_json(runtime=False) + "\n" for r in reports))
        print(summary_table(reports), file=stdout)
    else:
        print(f"wrote {int(ens.ok.sum())} replicates x {len(plan.config.checkpoints)} checkpoints to {out}",
              file=stdout)
    if any(r.verdict == FAIL for r in reports):
        return EXIT_CHECK_FAILED
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        plan = parse_args(argv)
    except (UsageError, ValidationError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return execute(plan)
    except (CatalyticBBMError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
