"""Exact event-driven simulation of branching Brownian motion with a point catalyst.

Every particle diffuses as a standard Brownian motion and splits into two at
the origin once its local time at 0 exceeds an Exp(beta) level.  Between
observation times each particle is moved with the exact samplers of
:mod:`catalytic_bbm.sampling`; at every checkpoint the remaining local-time
threshold of each survivor is redrawn, which leaves all single-time laws
unchanged because the threshold is memoryless.

:func:`run_ensemble` returns an :class:`Ensemble`, a columnar store that also
behaves as a sequence of :class:`ReplicateRecord`.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import _engine
from .analytics import ModelParams
from .errors import NumericalError, ValidationError
from .intervals import IntervalSet
from .rng import RngStream, derive_seed, root_key
from .sampling import _advance

__all__ = [
    "CountingWindow",
    "SimConfig",
    "ParticleState",
    "Snapshot",
    "ReplicateRecord",
    "Ensemble",
    "AtTime",
    "Branch",
    "advance_particle",
    "observe_counts",
    "run_replicate",
    "run_ensemble",
    "write_event_log",
]

# beta^2 t / 2 above this gives populations beyond a few thousand on average
GROWTH_EXPONENT_CAP = 8.0
BATCH_SIZE = 2048


@dataclass(frozen=True)
class CountingWindow:
    """Set ``base + drift*t`` (side ``plus``) or ``-base - drift*t`` (side ``minus``) at time t."""

    base: IntervalSet
    drift: float = 0.0
    side: str = "plus"

    def __post_init__(self):
        if not isinstance(self.base, IntervalSet):
            raise ValidationError("window base must be an IntervalSet")
        if self.base.allow_unbounded and self.base.inf == -math.inf:
            raise ValidationError("window base must be bounded below")
        if self.side not in ("plus", "minus"):
            raise ValidationError(f"window side must be 'plus' or 'minus', got {self.side!r}")
        if not math.isfinite(self.drift):
            raise ValidationError(f"window drift must be finite, got {self.drift!r}")
        object.__setattr__(self, "drift", float(self.drift))

    def count(self, positions, time: float) -> int:
        x = np.asarray(positions, dtype=float)
        y = x - self.drift * time if self.side == "plus" else -x - self.drift * time
        return int(np.count_nonzero(self.base.contains(y)))

    def render(self) -> str:
        return f"{self.side}:{self.drift!r}:{self.base.render()}"


@dataclass(frozen=True)
class SimConfig:
    params: ModelParams
    horizon: float
    checkpoints: tuple[float, ...] = ()
    max_particles: int = 1_000_000
    replicate_count: int = 1
    base_seed: int = 0
    windows: tuple[CountingWindow, ...] = ()
    branching: bool = True
    keep_positions: bool = False
    log_events: bool = False
    top_k: int = 3
    prune_beyond: float = math.inf
    growth_cap: float = GROWTH_EXPONENT_CAP

    def __post_init__(self):
        if not (isinstance(self.horizon, (int, float)) and math.isfinite(self.horizon) and self.horizon > 0):
            raise ValidationError(f"horizon must be positive and finite, got {self.horizon!r}")
        cps = tuple(float(c) for c in self.checkpoints) or (float(self.horizon),)
        if any(not b > a for a, b in zip(cps, cps[1:])):
            raise ValidationError(f"checkpoints must be strictly increasing, got {cps}")
        if cps[0] <= 0 or cps[-1] != float(self.horizon):
            raise ValidationError(f"checkpoints must lie in (0, horizon] and end at horizon={self.horizon}")
        object.__setattr__(self, "checkpoints", cps)
        object.__setattr__(self, "horizon", float(self.horizon))
        object.__setattr__(self, "windows", tuple(self.windows))
        if int(self.max_particles) < 1:
            raise ValidationError("max_particles must be at least 1")
        if int(self.replicate_count) < 1:
            raise ValidationError("replicate_count must be at least 1")
        if int(self.top_k) < 1:
            raise ValidationError("top_k must be at least 1")
        if not self.prune_beyond > 0:
            raise ValidationError("prune_beyond must be positive")
        b = self.params.beta
        if self.branching and b * b * self.horizon / 2 > self.growth_cap:
            raise ValidationError(
                f"beta^2 * horizon / 2 = {b * b * self.horizon / 2:g} exceeds growth_cap={self.growth_cap:g}; "
                "raise growth_cap explicitly to run this"
            )

    def checkpoint_index(self, time: float) -> int:
        for i, c in enumerate(self.checkpoints):
            if math.isclose(c, time, rel_tol=1e-12, abs_tol=1e-12):
                return i
        raise ValidationError(f"time {time} is not a checkpoint of this configuration")


@dataclass(frozen=True)
class ParticleState:
    label: tuple[int, ...]
    position: float
    birth_time: float = 0.0

    def __post_init__(self):
        if any(i not in (1, 2) for i in self.label):
            raise ValidationError(f"Ulam-Harris labels use indices 1 and 2, got {self.label}")
        if self.birth_time < 0:
            raise ValidationError("birth_time must be non-negative")

    def child(self, index: int, time: float) -> "ParticleState":
        return ParticleState(self.label + (index,), 0.0, time)


@dataclass(frozen=True)
class AtTime:
    position: float


@dataclass(frozen=True)
class Branch:
    time: float


def advance_particle(state: ParticleState, t_from: float, t_to: float, threshold: float, rng: RngStream):
    """Move ``state`` from ``t_from`` to ``t_to`` against a local-time ``threshold``."""
    if not t_from < t_to:
        raise ValidationError(f"need t_from < t_to, got {t_from}, {t_to}")
    if not threshold > 0:
        raise ValidationError(f"threshold must be positive, got {threshold}")
    branched, v = _advance(float(state.position), float(t_from), float(t_to), float(threshold), rng.state)
    if math.isnan(v):
        raise NumericalError("rejection cap exceeded while advancing a particle", position=state.position)
    return Branch(float(v)) if branched else AtTime(float(v))


@dataclass(frozen=True)
class Snapshot:
    time: float
    count_total: int
    martingale: float
    rightmost: float | None
    leftmost: float | None
    top: tuple[float, ...] = ()
    positions: np.ndarray | None = field(default=None, compare=False)


def observe_counts(snapshot: Snapshot, window: CountingWindow, time: float) -> int:
    if not math.isclose(snapshot.time, time, rel_tol=1e-12, abs_tol=1e-12):
        raise ValidationError(f"snapshot taken at {snapshot.time}, asked for {time}")
    if snapshot.positions is None:
        raise ValidationError("snapshot has no stored positions; run with keep_positions=True")
    return window.count(snapshot.positions, time)


@dataclass(frozen=True)
class ReplicateRecord:
    seed: int
    snapshots: tuple[Snapshot, ...]
    window_counts: np.ndarray = field(compare=False)
    aborted: bool = False
    branch_events: int = 0
    events: tuple[dict, ...] = field(default=(), compare=False)


def _window_arrays(windows: Sequence[CountingWindow]):
    side = np.array([1 if w.side == "plus" else -1 for w in windows], dtype=np.int64)
    drift = np.array([w.drift for w in windows], dtype=float)
    ptr = [0]
    lo, hi = [], []
    for w in windows:
        for a, b in w.base:
            lo.append(a)
            hi.append(b)
        ptr.append(len(lo))
    return side, drift, np.array(ptr, dtype=np.int64), np.array(lo, dtype=float), np.array(hi, dtype=float)


def _labels_from_parents(kind, pid, parent, child) -> dict[int, str]:
    labels = {}
    for k, p, par, c in zip(kind, pid, parent, child):
        if k == _engine.EVENT_BIRTH:
            labels[int(p)] = "" if par < 0 else labels[int(par)] + str(int(c))
    return labels


class Ensemble(Sequence[ReplicateRecord]):
    """Per-replicate observables in columnar form.

    Arrays are indexed ``[replicate, checkpoint]`` (and ``[..., window]`` or
    ``[..., k]`` for window counts and the k rightmost positions).  Aborted
    replicates are kept; :attr:`ok` masks them out.
    """

    def __init__(self, config: SimConfig, seeds, counts, martingale, top, leftmost, window_counts,
                 status, branch_events, positions=None, offsets=None, events=None):
        self.config = config
        self.seeds = np.asarray(seeds, dtype=np.uint64)
        self.counts = counts
        self.martingale = martingale
        self.top = top
        self.leftmost = leftmost
        self.window_counts = window_counts
        self.status = status
        self.branch_events = branch_events
        self._positions = positions
        self._offsets = offsets
        self._events = events or {}

    @property
    def times(self) -> np.ndarray:
        return np.asarray(self.config.checkpoints)

    @property
    def rightmost(self) -> np.ndarray:
        return self.top[:, :, 0]

    @property
    def aborted(self) -> np.ndarray:
        return self.status != _engine.STATUS_OK

    @property
    def ok(self) -> np.ndarray:
        return self.status == _engine.STATUS_OK

    def __len__(self) -> int:
        return self.seeds.shape[0]

    def index(self, time: float) -> int:
        return self.config.checkpoint_index(time)

    def window_index(self, window: CountingWindow) -> int:
        try:
            return self.config.windows.index(window)
        except ValueError:
            raise ValidationError(f"window {window.render()} was not observed") from None

    def positions(self, replicate: int, checkpoint: int) -> np.ndarray:
        """Sorted positions of one replicate at one checkpoint (requires ``keep_positions``)."""
        if self._positions is None:
            raise ValidationError("positions were not kept; run with keep_positions=True")
        k = replicate * len(self.config.checkpoints) + checkpoint
        return self._positions[self._offsets[k]: self._offsets[k + 1]]

    def subset(self, rows) -> "Ensemble":
        """Ensemble restricted to ``rows`` (a slice, index array or boolean mask)."""
        idx = np.arange(len(self))[rows]
        pos = off = None
        if self._positions is not None:
            n_cp = len(self.config.checkpoints)
            chunks, off = [], [0]
            for r in idx:
                for c in range(n_cp):
                    p = self.positions(int(r), c)
                    chunks.append(p)
                    off.append(off[-1] + p.size)
            pos = np.concatenate(chunks) if chunks else np.empty(0)
            off = np.asarray(off, dtype=np.int64)
        events = None
        if self._events:
            keep = np.isin(self._events["rep"], idx)
            remap = np.full(len(self), -1, dtype=np.int64)
            remap[idx] = np.arange(idx.size)
            events = {k: v[keep] for k, v in self._events.items()}
            events["rep"] = remap[events["rep"]]
        return Ensemble(
            self.config, self.seeds[idx], self.counts[idx], self.martingale[idx], self.top[idx],
            self.leftmost[idx], self.window_counts[idx], self.status[idx], self.branch_events[idx],
            pos, off, events,
        )

    def events(self, replicate: int) -> tuple[dict, ...]:
        if not self._events:
            return ()
        ev = self._events
        sel = np.flatnonzero(ev["rep"] == replicate)
        labels = _labels_from_parents(ev["kind"][sel], ev["pid"][sel], ev["parent"][sel], ev["child"][sel])
        out = []
        for j in sel:
            out.append({
                "event": "branch" if ev["kind"][j] == _engine.EVENT_BRANCH else "birth",
                "time": float(ev["time"][j]),
                "position": float(ev["pos"][j]),
                "label": labels[int(ev["pid"][j])],
            })
        return tuple(out)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return self.subset(i)
        i = range(len(self))[i]
        snaps = []
        for c, t in enumerate(self.config.checkpoints):
            n = int(self.counts[i, c])
            top = tuple(float(v) for v in self.top[i, c] if not math.isnan(v))
            pos = self.positions(i, c) if self._positions is not None else None
            snaps.append(Snapshot(
                time=t,
                count_total=n,
                martingale=float(self.martingale[i, c]),
                rightmost=top[0] if top else None,
                leftmost=None if math.isnan(self.leftmost[i, c]) else float(self.leftmost[i, c]),
                top=top,
                positions=pos,
            ))
        return ReplicateRecord(
            seed=int(self.seeds[i]),
            snapshots=tuple(snaps),
            window_counts=self.window_counts[i].copy(),
            aborted=bool(self.status[i] != _engine.STATUS_OK),
            branch_events=int(self.branch_events[i]),
            events=self.events(i),
        )

    def __iter__(self) -> Iterator[ReplicateRecord]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_positions(cls, config: SimConfig, seeds, positions, offsets, status=None) -> "Ensemble":
        """Build the observables from raw positions laid out like :meth:`positions`.

        Used by simulators other than the exact engine so that every ensemble
        is summarised by the same code.
        """
        n_rep, n_cp, k = len(seeds), len(config.checkpoints), config.top_k
        beta = config.params.beta
        counts = np.zeros((n_rep, n_cp), dtype=np.int64)
        mart = np.full((n_rep, n_cp), np.nan)
        top = np.full((n_rep, n_cp, k), np.nan)
        left = np.full((n_rep, n_cp), np.nan)
        wc = np.zeros((n_rep, n_cp, len(config.windows)), dtype=np.int64)
        status = np.zeros(n_rep, dtype=np.int64) if status is None else np.asarray(status, dtype=np.int64)
        positions = np.asarray(positions, dtype=float)
        offsets = np.asarray(offsets, dtype=np.int64)
        for r in range(n_rep):
            for c, t in enumerate(config.checkpoints):
                j = r * n_cp + c
                p = np.sort(positions[offsets[j]: offsets[j + 1]])
                counts[r, c] = p.size
                if p.size == 0:
                    continue
                mart[r, c] = math.exp(-0.5 * beta * beta * t) * math.fsum(np.exp(-beta * np.abs(p)))
                desc = p[::-1][:k]
                top[r, c, : desc.size] = desc
                left[r, c] = p[0]
                for w, win in enumerate(config.windows):
                    wc[r, c, w] = win.count(p, t)
        keep = config.keep_positions
        return cls(config, seeds, counts, mart, top, left, wc, status, np.zeros(n_rep, dtype=np.int64),
                   positions if keep else None, offsets if keep else None)

    @classmethod
    def from_columns(cls, config: SimConfig, *, counts=None, martingale=None, window_counts=None,
                     top=None, leftmost=None, seeds=None) -> "Ensemble":
        """Ensemble from hand-made columns, e.g. synthetic data for testing the checks.

        Missing columns are filled with NaN (or zeros for counts).  Counts may be
        non-integer.
        """
        cols = [np.asarray(a, dtype=float) for a in (counts, martingale, window_counts, top, leftmost) if a is not None]
        if not cols:
            raise ValidationError("at least one column is required")
        n_rep = cols[0].shape[0]
        n_cp = len(config.checkpoints)

        def col(a, shape, fill):
            if a is None:
                return np.full(shape, fill)
            return np.asarray(a, dtype=float).reshape(shape)

        return cls(
            config,
            np.arange(n_rep) if seeds is None else seeds,
            col(counts, (n_rep, n_cp), 0.0),
            col(martingale, (n_rep, n_cp), np.nan),
            col(top, (n_rep, n_cp, config.top_k), np.nan),
            col(leftmost, (n_rep, n_cp), np.nan),
            col(window_counts, (n_rep, n_cp, len(config.windows)), 0.0),
            np.zeros(n_rep, dtype=np.int64),
            np.zeros(n_rep, dtype=np.int64),
        )

    @classmethod
    def concat(cls, parts: Sequence["Ensemble"]) -> "Ensemble":
        if len(parts) == 1:
            return parts[0]
        cfg = parts[0].config
        pos = off = None
        if parts[0]._positions is not None:
            pos = np.concatenate([p._positions for p in parts])
            shifts = np.cumsum([0] + [p._positions.size for p in parts[:-1]])
            off = np.concatenate([parts[0]._offsets[:1]] + [p._offsets[1:] + s for p, s in zip(parts, shifts)])
        events = None
        if parts[0]._events:
            shifts = np.cumsum([0] + [len(p) for p in parts[:-1]])
            events = {}
            for k in parts[0]._events:
                cols = [p._events[k] + (s if k == "rep" else 0) for p, s in zip(parts, shifts)]
                events[k] = np.concatenate(cols)
        cat = lambda name: np.concatenate([getattr(p, name) for p in parts])
        return cls(cfg, cat("seeds"), cat("counts"), cat("martingale"), cat("top"), cat("leftmost"),
                   cat("window_counts"), cat("status"), cat("branch_events"), pos, off, events)


def _run_keys(config: SimConfig, seeds: Sequence[int]) -> Ensemble:
    keys = np.array([root_key(s) for s in seeds], dtype=np.uint64)
    side, drift, ptr, lo, hi = _window_arrays(config.windows)
    out = _engine.run_batch(
        keys,
        float(config.params.x0),
        float(config.params.beta),
        bool(config.branching),
        np.asarray(config.checkpoints, dtype=float),
        int(config.max_particles),
        float(config.prune_beyond),
        side, drift, ptr, lo, hi,
        int(config.top_k),
        bool(config.keep_positions),
        bool(config.log_events),
    )
    counts, mart, top, left, wcounts, status, n_branch, pos, off = out[:9]
    bad = np.flatnonzero(status == _engine.STATUS_NUMERICAL)
    if bad.size:
        raise NumericalError(
            "rejection cap exceeded during simulation", seeds=[int(seeds[i]) for i in bad[:5]]
        )
    events = None
    if config.log_events:
        names = ("rep", "kind", "time", "pos", "pid", "parent", "child")
        events = dict(zip(names, out[9:]))
    return Ensemble(
        config, np.array(seeds, dtype=np.uint64), counts, mart, top, left, wcounts, status, n_branch,
        pos if config.keep_positions else None, off if config.keep_positions else None, events,
    )


def run_replicate(config: SimConfig, seed: int) -> ReplicateRecord:
    return _run_keys(config, [int(seed)])[0]


def run_ensemble(config: SimConfig, batch_size: int = BATCH_SIZE) -> Ensemble:
    """Run ``config.replicate_count`` replicates; replicate ``r`` uses ``derive_seed(base_seed, r)``.

    Each replicate depends only on its own seed, so batching has no effect on
    the output.
    """
    seeds = [derive_seed(config.base_seed, r) for r in range(config.replicate_count)]
    parts = [_run_keys(config, seeds[i: i + batch_size]) for i in range(0, len(seeds), batch_size)]
    return Ensemble.concat(parts)


def write_event_log(ensemble: Ensemble, path) -> int:
    """Write birth/branch events as JSON lines; returns the number of lines written."""
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for r in range(len(ensemble)):
            seed = int(ensemble.seeds[r])
            for ev in ensemble.events(r):
                fh.write(json.dumps({"replicate": r, "seed": seed, **ev}, sort_keys=True) + "\n")
                n += 1
    return n
