"""A deliberately naive time-stepping simulator, used only to cross-check the exact engine.

The point catalyst is smeared into a slab ``[-eps, eps]`` where particles
branch at rate ``beta / (2 eps)``; paths take Gaussian steps of variance
``dt``.  Nothing from the exact samplers or their random streams is reused:
each replicate draws from numpy's generator seeded with its replicate seed.
"""

from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import stats

from ..errors import ValidationError
from ..rng import derive_seed
from ..simulator import Ensemble, SimConfig
from .checks import N_SE, _mean_se, _usable
from .report import TestReport

STATUS_ABORTED = 1


@dataclass(frozen=True)
class EulerConfig:
    """Mollifier half-width and time step; ``dt <= epsilon^2 / 10`` unless ``allow_coarse``."""

    epsilon: float = 0.02
    dt: float = 4e-5
    allow_coarse: bool = False

    def __post_init__(self):
        if not self.epsilon > 0 or not self.dt > 0:
            raise ValidationError("epsilon and dt must be positive")
        if not self.allow_coarse and self.dt > self.epsilon ** 2 / 10 * (1 + 1e-12):
            raise ValidationError(
                f"dt={self.dt:g} exceeds epsilon^2/10={self.epsilon ** 2 / 10:g}; pass allow_coarse=True "
                "for a deliberately under-resolved run"
            )

    def refined(self) -> "EulerConfig":
        return EulerConfig(self.epsilon / 2, self.dt / 4, self.allow_coarse)


@njit(cache=True)
def _euler_replicate(seed, x0, beta, branching, eps, dt, steps, max_particles):
    np.random.seed(seed)
    sd = math.sqrt(dt)
    p_branch = -math.expm1(-beta * dt / (2.0 * eps)) if branching else 0.0
    pos = np.empty(64)
    pos[0] = x0
    n = 1
    n_cp = steps.shape[0]
    out = np.empty(0)
    off = np.zeros(n_cp, dtype=np.int64)
    step = 0
    for c in range(n_cp):
        while step < steps[c]:
            step += 1
            m = n
            for i in range(m):
                x = pos[i] + sd * np.random.standard_normal()
                pos[i] = x
                if abs(x) <= eps and np.random.random() < p_branch:
                    if n >= max_particles:
                        return out, off, True
                    if n >= pos.shape[0]:
                        grown = np.empty(2 * pos.shape[0])
                        grown[:n] = pos[:n]
                        pos = grown
                    pos[n] = x
                    n += 1
        snap = np.empty(out.shape[0] + n)
        snap[: out.shape[0]] = out
        snap[out.shape[0]:] = pos[:n]
        out = snap
        off[c] = out.shape[0]
    return out, off, False


def run_euler_oracle(config: SimConfig, euler: EulerConfig) -> Ensemble:
    """Same observables as :func:`~catalytic_bbm.simulator.run_ensemble`, from the discretised model."""
    steps = []
    for t in config.checkpoints:
        k = round(t / euler.dt)
        if not math.isclose(k * euler.dt, t, rel_tol=1e-9):
            raise ValidationError(f"checkpoint {t} is not a multiple of dt={euler.dt}")
        steps.append(k)
    steps = np.asarray(steps, dtype=np.int64)
    n_cp = steps.size
    seeds = [derive_seed(config.base_seed, r) for r in range(config.replicate_count)]
    chunks, offsets, status = [], [0], []
    for seed in seeds:
        # numpy's legacy seeding takes 32 bits
        pos, off, aborted = _euler_replicate(
            seed & 0xFFFFFFFF, float(config.params.x0), float(config.params.beta), bool(config.branching),
            float(euler.epsilon), float(euler.dt), steps, int(config.max_particles),
        )
        if aborted:
            off = np.zeros(n_cp, dtype=np.int64)
            pos = np.empty(0)
        chunks.append(pos)
        offsets.extend(offsets[-1] + off[:n_cp] if off.size else [offsets[-1]] * n_cp)
        status.append(STATUS_ABORTED if aborted else 0)
    positions = np.concatenate(chunks) if chunks else np.empty(0)
    return Ensemble.from_positions(config, np.array(seeds, dtype=np.uint64), positions,
                                   np.asarray(offsets, dtype=np.int64), status)


def _one_position_per_replicate(ens: Ensemble, c: int, seed: int) -> np.ndarray:
    # positions within a replicate are dependent; one random pick per replicate keeps KS valid
    rng = np.random.default_rng(seed)
    out = np.empty(len(ens))
    for r in range(len(ens)):
        p = ens.positions(r, c)
        out[r] = p[rng.integers(p.size)]
    return out


def cross_validate(exact: Ensemble, other: Ensemble, alpha: float = 0.01, mean_rtol: float = 0.02,
                   n_se: float = N_SE, min_replicates: int = 10_000, time: float | None = None) -> TestReport:
    """Two-sample comparison of total counts and particle positions at one checkpoint.

    Positions need ``keep_positions``.  The position sample takes one
    uniformly chosen particle per replicate so that the sample is i.i.d.
    """
    start = _time.perf_counter()
    a, b = _usable(exact), _usable(other)
    time = a.config.horizon if time is None else time
    name = f"cross-validation t={time:g}"
    if min(len(a), len(b)) < min_replicates:
        return TestReport.inconclusive(name, f"need {min_replicates} replicates on each side")
    ca, cb = a.index(time), b.index(time)
    na, nb = a.counts[:, ca], b.counts[:, cb]
    parts = [TestReport.p_value("KS on total counts", float(stats.ks_2samp(na, nb).pvalue), alpha)]
    pa = _one_position_per_replicate(a, ca, 1)
    pb = _one_position_per_replicate(b, cb, 2)
    parts.append(TestReport.p_value("KS on positions", float(stats.ks_2samp(pa, pb).pvalue), alpha))
    ma, sa = _mean_se(na)
    mb, sb = _mean_se(nb)
    se = math.hypot(sa, sb)
    parts.append(TestReport.compare("mean total count", mb, ma, mean_rtol * abs(ma) + n_se * se, se))
    return TestReport.combine(name, parts, _time.perf_counter() - start)
