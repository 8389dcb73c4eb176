"""Deterministic, splittable random streams.

Every particle owns its own stream.  A stream is keyed by a 64-bit value and
draws ``mix64(seed + n * gamma)`` for ``n = 1, 2, ...`` (SplitMix64 with a
per-stream odd increment), so the draw sequence of a particle is a pure
function of ``(replicate seed, Ulam-Harris label, draw counter)``:

* replicate ``r`` of an ensemble with base seed ``b`` runs with seed
  :func:`derive_seed` ``(b, r)``;
* the root particle's key is ``mix64(seed)``;
* child ``i`` (1 or 2) of a particle with key ``k`` gets :func:`child_key` ``(k, i)``.

The numba kernels below operate on a ``uint64[3]`` state array
``[counter_state, gamma, key]`` that they mutate in place.
"""

from __future__ import annotations

from typing import Iterable

import numpy as np
from numba import njit

__all__ = [
    "RngStream",
    "derive_seed",
    "child_key",
    "root_key",
    "lineage_key",
    "mix64",
]

_MASK = (1 << 64) - 1

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_G1 = np.uint64(0xFF51AFD7ED558CCD)
_G2 = np.uint64(0xC4CEB9FE1A85EC53)
_ALT = np.uint64(0xAAAAAAAAAAAAAAAA)
_STATE_SALT = np.uint64(0x5851F42D4C957F2D)
_ONE = np.uint64(1)
_S11 = np.uint64(11)
_S27 = np.uint64(27)
_S30 = np.uint64(30)
_S31 = np.uint64(31)
_S33 = np.uint64(33)
_TWO_M53 = 1.0 / 9007199254740992.0


@njit(cache=True, inline="always")
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True)
def _popcount(z):
    n = 0
    while z:
        z &= z - _ONE
        n += 1
    return n


@njit(cache=True)
def _mix_gamma(z):
    z = (z ^ (z >> _S33)) * _G1
    z = (z ^ (z >> _S33)) * _G2
    z = (z ^ (z >> _S33)) | _ONE
    if _popcount(z ^ (z >> _ONE)) < 24:
        z = z ^ _ALT
    return z


@njit(cache=True, inline="always")
def init_state(st, key):
    """Reset ``st`` to the start of the stream with the given key."""
    st[0] = _mix64(key ^ _STATE_SALT)
    st[1] = _mix_gamma(key + GOLDEN_GAMMA)
    st[2] = key


@njit(cache=True, inline="always")
def next_u64(st):
    st[0] += st[1]
    return _mix64(st[0])


@njit(cache=True, inline="always")
def next_double(st):
    """Uniform on the open interval (0, 1)."""
    return ((next_u64(st) >> _S11) + 0.5) * _TWO_M53


@njit(cache=True, inline="always")
def _child_key(key, i):
    return _mix64(_mix64(key) + np.uint64(i) * GOLDEN_GAMMA)


# ---------------------------------------------------------------------------
# pure-Python helpers (integers in [0, 2**64))


def mix64(z: int) -> int:
    z &= _MASK
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return z ^ (z >> 31)


def derive_seed(base_seed: int, replicate_id: int) -> int:
    """Seed of replicate ``replicate_id`` in an ensemble with ``base_seed``."""
    if replicate_id < 0:
        raise ValueError("replicate_id must be non-negative")
    return mix64(mix64(base_seed & _MASK) + (replicate_id + 1) * int(GOLDEN_GAMMA))


def root_key(seed: int) -> int:
    return mix64(seed & _MASK)


def child_key(key: int, index: int) -> int:
    if index not in (1, 2):
        raise ValueError("Ulam-Harris child index must be 1 or 2")
    return mix64(mix64(key) + index * int(GOLDEN_GAMMA))


def lineage_key(seed: int, label: Iterable[int] = ()) -> int:
    """Key of the particle with Ulam-Harris ``label`` (e.g. ``(1, 2)``) in the replicate run with ``seed``."""
    key = root_key(seed)
    for i in label:
        key = child_key(key, int(i))
    return key


class RngStream:
    """A single deterministic stream of uniforms, usable from Python.

    ``RngStream.for_particle(seed, (1, 2))`` reproduces exactly the draws the
    simulator makes for particle "12" of the replicate run with ``seed``.
    """

    __slots__ = ("state",)

    def __init__(self, key: int):
        self.state = np.zeros(3, dtype=np.uint64)
        init_state(self.state, np.uint64(key & _MASK))

    @classmethod
    def from_seed(cls, seed: int) -> "RngStream":
        return cls(root_key(seed))

    @classmethod
    def for_particle(cls, seed: int, label: Iterable[int] = ()) -> "RngStream":
        return cls(lineage_key(seed, label))

    @classmethod
    def for_replicate(cls, base_seed: int, replicate_id: int, label: Iterable[int] = ()) -> "RngStream":
        return cls.for_particle(derive_seed(base_seed, replicate_id), label)

    @property
    def key(self) -> int:
        return int(self.state[2])

    def child(self, index: int) -> "RngStream":
        """Stream of Ulam-Harris child ``index`` (independent of how far this stream has advanced)."""
        return RngStream(child_key(self.key, index))

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def uniform(self) -> float:
        return float(next_double(self.state))

    def copy(self) -> "RngStream":
        out = RngStream.__new__(RngStream)
        out.state = self.state.copy()
        return out
