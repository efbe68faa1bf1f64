"""Deterministic random number streams.

Two regimes, both counter-based so that results never depend on scheduling
or expansion order:

* ``splitmix64`` streams, used inside the compiled walk/tree kernels.  A
  stream is identified by a single 64-bit key; successive draws advance an
  internal counter.  Keys are derived by mixing, so every tree vertex and
  every replica gets its own independent stream.
* :class:`numpy.random.Generator` instances backed by Philox counter RNGs,
  used by the vectorised samplers at the numpy level.  ``generator(seed,
  stream)`` always yields the same sequence for the same pair.

Every jitted helper casts its arguments to uint64 on entry: values boxed
through Python re-enter numba as int64 and would otherwise hit signed
shift/promotion semantics and silently change the stream.
"""

from __future__ import annotations

import numpy as np
from numba import njit

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_INV53 = 1.0 / 9007199254740992.0  # 2**-53
_ONE = np.uint64(1)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)


@njit(cache=True, nogil=True)
def mix64(z):
    """Finalizer of splitmix64; a bijective 64-bit hash."""
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def stream_key(seed, stream_id):
    """Key for an independent stream, e.g. one replica or one vertex."""
    return mix64(np.uint64(seed) ^ mix64(np.uint64(stream_id) + _GAMMA))


@njit(cache=True, nogil=True)
def child_key(parent_key, index):
    """Key of the ``index``-th child vertex, derived from its parent's key.

    Keys therefore depend only on the path from the root, never on the
    order in which vertices happen to be expanded.
    """
    return mix64(np.uint64(parent_key) ^ ((np.uint64(index) + _ONE) * _GAMMA))


@njit(cache=True, nogil=True)
def to_uniform(state):
    """Uniform in [0, 1) from a stream state (use the *advanced* state)."""
    return float(mix64(np.uint64(state)) >> _S11) * _INV53


@njit(cache=True, nogil=True)
def uniform_at(key, counter):
    """The ``counter``-th uniform of the stream with the given key."""
    return to_uniform(np.uint64(key) + _GAMMA * (np.uint64(counter) + _ONE))


def generator(seed: int, stream: int) -> np.random.Generator:
    """Philox-backed generator for the (seed, stream) pair."""
    key = np.array([np.uint64(seed), np.uint64(stream)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def uniform_array(seed: int, stream: int, n: int) -> np.ndarray:
    """n uniforms from the splitmix stream (vectorised, matches kernels)."""
    key = np.uint64(stream_key(np.uint64(seed), np.uint64(stream)))
    states = key + _GAMMA * np.arange(1, n + 1, dtype=np.uint64)
    z = states
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    z = z ^ (z >> _S31)
    return (z >> _S11).astype(np.float64) * _INV53
