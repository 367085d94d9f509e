"""Deterministic per-sample random streams (splitmix64 + Box-Muller).

Stream ``i`` of a root seed starts from ``splitmix64(root ^ (GOLDEN * (i + 1)))``
and then emits the usual splitmix64 sequence. A 64-bit output ``z`` maps to a
uniform in (0, 1] as ``((z >> 11) + 1) * 2**-53``. Gaussian draws consume
uniforms in pairs ``(u1, u2)`` and yield ``r*cos(2*pi*u2)`` then
``r*sin(2*pi*u2)`` with ``r = sqrt(-2 log u1)``; an odd leftover is kept as a
spare for the next normal draw on that stream.

Every row of a :class:`Streams` object is an independent stream, so a sample's
draws depend only on ``(root_seed, stream index, draw index)`` and never on
how samples are batched or scheduled across threads.
"""

from enum import IntEnum

import numpy as np

from . import kernels
from .errors import ConfigError

GOLDEN = 0x9E3779B97F4A7C15
MASK64 = (1 << 64) - 1


class Purpose(IntEnum):
    """Stream families. The family id occupies the high bits of the stream index."""

    PRIOR = 0
    SAMPLER = 1
    UNCERTAINTY = 2
    DROPOUT = 3
    TRAIN = 4
    DATA = 5
    EVAL = 6
    SHUFFLE = 7


_PURPOSE_SHIFT = 40


def splitmix64(x):
    """One splitmix64 step on the integer state ``x``; returns the mixed output."""
    z = (x + GOLDEN) & MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def stream_seed(root_seed, index):
    """Initial state of stream ``index`` under ``root_seed``."""
    return splitmix64((root_seed & MASK64) ^ ((GOLDEN * (index + 1)) & MASK64))


def _stream_seeds(root_seed, indices):
    """Vectorised :func:`stream_seed` over an index array (uint64 wraparound)."""
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = np.uint64(root_seed) ^ (np.uint64(GOLDEN) * (idx + np.uint64(1)))
        z = z + np.uint64(GOLDEN)
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def stream_index(purpose, sample):
    return (int(purpose) << _PURPOSE_SHIFT) | int(sample)


class Streams:
    """A batch of independent random streams, one per row.

    Args:
        root_seed: 64-bit unsigned root seed.
        indices: stream indices, one per row.
    """

    def __init__(self, root_seed, indices):
        self.root_seed = int(root_seed) & MASK64
        self.indices = np.asarray(indices, dtype=np.int64).reshape(-1)
        self._state = _stream_seeds(self.root_seed, self.indices)
        self._spare = np.zeros(len(self.indices))
        self._has_spare = False

    @classmethod
    def for_samples(cls, root_seed, n, purpose=Purpose.PRIOR, start=0):
        """Streams for samples ``start .. start+n-1`` of one purpose family."""
        return cls(root_seed, [stream_index(purpose, start + i) for i in range(n)])

    @property
    def n(self):
        return len(self.indices)

    def uniform(self, tail=()):
        """Uniform (0, 1] draws of shape ``(n, *tail)``."""
        tail = tuple(tail)
        k = int(np.prod(tail, dtype=np.int64))
        out = np.empty((self.n, k))
        if k:
            kernels.splitmix_fill_uniform(self._state, out)
        return out.reshape((self.n,) + tail)

    def normal(self, tail=()):
        """Standard-normal draws of shape ``(n, *tail)``."""
        tail = tuple(tail)
        k = int(np.prod(tail, dtype=np.int64))
        out = np.empty((self.n, k))
        pos = 0
        if k and self._has_spare:
            out[:, 0] = self._spare
            self._has_spare = False
            pos = 1
        need = k - pos
        if need > 0:
            pairs = (need + 1) // 2
            u = self.uniform((pairs, 2))
            r = np.sqrt(-2.0 * np.log(u[:, :, 0]))
            theta = 2.0 * np.pi * u[:, :, 1]
            z = np.empty((self.n, 2 * pairs))
            z[:, 0::2] = r * np.cos(theta)
            z[:, 1::2] = r * np.sin(theta)
            out[:, pos:] = z[:, :need]
            if 2 * pairs > need:
                self._spare = z[:, -1].copy()
                self._has_spare = True
        return out.reshape((self.n,) + tail)

    def integers(self, high, tail=()):
        """Integers uniform on ``0 .. high-1``."""
        u = self.uniform(tail)
        return np.minimum(np.floor(u * high).astype(np.int64), high - 1)


class SingleStream:
    """Generator-style adapter drawing arbitrary shapes from a one-row :class:`Streams`."""

    def __init__(self, streams):
        if streams.n != 1:
            raise ValueError("SingleStream wraps exactly one stream")
        self.streams = streams

    def random(self, shape):
        return self.streams.uniform(tuple(shape))[0]

    def standard_normal(self, shape):
        return self.streams.normal(tuple(shape))[0]


def draw_normal(rng, shape):
    """Standard normals of ``shape`` from a :class:`Streams` or a numpy Generator.

    With :class:`Streams` the leading axis of ``shape`` must equal ``rng.n``.
    """
    shape = tuple(shape)
    if isinstance(rng, Streams):
        if not shape or shape[0] != rng.n:
            raise ConfigError(f"leading axis {shape[:1]} does not match {rng.n} streams")
        return rng.normal(shape[1:])
    return rng.standard_normal(shape)


def draw_uniform(rng, shape):
    shape = tuple(shape)
    if isinstance(rng, Streams):
        if not shape or shape[0] != rng.n:
            raise ConfigError(f"leading axis {shape[:1]} does not match {rng.n} streams")
        return rng.uniform(shape[1:])
    return rng.random(shape)
