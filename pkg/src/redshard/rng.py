"""Named, reproducible random streams.

Every stochastic input of a run (inter-arrivals, code draws, chunk downloading
times on each thread) is taken from its own stream.  Streams are derived from
one master seed through :class:`numpy.random.SeedSequence` spawn keys and drive
a counter-based Philox generator, so that two runs that share a seed and a
stream name see exactly the same variates.  This is what makes
common-random-number comparisons between policies possible.
"""

import zlib

import numpy as np


def _name_key(name):
    return zlib.crc32(name.encode("utf-8"))


class Streams:
    """Factory of independent generators under one master seed.

    Parameters
    ----------
    seed : int
        Nonnegative master seed (up to 64 bits).
    *path : int
        Extra spawn-key components, e.g. a replication index.
    """

    def __init__(self, seed=0, *path):
        if seed < 0:
            raise ValueError("seed must be nonnegative")
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        self._cache = {}

    def child(self, *index):
        return Streams(self.seed, *(self.path + tuple(index)))

    def get(self, name, *index):
        """Return the generator for ``name`` (and optional integer index)."""
        key = (name,) + tuple(index)
        gen = self._cache.get(key)
        if gen is None:
            ss = np.random.SeedSequence(
                self.seed, spawn_key=self.path + (_name_key(name),) + tuple(int(i) for i in index)
            )
            gen = np.random.Generator(np.random.Philox(ss))
            self._cache[key] = gen
        return gen

    def __repr__(self):
        return f"Streams(seed={self.seed}, path={self.path})"


def as_generator(rng):
    """Coerce ``None``/int/Generator/Streams into a numpy Generator."""
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, Streams):
        return rng.get("default")
    return np.random.default_rng(rng)


class AttemptDraws:
    """Raw variates for chunk attempts, one stream per thread.

    The m-th attempt started on thread l always receives the m-th
    (standard exponential, uniform) pair of stream ``("thread", l)``, whatever
    policy is running.  Distributions turn the pair into a downloading time via
    ``from_variates``.
    """

    def __init__(self, streams, L, block=128):
        self._streams = streams
        self._block = block
        self._exp = [[] for _ in range(L)]
        self._unif = [[] for _ in range(L)]
        self._pos = [0] * L

    def next(self, thread):
        pos = self._pos[thread]
        exp = self._exp[thread]
        if pos >= len(exp):
            gen = self._streams.get("thread", thread)
            exp = self._exp[thread] = gen.standard_exponential(self._block).tolist()
            self._unif[thread] = gen.random(self._block).tolist()
            pos = 0
        self._pos[thread] = pos + 1
        return exp[pos], self._unif[thread][pos]


class VariateBlock:
    """Sequential supply of standard exponentials and uniforms from one generator."""

    def __init__(self, gen, block=1 << 14):
        self._gen = gen
        self._block = block
        self._refill()

    def _refill(self):
        self.exp = self._gen.standard_exponential(self._block).tolist()
        self.unif = self._gen.random(self._block).tolist()
        self.pos = 0

    def pair(self):
        if self.pos >= self._block:
            self._refill()
        pos = self.pos
        self.pos = pos + 1
        return self.exp[pos], self.unif[pos]
