"""Counter-based Brownian drivers and time grids.

Every sample index owns a fixed slice of a Philox stream.  Samples are grouped
in blocks of ``BLOCK`` consecutive indices; block ``b`` of stream ``k`` is the
Philox generator keyed by the master seed with counter ``(0, 0, k, b)``.  The
normals drawn for a given ``(seed, stream, sample, step)`` therefore do not
depend on how many samples are requested, on which worker computes them, or
on the order in which blocks are visited.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TypeVar

import numpy as np

BLOCK = 1024

T = TypeVar("T")


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid ``s_k = k * horizon / n_steps`` on ``[0, horizon]``."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if not (isinstance(self.n_steps, (int, np.integer)) and self.n_steps >= 1):
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not math.isfinite(self.horizon) or self.horizon <= 0.0:
            raise ValueError(f"horizon must be finite and positive, got {self.horizon!r}")

    @classmethod
    def from_step(cls, horizon: float, ds: float) -> "TimeGrid":
        """Grid on ``[0, horizon]`` whose step is as close to ``ds`` as possible."""
        if ds <= 0:
            raise ValueError("ds must be positive")
        return cls(float(horizon), max(1, int(round(horizon / ds))))

    @property
    def ds(self) -> float:
        return self.horizon / self.n_steps

    def node(self, k: int) -> float:
        # k * horizon / n exactly hits horizon at k == n.
        return k * self.horizon / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.horizon / self.n_steps


@dataclass(frozen=True)
class BrownianDriver:
    """Source of reproducible standard normals, indexed by sample.

    Args:
      master_seed: 64-bit seed; the only source of randomness.
      dim: dimension of the driving Brownian motion.
      workers: number of threads used by :meth:`map_blocks`.  Results never
        depend on it.
    """

    master_seed: int
    dim: int = 3
    workers: int = 1
    _key: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        key = np.random.SeedSequence(int(self.master_seed) & (2**64 - 1)).generate_state(
            2, np.uint64
        )
        object.__setattr__(self, "_key", (int(key[0]), int(key[1])))

    def with_dim(self, dim: int) -> "BrownianDriver":
        return BrownianDriver(self.master_seed, dim, self.workers)

    def with_workers(self, workers: int) -> "BrownianDriver":
        return BrownianDriver(self.master_seed, self.dim, workers)

    def _block_generator(self, stream: int, block: int) -> np.random.Generator:
        bitgen = np.random.Philox(key=list(self._key), counter=[0, 0, int(stream), int(block)])
        return np.random.Generator(bitgen)

    def block_normals(self, block: int, n_steps: int, stream: int = 0) -> np.ndarray:
        """Standard normals for all ``BLOCK`` samples of a block.

        Returns an array of shape ``(BLOCK, n_steps, dim)``.  Draws are laid
        out step-major, so the first ``k`` steps do not depend on ``n_steps``.
        """
        gen = self._block_generator(stream, block)
        z = gen.standard_normal((n_steps, BLOCK, self.dim))
        return np.ascontiguousarray(z.transpose(1, 0, 2))

    def normals(self, start: int, count: int, n_steps: int, stream: int = 0) -> np.ndarray:
        """Standard normals for samples ``start .. start + count - 1``."""
        if count < 1 or n_steps < 1:
            raise ValueError("count and n_steps must be >= 1")
        out = np.empty((count, n_steps, self.dim))
        stop = start + count
        for b in range(start // BLOCK, (stop - 1) // BLOCK + 1):
            lo, hi = max(start, b * BLOCK), min(stop, (b + 1) * BLOCK)
            z = self.block_normals(b, n_steps, stream)
            out[lo - start:hi - start] = z[lo - b * BLOCK:hi - b * BLOCK]
        return out

    def stream_for(self, sample_index: int, n_steps: int, stream: int = 0) -> np.ndarray:
        """Normals of a single sample, shape ``(n_steps, dim)``."""
        return self.normals(sample_index, 1, n_steps, stream)[0]

    def map_blocks(
        self,
        fn: Callable[[int, int, np.ndarray], T],
        n_samples: int,
        n_steps: int,
        stream: int = 0,
    ) -> list[T]:
        """Apply ``fn(start, count, normals)`` to every block of samples.

        Results are returned in block order whatever ``workers`` is, so any
        reduction done by the caller in list order is worker-invariant.
        """
        if n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        spans = [
            (b * BLOCK, min(n_samples, (b + 1) * BLOCK) - b * BLOCK)
            for b in range((n_samples + BLOCK - 1) // BLOCK)
        ]

        def run(span):
            start, count = span
            return fn(start, count, self.normals(start, count, n_steps, stream))

        if self.workers <= 1 or len(spans) == 1:
            return [run(s) for s in spans]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(run, spans))


def sample_brownian_increments(
    driver: BrownianDriver, grid: TimeGrid, n_samples: int, stream: int = 0
) -> np.ndarray:
    """Brownian increments on ``grid``, shape ``(n_samples, n_steps, dim)``.

    Each increment is ``N(0, ds * I)``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    parts = driver.map_blocks(lambda s, c, z: z, n_samples, grid.n_steps, stream)
    return np.concatenate(parts, axis=0) * math.sqrt(grid.ds)

