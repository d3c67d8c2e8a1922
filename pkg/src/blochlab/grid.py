"""Cell-centre sample grids over the fundamental domain of a period.

A grid with ``resolution[m]`` cells along axis m places samples at
``x_m = (i_m + 1/2) / (resolution[m] * p_m)``. Grids of different stages are
compatible when they share the same number of samples per torus axis
(``resolution[m] * p_m``); then a fine-stage sample shifted by a coset shift is
exactly a coarse-stage sample, which is what the hierarchy relies on.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatch
from .lattice import Period


@dataclass(frozen=True)
class FiberGrid:
    period: Period
    resolution: tuple[int, ...]

    def __post_init__(self):
        per = Period.of(self.period)
        res = tuple(int(r) for r in self.resolution)
        if len(res) != per.d:
            raise GridMismatch(f"resolution {res} does not match dimension {per.d}")
        if any(r < 1 for r in res):
            raise GridMismatch("resolution must be positive")
        object.__setattr__(self, "period", per)
        object.__setattr__(self, "resolution", res)

    @classmethod
    def for_torus(cls, period, torus_points) -> "FiberGrid":
        """Grid whose samples, translated by B_p, hit ``torus_points`` points per axis."""
        per = Period.of(period)
        pts = tuple(torus_points) if np.ndim(torus_points) else (int(torus_points),) * per.d
        res = []
        for n, p in zip(pts, per):
            if n % p:
                raise GridMismatch(f"{n} torus points per axis is not a multiple of period {p}")
            res.append(n // p)
        return cls(per, tuple(res))

    @property
    def d(self) -> int:
        return self.period.d

    @property
    def shape(self) -> tuple[int, ...]:
        return self.resolution

    @property
    def size(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def torus_points(self) -> tuple[int, ...]:
        return tuple(r * p for r, p in zip(self.resolution, self.period))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(1.0 / n for n in self.torus_points)

    def points(self) -> np.ndarray:
        """Sample coordinates, shape (size, d), lexicographic (C) order."""
        idx = np.indices(self.resolution).reshape(self.d, -1).T
        return (idx + 0.5) / np.array(self.torus_points, dtype=float)

    def axis_points(self, axis: int) -> np.ndarray:
        return (np.arange(self.resolution[axis]) + 0.5) / self.torus_points[axis]

    def shifted_index(self, shift_numerators, fine_period) -> np.ndarray:
        """Index on this grid of every sample of a finer-stage grid translated by a shift.

        ``self`` is the coarse grid; the fine grid has period ``fine_period`` and the
        same torus sampling. Returns an array of length (fine grid size).
        """
        fine = Period.of(fine_period)
        fine_res = [n // p for n, p in zip(self.torus_points, fine)]
        idx = np.indices(fine_res).reshape(self.d, -1)
        shifted = idx + (np.asarray(shift_numerators)[:, None] * np.array(fine_res)[:, None])
        for m in range(self.d):
            if np.any(shifted[m] >= self.resolution[m]):
                raise GridMismatch("shifted samples fall outside the coarse fundamental domain")
        return np.ravel_multi_index(tuple(shifted), self.resolution)

    def torus_index(self) -> np.ndarray:
        """Global torus sample index of ``y + k`` for each grid sample y and dual point k.

        Shape (size, P); columns follow the canonical order of B_p.
        """
        from .lattice import dual_numerators

        idx = np.indices(self.resolution).reshape(self.d, -1).T
        nums = dual_numerators(self.period)
        full = idx[:, None, :] + nums[None, :, :] * np.array(self.resolution)
        flat = np.ravel_multi_index(tuple(full.reshape(-1, self.d).T), self.torus_points)
        return flat.reshape(self.size, self.period.size)
