"""Periodic potential layers and their accumulation into limit-periodic towers.

Fourier convention: ``V(n) = sum_k Vhat(k) e(k.n)`` with ``e(t) = exp(2 pi i t)``,
so the forward transform is ``Vhat(k) = P^-1 sum_n V(n) e(-k.n)``. Coefficient
arrays are indexed by dual-lattice numerators, i.e. ``coeffs[k_1, ..., k_d]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotRealizable, ShapeMismatch, StageOutOfRange
from .lattice import Period, PeriodTower, make_period_tower

REALITY_TOL = 1e-10


def fourier_forward(cell, p) -> np.ndarray:
    per = Period.of(p)
    arr = np.asarray(cell, dtype=float)
    if arr.size != per.size:
        raise ShapeMismatch(f"cell has {arr.size} entries, period {per.components} needs {per.size}")
    arr = arr.reshape(per.components)
    return np.fft.fftn(arr) / per.size


def fourier_inverse(coeffs, p) -> np.ndarray:
    per = Period.of(p)
    arr = np.asarray(coeffs, dtype=complex)
    if arr.size != per.size:
        raise ShapeMismatch(f"{arr.size} coefficients, period {per.components} needs {per.size}")
    arr = arr.reshape(per.components)
    values = np.fft.ifftn(arr) * per.size
    residue = float(np.max(np.abs(values.imag))) if values.size else 0.0
    if residue > REALITY_TOL:
        raise NotRealizable(f"coefficients violate the reality condition (imaginary residue {residue:.3e})")
    return values.real.copy()


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class PeriodicPotential:
    period: Period
    cell: np.ndarray
    coeffs: np.ndarray = field(repr=False)

    @classmethod
    def from_cell(cls, period, cell) -> "PeriodicPotential":
        per = Period.of(period)
        arr = np.asarray(cell, dtype=float)
        if arr.size != per.size:
            raise ShapeMismatch(f"cell has {arr.size} entries, period {per.components} needs {per.size}")
        arr = arr.reshape(per.components)
        return cls(per, _frozen(arr), _frozen(fourier_forward(arr, per)))

    @classmethod
    def from_coeffs(cls, period, coeffs) -> "PeriodicPotential":
        per = Period.of(period)
        cell = fourier_inverse(coeffs, per)
        return cls(per, _frozen(cell), _frozen(np.asarray(coeffs, dtype=complex).reshape(per.components)))

    @classmethod
    def zero(cls, period) -> "PeriodicPotential":
        per = Period.of(period)
        return cls.from_cell(per, np.zeros(per.components))

    @property
    def d(self) -> int:
        return self.period.d

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.cell))) if self.cell.size else 0.0

    def refine(self, fine) -> "PeriodicPotential":
        """The same potential viewed with a multiple of its period."""
        fine = Period.of(fine)
        reps = self.period.ratio(fine)
        return PeriodicPotential.from_cell(fine, np.tile(self.cell, reps))

    def scaled(self, factor: float) -> "PeriodicPotential":
        return PeriodicPotential.from_cell(self.period, factor * self.cell)

    def __add__(self, other: "PeriodicPotential") -> "PeriodicPotential":
        a, b = self, other
        if a.period.divides(b.period):
            a = a.refine(b.period)
        elif b.period.divides(a.period):
            b = b.refine(a.period)
        else:
            raise ShapeMismatch(f"periods {a.period.components} and {b.period.components} are not nested")
        return PeriodicPotential.from_cell(a.period, a.cell + b.cell)


def evaluate(V: PeriodicPotential, n) -> float:
    n = np.atleast_1d(np.asarray(n, dtype=np.int64))
    if n.size != V.d:
        raise ShapeMismatch(f"lattice point has {n.size} coordinates, potential is {V.d}-dimensional")
    idx = tuple(int(v) % p for v, p in zip(n, V.period))
    return float(V.cell[idx])


@dataclass(frozen=True)
class PotentialTower:
    tower: PeriodTower
    layers: tuple[PeriodicPotential, ...]

    def __post_init__(self):
        if len(self.layers) > len(self.tower):
            raise ShapeMismatch("more layers than periods in the tower")
        for j, (layer, per) in enumerate(zip(self.layers, self.tower), start=1):
            if layer.period != per:
                raise ShapeMismatch(f"layer {j} has period {layer.period.components}, expected {per.components}")

    @classmethod
    def build(cls, layers) -> "PotentialTower":
        layers = tuple(layers)
        return cls(make_period_tower([layer.period for layer in layers]), layers)

    @property
    def layer_norms(self) -> list[float]:
        return [layer.sup_norm for layer in self.layers]


def accumulate(tower: PotentialTower, J: int) -> PeriodicPotential:
    """Partial sum V_1 + ... + V_J on the period of stage J (stages are 1-based)."""
    if not 1 <= J <= len(tower.layers):
        raise StageOutOfRange(f"stage {J} not in 1..{len(tower.layers)}")
    target = tower.tower[J - 1]
    total = np.zeros(target.components)
    for layer in tower.layers[:J]:
        total = total + np.tile(layer.cell, layer.period.ratio(target))
    return PeriodicPotential.from_cell(target, total)


def layer_from_json(spec: dict) -> PeriodicPotential:
    """Parse ``{"period": [...], "cell": [...]}`` or ``{"period": [...], "coeffs": [[[k...], re, im], ...]}``."""
    per = Period.of(spec["period"])
    if "cell" in spec and "coeffs" in spec:
        raise ShapeMismatch("layer gives both 'cell' and 'coeffs'")
    if "cell" in spec:
        return PeriodicPotential.from_cell(per, np.asarray(spec["cell"], dtype=float))
    if "coeffs" in spec:
        coeffs = np.zeros(per.components, dtype=complex)
        for entry in spec["coeffs"]:
            k, re, im = entry
            if len(k) != per.d:
                raise ShapeMismatch(f"coefficient index {k} has wrong dimension")
            coeffs[tuple(int(v) % p for v, p in zip(k, per))] += complex(re, im)
        return PeriodicPotential.from_coeffs(per, coeffs)
    raise ShapeMismatch("layer needs 'cell' or 'coeffs'")


def layer_to_json(V: PeriodicPotential) -> dict:
    return {"period": list(V.period.components), "cell": [float(v) for v in V.cell.ravel()]}
