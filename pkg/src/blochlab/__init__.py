"""Floquet-Bloch spectral toolkit for limit-periodic lattice Schroedinger operators."""

from .bloch import assemble, realspace_twisted_matrix
from .errors import BlochLabError
from .lattice import DualPoint, Period, PeriodTower, make_period_tower
from .potential import PeriodicPotential, PotentialTower

__all__ = [
    "BlochLabError",
    "DualPoint",
    "Period",
    "PeriodTower",
    "PeriodicPotential",
    "PotentialTower",
    "assemble",
    "make_period_tower",
    "realspace_twisted_matrix",
]
__version__ = "0.1.0"
