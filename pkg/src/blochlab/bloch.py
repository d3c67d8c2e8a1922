"""Floquet-Bloch fiber matrices of Delta + V on l^2(B_p).

For quasi-momentum x the fiber operator acts as

    (H_x psi)(k) = sum_j 2 cos(2 pi (x_j + k_j)) psi(k) + sum_l Vhat(l) psi(k + l),

so entry (k, k') is Vhat(k' - k) off the diagonal. The same operator is
realised independently in real space by :func:`realspace_twisted_matrix`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch
from .lattice import Period, dual_numerators
from .potential import PeriodicPotential

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True, eq=False)
class BlochMatrix:
    period: Period
    z: np.ndarray
    entries: np.ndarray
    hermitian: bool

    @property
    def size(self) -> int:
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class DiagonalProfile:
    y: np.ndarray
    values: np.ndarray


def _check_dim(p: Period, x) -> np.ndarray:
    arr = np.asarray(x)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.shape[-1] != p.d:
        raise DimensionMismatch(f"quasi-momentum has {arr.shape[-1]} coordinates, period is {p.d}-dimensional")
    return arr


def convolution_matrix(V: PeriodicPotential) -> np.ndarray:
    """Matrix of psi -> sum_l Vhat(l) psi(. + l) in canonical order (includes Vhat(0) on the diagonal)."""
    p = V.period
    nums = dual_numerators(p)
    diff = (nums[None, :, :] - nums[:, None, :]) % np.array(p.components)
    return V.coeffs[tuple(diff[..., m] for m in range(p.d))]


def kinetic_diagonal(p, x) -> np.ndarray:
    """sum_j 2 cos(2 pi (x_j + k_j)) for every k in B_p; ``x`` may be batched (..., d) and complex."""
    per = Period.of(p)
    x = _check_dim(per, x)
    frac = dual_numerators(per) / np.array(per.components, dtype=float)
    phase = TWO_PI * (x[..., None, :] + frac)
    if np.iscomplexobj(phase):
        # exponential form keeps large imaginary parts free of cancellation
        return np.sum(np.exp(1j * phase) + np.exp(-1j * phase), axis=-1)
    return np.sum(2.0 * np.cos(phase), axis=-1)


def derivative_diagonal(p, x, axis: int | None = None) -> np.ndarray:
    """Diagonal of d H_x / d x_axis: -4 pi sin(2 pi (x_axis + k_axis)); ``axis`` is 0-based, default last."""
    per = Period.of(p)
    x = _check_dim(per, x)
    axis = per.d - 1 if axis is None else axis
    if not 0 <= axis < per.d:
        raise DimensionMismatch(f"direction {axis} outside 0..{per.d - 1}")
    frac = dual_numerators(per)[:, axis] / per.components[axis]
    phase = TWO_PI * (x[..., axis, None] + frac)
    if np.iscomplexobj(phase):
        return -2.0 * np.pi * (np.exp(1j * phase) - np.exp(-1j * phase)) / 1j
    return -4.0 * np.pi * np.sin(phase)


def assemble(V: PeriodicPotential, x) -> BlochMatrix:
    x = _check_dim(V.period, np.asarray(x, dtype=float))
    if x.ndim != 1:
        raise DimensionMismatch("assemble takes a single quasi-momentum; use assemble_batch")
    H = convolution_matrix(V).astype(complex)
    H[np.diag_indices_from(H)] += kinetic_diagonal(V.period, x)
    return BlochMatrix(V.period, x.astype(complex), H, True)


def assemble_complex(V: PeriodicPotential, z) -> BlochMatrix:
    z = _check_dim(V.period, np.asarray(z, dtype=complex))
    H = convolution_matrix(V).astype(complex)
    H[np.diag_indices_from(H)] += kinetic_diagonal(V.period, z)
    return BlochMatrix(V.period, z, H, bool(np.all(z.imag == 0)))


def assemble_batch(V: PeriodicPotential, xs, conv: np.ndarray | None = None) -> np.ndarray:
    """Stack of fiber matrices, shape (N, P, P), for real quasi-momenta ``xs`` of shape (N, d)."""
    xs = _check_dim(V.period, np.asarray(xs, dtype=float))
    xs = xs.reshape(-1, V.d)
    conv = convolution_matrix(V) if conv is None else conv
    H = np.broadcast_to(conv, (xs.shape[0],) + conv.shape).astype(complex)
    diag = kinetic_diagonal(V.period, xs)
    idx = np.arange(conv.shape[0])
    H[:, idx, idx] += diag
    return H


def derivative_matrix(V: PeriodicPotential, x, j: int | None = None) -> np.ndarray:
    """d H_x / d x_j as a dense diagonal matrix; independent of V. ``j`` is 0-based."""
    return np.diag(derivative_diagonal(V.period, np.asarray(x, dtype=float), j))


def diagonal_profile(p, y) -> DiagonalProfile:
    """d(k, y) = sum_j e(k_j / p_j) exp(2 pi y_j) for every k in B_p."""
    per = Period.of(p)
    y = _check_dim(per, np.asarray(y, dtype=float))
    frac = dual_numerators(per) / np.array(per.components, dtype=float)
    vals = np.sum(np.exp(1j * TWO_PI * frac) * np.exp(TWO_PI * y), axis=-1)
    return DiagonalProfile(y, vals)


def separation_shift(p, sup_norm: float, required: float | None = None) -> np.ndarray:
    """Imaginary shift y making the dominant diagonal of H_{iy} well separated.

    Uses y_j = log(p_1...p_j 2^j (4(d + |V|) + 1)) / (2 pi). If ``required`` is
    given, each y_j is raised where needed so that the sufficient recursion
    e^{2 pi y_1} >= A p_1 / (2 pi), e^{2 pi y_j} >= p_j (1/pi + 1/p_{j-1}) e^{2 pi y_{j-1}}
    holds with A = ``required`` (default d + |V| + 1, for which nothing changes).
    """
    per = Period.of(p)
    d = per.d
    required = d + sup_norm + 1.0 if required is None else float(required)
    y = np.empty(d)
    cum = 1
    for j, pj in enumerate(per):
        cum *= pj
        y[j] = np.log(cum * 2 ** (j + 1) * (4 * (d + sup_norm) + 1)) / TWO_PI
    floor = np.log(required * per[0] / TWO_PI) / TWO_PI
    y[0] = max(y[0], floor)
    for j in range(1, d):
        step = np.log(per[j] * (1 / np.pi + 1 / per[j - 1])) / TWO_PI
        y[j] = max(y[j], y[j - 1] + step)
    return y


def realspace_twisted_matrix(V: PeriodicPotential, x) -> np.ndarray:
    """Delta + V on the cell prod {0..p_j - 1} with twisted boundary conditions.

    Bloch waves u(n + p_j e_j) = e(-x_j p_j) u(n) carry quasi-momentum x, so
    the bond that wraps axis j picks up the phase e(-x_j p_j). Unitarily
    equivalent to :func:`assemble` and built without any Fourier transform.
    """
    p = V.period
    x = _check_dim(p, np.asarray(x, dtype=float))
    P = p.size
    H = np.zeros((P, P), dtype=complex)
    cells = np.indices(p.components).reshape(p.d, -1).T
    H[np.arange(P), np.arange(P)] = V.cell.ravel()
    for m in range(p.d):
        wrap_phase = np.exp(-1j * TWO_PI * x[m] * p[m])
        for a, n in enumerate(cells):
            nb = n.copy()
            nb[m] += 1
            phase = 1.0
            if nb[m] == p[m]:
                nb[m] = 0
                phase = wrap_phase
            b = int(np.ravel_multi_index(tuple(nb), p.components))
            H[a, b] += phase
            H[b, a] += np.conj(phase)
    return H
