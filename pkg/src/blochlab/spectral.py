"""Eigen-decomposition of fiber matrices and the spectral quantities built on it.

Band labels are 1-based in returned tuples (``min_gap``), arrays are 0-based.
The discriminant f and the resultant g are also available in log form since
their natural scale over/underflows quickly with P.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConvergenceFailure,
    DegenerateEigenvalue,
    IllConditioned,
    NotHermitian,
    NotNormalized,
    PreconditionViolated,
)

HERMITIAN_TOL = 1e-12
DEGENERACY_TOL = 1e-8
PHASE_TIE = 1e-10
RESULTANT_CAP = 64


@dataclass(frozen=True, eq=False)
class EigenSystem:
    x: np.ndarray | None
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residuals: np.ndarray

    @property
    def size(self) -> int:
        return self.eigenvalues.shape[0]


@dataclass(frozen=True, eq=False)
class Velocities:
    values: np.ndarray
    reliable: np.ndarray

    @property
    def all_reliable(self) -> bool:
        return bool(np.all(self.reliable))


@dataclass(frozen=True, eq=False)
class CharPoly:
    """Monic P(E) = E^P + sum_j c_j E^j; ``coeffs`` holds c_0..c_{P-1}."""

    coeffs: np.ndarray

    @property
    def degree(self) -> int:
        return self.coeffs.shape[0]

    def full(self) -> np.ndarray:
        """Ascending coefficients including the leading 1."""
        return np.concatenate([self.coeffs, [1.0]])

    def __call__(self, E):
        return np.polynomial.polynomial.polyval(E, self.full())


def _entries(M) -> np.ndarray:
    return np.asarray(getattr(M, "entries", M))


def phase_fix(vectors: np.ndarray) -> np.ndarray:
    """Rotate each column so its largest-modulus entry is real positive.

    Entries within a relative 1e-10 of the maximum count as ties; the lowest
    canonical index wins. Works on stacks (..., P, P).
    """
    mod = np.abs(vectors)
    peak = mod.max(axis=-2, keepdims=True)
    pivot = np.argmax(mod >= peak * (1.0 - PHASE_TIE), axis=-2)
    comp = np.take_along_axis(vectors, pivot[..., None, :], axis=-2)
    phase = np.where(np.abs(comp) > 0, np.conj(comp) / np.where(np.abs(comp) > 0, np.abs(comp), 1.0), 1.0)
    return vectors * phase


def eigensystem(M, x=None) -> EigenSystem:
    H = _entries(M)
    scale = 1.0 + float(np.max(np.abs(H))) if H.size else 1.0
    if np.max(np.abs(H - H.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise NotHermitian("fiber matrix is not Hermitian within tolerance")
    try:
        E, psi = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    psi = phase_fix(psi)
    res = np.linalg.norm(H @ psi - psi * E, axis=0)
    if x is None and hasattr(M, "z"):
        x = np.real(M.z)
    return EigenSystem(None if x is None else np.asarray(x), E, psi, res)


def eigensystem_batch(H: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (N, P) and phase-fixed eigenvectors (N, P, P) of a Hermitian stack."""
    try:
        E, psi = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return E, phase_fix(psi)


def min_gap(E) -> tuple[float, int]:
    """Smallest consecutive gap and the 1-based index of its lower band."""
    E = np.asarray(E, dtype=float)
    if E.shape[-1] < 2:
        return float("inf"), 0
    gaps = np.diff(E)
    i = int(np.argmin(gaps))
    return float(gaps[i]), i + 1


def band_gaps(E: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gap below and above each band (inf at the edges); works on stacks (..., P)."""
    E = np.asarray(E, dtype=float)
    inf = np.full(E.shape[:-1] + (1,), np.inf)
    diff = np.diff(E, axis=-1)
    return np.concatenate([inf, diff], axis=-1), np.concatenate([diff, inf], axis=-1)


def eig_distance(phi, psi, tol: float = 1e-10) -> float:
    """inf over |c| = 1 of ||phi - c psi||, i.e. sqrt(2 - 2|<phi, psi>|) for unit vectors."""
    phi = np.asarray(phi, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    for name, v in (("phi", phi), ("psi", psi)):
        if abs(np.linalg.norm(v) - 1.0) > tol:
            raise NotNormalized(f"{name} has norm {np.linalg.norm(v):.12g}")
    ov = np.vdot(psi, phi)
    # evaluate the optimal-phase residual directly; the closed form loses digits near 0
    c = ov / abs(ov) if abs(ov) > 0 else 1.0
    return float(np.linalg.norm(phi - c * psi))


def perturbation_bound_check(A, delta: float, psi, phi, eps: float, tol: float = 1e-10) -> bool:
    """Check d(phi, psi) <= 2 eps / delta under the hypotheses of the gap theorem."""
    A = np.asarray(A)
    psi = np.asarray(psi, dtype=complex)
    phi = np.asarray(phi, dtype=complex)
    scale = 1.0 + float(np.max(np.abs(A)))
    if delta <= 0:
        raise PreconditionViolated("delta must be positive")
    if np.max(np.abs(A - A.conj().T), initial=0.0) > HERMITIAN_TOL * scale:
        raise PreconditionViolated("A is not Hermitian")
    ev = np.linalg.eigvalsh(A)
    if int(np.sum(np.abs(ev) <= delta)) != 1:
        raise PreconditionViolated("A must have exactly one eigenvalue in [-delta, delta]")
    if np.linalg.norm(A @ psi) > tol * scale:
        raise PreconditionViolated("psi is not in the kernel of A")
    if np.linalg.norm(A @ phi) > eps * (1 + tol):
        raise PreconditionViolated("||A phi|| exceeds eps")
    return eig_distance(phi, psi) <= 2.0 * eps / delta * (1 + tol) + tol


def hellmann_feynman(es: EigenSystem, D, tol: float = DEGENERACY_TOL) -> Velocities:
    """Band velocities <psi_l, D psi_l>; bands closer than ``tol`` to a neighbour are flagged."""
    D = np.asarray(D)
    psi = es.eigenvectors
    if D.ndim == 1 or np.count_nonzero(D - np.diag(np.diagonal(D))) == 0:
        diag = D if D.ndim == 1 else np.diagonal(D)
        v = np.real(np.einsum("k,kl->l", diag, np.abs(psi) ** 2))
    else:
        v = np.real(np.einsum("kl,km,ml->l", psi.conj(), D, psi))
    below, above = band_gaps(es.eigenvalues)
    return Velocities(v, np.minimum(below, above) >= tol)


def velocities_batch(psi: np.ndarray, diag: np.ndarray) -> np.ndarray:
    """Velocities for a stack: psi (N, P, P), diag (N, P) -> (N, P)."""
    return np.einsum("nk,nkl->nl", diag, np.abs(psi) ** 2)


def discriminant(E) -> float:
    """prod_{j<l} (E_j - E_l)^2; empty product is 1."""
    E = np.asarray(E)
    iu = np.triu_indices(E.shape[-1], 1)
    diff = E[..., iu[0]] - E[..., iu[1]]
    return np.prod(diff**2, axis=-1).real if np.iscomplexobj(diff) else np.prod(diff**2, axis=-1)


def log_discriminant(E) -> np.ndarray | float:
    """log|f|; -inf at degeneracies. Works on stacks (..., P)."""
    E = np.asarray(E)
    iu = np.triu_indices(E.shape[-1], 1)
    diff = np.abs(E[..., iu[0]] - E[..., iu[1]])
    with np.errstate(divide="ignore"):
        return 2.0 * np.sum(np.log(diff), axis=-1)


def complex_discriminant(E) -> complex:
    """prod_{j<l} (E_j - E_l)^2 for an unordered complex spectrum."""
    E = np.asarray(E, dtype=complex)
    iu = np.triu_indices(E.shape[-1], 1)
    return complex(np.prod((E[iu[0]] - E[iu[1]]) ** 2))


def gap_from_discriminant(f: float, d: int, sup_norm: float, P: int) -> float:
    """Lower bound |f|^{1/2} / (2d + |V|)^{P^2/2} on the minimal eigenvalue gap."""
    if f <= 0:
        return 0.0
    return float(np.exp(0.5 * np.log(f) - 0.5 * P * P * np.log(2 * d + sup_norm)))


def log_gap_from_discriminant(log_f, d: int, sup_norm: float, P: int):
    return 0.5 * np.asarray(log_f) - 0.5 * P * P * np.log(2 * d + sup_norm)


def g_value(es: EigenSystem, velocities) -> float:
    """g = f * prod_l dE_l/dx_d; raises when a velocity is unreliable."""
    if isinstance(velocities, Velocities):
        if not velocities.all_reliable:
            raise DegenerateEigenvalue("g needs simple eigenvalues")
        velocities = velocities.values
    return float(discriminant(es.eigenvalues) * np.prod(velocities))


def log_g(log_f, velocities) -> np.ndarray | float:
    """log|g| = log|f| + sum log|v|; works on stacks."""
    with np.errstate(divide="ignore"):
        return np.asarray(log_f) + np.sum(np.log(np.abs(velocities)), axis=-1)


def _hessenberg_charpoly(H: np.ndarray) -> np.ndarray:
    """Ascending coefficients of det(E - H) via the upper-Hessenberg recurrence."""
    n = H.shape[0]
    if n == 0:
        return np.array([1.0 + 0j])
    Hh = scipy.linalg.hessenberg(H)
    polys = [np.array([1.0 + 0j])]
    for k in range(n):
        # p_{k+1}(E) = (E - h_kk) p_k - sum_{i<k} h_ik (prod_{m=i+1..k} h_{m,m-1}) p_i
        nxt = np.zeros(k + 2, dtype=complex)
        nxt[1:] += polys[k]
        nxt[:-1] -= Hh[k, k] * polys[k]
        prod = 1.0 + 0j
        for i in range(k - 1, -1, -1):
            prod *= Hh[i + 1, i]
            nxt[: i + 1] -= Hh[i, k] * prod * polys[i]
        polys.append(nxt)
    return polys[n]


def char_poly(M) -> CharPoly:
    H = _entries(M)
    c = _hessenberg_charpoly(np.asarray(H, dtype=complex))
    if np.allclose(H, H.conj().T, atol=HERMITIAN_TOL * (1 + np.max(np.abs(H)))):
        c = c.real
    return CharPoly(c[:-1])


def char_poly_derivative(M, diag_derivative) -> np.ndarray:
    """Ascending coefficients of d/dx det(E - H_x) when dH/dx is diagonal.

    Jacobi's formula gives -sum_k dH_kk det(E - H with row and column k removed).
    """
    H = np.asarray(_entries(M), dtype=complex)
    n = H.shape[0]
    out = np.zeros(n, dtype=complex)
    keep = np.ones(n, dtype=bool)
    for k in range(n):
        if diag_derivative[k] == 0:
            continue
        keep[k] = False
        out -= diag_derivative[k] * _hessenberg_charpoly(H[np.ix_(keep, keep)])
        keep[k] = True
    return out


def sylvester_matrix(a, b) -> np.ndarray:
    """Sylvester matrix of ascending-coefficient polynomials, ``b`` taken at its formal degree."""
    a = np.asarray(a)[::-1]
    b = np.asarray(b)[::-1]
    m, n = len(a) - 1, len(b) - 1
    S = np.zeros((m + n, m + n), dtype=np.result_type(a, b, float))
    for i in range(n):
        S[i, i : i + m + 1] = a
    for i in range(m):
        S[n + i, i : i + n + 1] = b
    return S


def resultant(a, b) -> complex:
    """Res(a, b) as a Sylvester determinant (LU with partial pivoting)."""
    m, n = len(a) - 1, len(b) - 1
    if m == 0:
        return complex(a[0]) ** n
    if n == 0:
        return complex(b[0]) ** m
    return complex(np.linalg.det(sylvester_matrix(a, b)))


def resultant_check(M, diag_derivative, cap: int = RESULTANT_CAP, scale: float | None = None,
                    threshold: float = 1e-8) -> tuple[float, float]:
    """f and g through resultants of the characteristic polynomial.

    f_res = (-1)^{P(P-1)/2} Res(P, dP/dE) and g_res = (-1)^{P(P+1)/2} Res(P, dP/dx_d)
    for P(E) = det(E - H). Raises IllConditioned when |f_res| < threshold * scale.
    """
    H = _entries(M)
    P = H.shape[0]
    if P > cap:
        raise IllConditioned(f"P = {P} exceeds the Sylvester cap {cap}")
    if P == 1:
        return 1.0, float(np.real(diag_derivative[0]))
    cp = char_poly(H).full()
    dE = np.polynomial.polynomial.polyder(cp)
    dX = char_poly_derivative(H, diag_derivative)
    f = (-1) ** (P * (P - 1) // 2) * resultant(cp, dE)
    g = (-1) ** (P * (P + 1) // 2) * resultant(cp, dX)
    scale = 1.0 if scale is None else scale
    if abs(f) < threshold * scale:
        raise IllConditioned(f"|f| = {abs(f):.3e} below {threshold * scale:.3e}")
    return float(np.real(f)), float(np.real(g))


def nonhermitian_spectrum(M, cap: int = 4096) -> np.ndarray:
    """Eigenvalues of a general complex fiber matrix, sorted by (real, imaginary) part."""
    H = _entries(M)
    if H.shape[0] > cap:
        raise ConvergenceFailure(f"P = {H.shape[0]} exceeds cap {cap}")
    try:
        ev = scipy.linalg.eigvals(H)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return ev[np.lexsort((ev.imag, ev.real))]
