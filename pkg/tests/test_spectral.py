import math

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

from blochlab import bloch, spectral
from blochlab.errors import IllConditioned, NotHermitian, NotNormalized, PreconditionViolated
from blochlab.potential import PeriodicPotential

from .conftest import potentials

ALT = PeriodicPotential.from_cell((2,), [1.0, -1.0])
FREE1 = PeriodicPotential.zero((1,))


def es_at(V, x):
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return spectral.eigensystem(bloch.assemble(V, x), x)


def test_eigensystem_examples():
    es = spectral.eigensystem(np.diag([2.0, -2.0]))
    assert np.allclose(es.eigenvalues, [-2, 2])
    assert np.allclose(np.abs(es.eigenvectors), [[0, 1], [1, 0]])
    es = spectral.eigensystem(np.array([[2.0, 1.0], [1.0, -2.0]]))
    assert np.allclose(es.eigenvalues, [-math.sqrt(5), math.sqrt(5)], atol=1e-14)
    es = spectral.eigensystem(np.array([[0.7]]))
    assert es.eigenvalues[0] == 0.7 and es.eigenvectors[0, 0] == 1


def test_eigensystem_rejects_non_hermitian():
    with pytest.raises(NotHermitian):
        spectral.eigensystem(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_phase_convention():
    es = es_at(PeriodicPotential.from_cell((3,), [0.3, -0.2, 0.5]), [0.17])
    V = es.eigenvectors
    lead = V[np.argmax(np.abs(V), axis=0), np.arange(3)]
    assert np.all(lead.real > 0) and np.max(np.abs(lead.imag)) < 1e-15


def test_min_gap_examples():
    assert spectral.min_gap([-2, 2]) == (4, 1)
    assert spectral.min_gap([0, 0, 1]) == (0, 1)
    E = es_at(PeriodicPotential.zero((2,)), [0.25]).eigenvalues
    assert spectral.min_gap(E)[0] < 1e-15


def test_eig_distance_examples():
    psi = np.array([1.0, 0.0])
    assert spectral.eig_distance(psi, psi) == 0
    assert spectral.eig_distance(np.array([0.0, 1.0]), psi) == pytest.approx(math.sqrt(2))
    phi = np.array([0.5, math.sqrt(3) / 2]) * 1j
    assert spectral.eig_distance(phi, psi) == pytest.approx(1.0)
    with pytest.raises(NotNormalized):
        spectral.eig_distance(np.array([1.0, 1.0]), psi)


def test_perturbation_examples():
    A = np.diag([0.0, 1.0])
    psi = np.array([1.0, 0.0])
    assert spectral.perturbation_bound_check(A, 0.5, psi, psi, 0.0)
    t = math.asin(0.1)
    phi = np.array([math.cos(t), math.sin(t)])
    eps = float(np.linalg.norm(A @ phi))
    assert eps == pytest.approx(0.1)
    assert spectral.eig_distance(phi, psi) == pytest.approx(math.sqrt(2 - 2 * math.cos(t)))
    assert spectral.eig_distance(phi, psi) == pytest.approx(0.1001, abs=1e-4)
    assert spectral.perturbation_bound_check(A, 0.5, psi, phi, eps)
    with pytest.raises(PreconditionViolated):
        spectral.perturbation_bound_check(np.diag([0.0, 0.1]), 0.5, psi, phi, eps)


def test_perturbation_random_5x5():
    rng = np.random.default_rng(11)
    Q, _ = np.linalg.qr(rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5)))
    lam = np.array([0.0, 0.3, -0.4, 1.2, -2.0])
    A = (Q * lam) @ Q.conj().T
    A = (A + A.conj().T) / 2
    psi = Q[:, 0]
    phi = psi + 0.2 * Q[:, 1] + 0.1j * Q[:, 3]
    phi /= np.linalg.norm(phi)
    assert spectral.perturbation_bound_check(A, 0.25, psi, phi, float(np.linalg.norm(A @ phi)))


def test_velocity_examples():
    es = es_at(FREE1, [1 / 8])
    v = spectral.hellmann_feynman(es, bloch.derivative_diagonal(FREE1.period, [1 / 8])).values
    assert v[0] == pytest.approx(-4 * math.pi * math.sin(math.pi / 4), rel=1e-14)
    es = es_at(FREE1, [0.0])
    assert spectral.hellmann_feynman(es, bloch.derivative_diagonal(FREE1.period, [0.0])).values[0] == 0


def test_velocity_finite_difference_p3():
    V = PeriodicPotential.from_cell((3,), [0.4, -0.7, 0.2])
    x, h = np.array([0.21]), 1e-5
    v = spectral.hellmann_feynman(es_at(V, x), bloch.derivative_diagonal(V.period, x)).values
    fd = (es_at(V, x + h).eigenvalues - es_at(V, x - h).eigenvalues) / (2 * h)
    assert np.max(np.abs(v - fd)) < 1e-6


def test_finite_difference_error_is_second_order():
    # truncation error of central differences falls by 100 per decade of h
    V = PeriodicPotential.from_cell((3,), [0.9, -0.8, 0.1])
    x = np.array([0.05])
    v = spectral.hellmann_feynman(es_at(V, x), bloch.derivative_diagonal(V.period, x)).values
    errs = []
    for h in (1e-3, 1e-4):
        fd = (es_at(V, x + h).eigenvalues - es_at(V, x - h).eigenvalues) / (2 * h)
        errs.append(np.max(np.abs(v - fd)))
    assert 80 < errs[0] / errs[1] < 120


def test_discriminant_examples():
    assert spectral.discriminant([-2, 2]) == 16
    assert spectral.discriminant([0, 0, 1]) == 0
    assert spectral.discriminant([-math.sqrt(5), math.sqrt(5)]) == pytest.approx(20)


def test_gap_from_discriminant_examples():
    assert spectral.gap_from_discriminant(16, 1, 0.0, 2) == pytest.approx(1.0)
    assert spectral.gap_from_discriminant(0, 1, 0.0, 2) == 0
    assert spectral.gap_from_discriminant(20, 1, 1.0, 2) == pytest.approx(math.sqrt(20) / 9)
    assert spectral.gap_from_discriminant(20, 1, 1.0, 2) == pytest.approx(0.4969, abs=1e-4)


def test_g_examples():
    es = es_at(FREE1, [1 / 8])
    v = spectral.hellmann_feynman(es, bloch.derivative_diagonal(FREE1.period, [1 / 8]))
    assert spectral.discriminant(es.eigenvalues) == 1
    assert spectral.g_value(es, v) == pytest.approx(-8.8858, abs=1e-4)
    es = es_at(FREE1, [0.0])
    assert spectral.g_value(es, spectral.hellmann_feynman(es, bloch.derivative_diagonal(FREE1.period, [0.0]))) == 0


def test_g_matches_resultant_alternating():
    V = PeriodicPotential.from_cell((2,), [0.5, -0.5])
    x = np.array([0.137])
    M = bloch.assemble(V, x)
    es = spectral.eigensystem(M, x)
    D = bloch.derivative_diagonal(V.period, x)
    g = spectral.g_value(es, spectral.hellmann_feynman(es, D))
    f_res, g_res = spectral.resultant_check(M, D)
    assert g_res == pytest.approx(g, rel=1e-6)
    assert f_res == pytest.approx(spectral.discriminant(es.eigenvalues), rel=1e-6)


def test_char_poly_and_resultant_examples():
    M = np.array([[2.0, 1.0], [1.0, -2.0]])
    assert np.allclose(spectral.char_poly(M).full(), [-5, 0, 1])
    assert spectral.resultant([-5, 0, 1], [0, 2]).real == pytest.approx(-20)
    f, _ = spectral.resultant_check(M, np.zeros(2))
    assert f == pytest.approx(20)
    f, _ = spectral.resultant_check(np.diag([2.0, -2.0]), np.zeros(2), threshold=0.0)
    assert f == pytest.approx(16)
    f, g = spectral.resultant_check(np.array([[0.3]]), np.array([-1.5]))
    assert (f, g) == (1.0, -1.5)
    assert spectral.resultant([2.0, 1.0], [7.0]) == 7.0


def test_resultant_guards():
    with pytest.raises(IllConditioned):
        spectral.resultant_check(np.zeros((2, 2)), np.zeros(2))
    with pytest.raises(IllConditioned):
        spectral.resultant_check(np.eye(3), np.zeros(3), cap=2)


def test_nonhermitian_examples():
    assert np.allclose(sorted(spectral.nonhermitian_spectrum(np.diag([1 + 1j, -2.0])), key=abs), [1 + 1j, -2])
    y = 0.2
    E = spectral.nonhermitian_spectrum(bloch.assemble_complex(FREE1, [1j * y]))
    assert E[0] == pytest.approx(2 * math.cosh(2 * math.pi * y))
    V = PeriodicPotential.from_cell((2,), [0.05, -0.05])
    E = spectral.nonhermitian_spectrum(bloch.assemble_complex(V, 1j * bloch.separation_shift(V.period, V.sup_norm)))
    assert abs(E[0] - E[1]) >= 1


@given(potentials(max_d=2, max_size=8), potentials(max_d=2, max_size=8), st.integers(0, 2**32 - 1))
def test_weyl(V, W0, seed):
    rng = np.random.default_rng(seed)
    W = PeriodicPotential.from_cell(V.period, rng.uniform(-1, 1, V.period.size) * rng.uniform(0, 2))
    x = rng.uniform(0, 1, V.d)
    a = np.linalg.eigvalsh(bloch.assemble(V, x).entries)
    b = np.linalg.eigvalsh(bloch.assemble(V + W, x).entries)
    assert np.max(np.abs(a - b)) <= W.sup_norm + 1e-10


@given(potentials(max_d=2, max_size=6), st.integers(0, 2**32 - 1))
def test_resultant_identity(V, seed):
    assume(V.period.size >= 2)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, V.d)
    M = bloch.assemble(V, x)
    es = spectral.eigensystem(M, x)
    assume(spectral.min_gap(es.eigenvalues)[0] >= 1e-3)
    D = bloch.derivative_diagonal(V.period, x)
    vel = spectral.hellmann_feynman(es, D).values
    assume(np.min(np.abs(vel)) > 1e-6)
    f = spectral.discriminant(es.eigenvalues)
    f_res, g_res = spectral.resultant_check(M, D, threshold=0.0)
    assert f_res == pytest.approx(f, rel=1e-6)
    assert g_res == pytest.approx(f * np.prod(vel), rel=1e-6)


@given(potentials(max_d=2, max_size=6), st.integers(0, 2**32 - 1))
def test_velocity_matches_implicit_derivative(V, seed):
    # dE/dx_d = -P_x(E) / P_E(E) from the characteristic polynomial
    assume(V.period.size >= 2)
    rng = np.random.default_rng(seed)
    x = rng.uniform(0, 1, V.d)
    M = bloch.assemble(V, x)
    es = spectral.eigensystem(M, x)
    assume(spectral.min_gap(es.eigenvalues)[0] >= 1e-3)
    D = bloch.derivative_diagonal(V.period, x)
    v = spectral.hellmann_feynman(es, D).values
    cp = spectral.char_poly(M).full()
    dE = np.polynomial.polynomial.polyder(cp)
    dX = spectral.char_poly_derivative(M, D)
    pol = np.polynomial.polynomial
    implicit = -pol.polyval(es.eigenvalues, dX).real / pol.polyval(es.eigenvalues, dE)
    assert np.max(np.abs(v - implicit)) <= 1e-7 * (1 + np.max(np.abs(v)))


@given(potentials(max_d=2, max_size=6), st.integers(0, 2**32 - 1))
def test_discriminant_upper_bound(V, seed):
    rng = np.random.default_rng(seed)
    P, d = V.period.size, V.d
    x = rng.uniform(0, 1, d)
    z = x + 1j * rng.uniform(-0.3, 0.3, d)
    for pt in (x.astype(complex), z):
        E = spectral.nonhermitian_spectrum(bloch.assemble_complex(V, pt))
        lhs = math.log(max(abs(spectral.complex_discriminant(E)), 1e-300))
        rhs = P * P * math.log(4 * d * math.exp(2 * math.pi * np.max(np.abs(pt))) + V.sup_norm)
        assert lhs <= rhs + 1e-9


@given(potentials(max_d=2, max_size=6))
def test_witness_lower_bounds(V):
    assume(V.period.size >= 2)
    z = 1j * bloch.separation_shift(V.period, V.sup_norm)
    M = bloch.assemble_complex(V, z).entries
    f = spectral.complex_discriminant(spectral.nonhermitian_spectrum(M))
    g = spectral.resultant(spectral.char_poly(M).full(),
                           spectral.char_poly_derivative(M, bloch.derivative_diagonal(V.period, z)))
    assert abs(f) >= 1 and abs(g) >= 1


@given(potentials(max_d=2, max_size=6), st.integers(0, 2**32 - 1))
def test_x_derivative_lower_bound(V, seed):
    assume(V.period.size >= 2)
    rng = np.random.default_rng(seed)
    P, d = V.period.size, V.d
    x = rng.uniform(0, 1, d)
    M = bloch.assemble(V, x)
    es = spectral.eigensystem(M, x)
    D = bloch.derivative_diagonal(V.period, x)
    v = spectral.hellmann_feynman(es, D).values
    log_g = spectral.log_g(spectral.log_discriminant(es.eigenvalues), v)
    dX = spectral.char_poly_derivative(M, D)
    px = np.abs(np.polynomial.polynomial.polyval(es.eigenvalues, dX))
    floor = log_g - P * (P - 1) * math.log(4 * d + 2 * V.sup_norm + 1)
    with np.errstate(divide="ignore"):
        assert np.all(np.log(px) >= floor - 1e-6)
