import numpy as np
import pytest
from hypothesis import given, strategies as st

from blochlab.errors import NotRealizable
from blochlab.potential import (
    PeriodicPotential,
    PotentialTower,
    accumulate,
    evaluate,
    fourier_forward,
    fourier_inverse,
    layer_from_json,
    layer_to_json,
)

from .conftest import potentials


def test_constant_transform():
    c = fourier_forward(np.full(6, 2.5), (2, 3))
    assert c[0, 0] == pytest.approx(2.5)
    assert np.max(np.abs(c.ravel()[1:])) < 1e-15


def test_alternating_transform():
    c = fourier_forward([1.0, -1.0], (2,))
    assert c[1] == pytest.approx(1.0) and abs(c[0]) < 1e-15


def test_round_trip_p3():
    cell = np.random.default_rng(3).uniform(-1, 1, 3)
    assert np.max(np.abs(fourier_inverse(fourier_forward(cell, (3,)), (3,)) - cell)) < 1e-12


def test_inverse_examples():
    assert np.allclose(fourier_inverse([3, 0, 0], (3,)), 3.0)
    assert np.allclose(fourier_inverse([0, 1], (2,)), [1.0, -1.0])


def test_reality_violation():
    with pytest.raises(NotRealizable):
        fourier_inverse([0, 1e-3j, 0], (3,))


def test_accumulate_examples():
    V1 = PeriodicPotential.from_cell((2,), [1.0, 1.0])
    V2 = PeriodicPotential.from_cell((4,), 0.1 * np.array([1, 1, -1, -1.0]))
    tower = PotentialTower.build([V1, V2])
    assert np.allclose(accumulate(tower, 2).cell, [1.1, 1.1, 0.9, 0.9], atol=1e-15)
    assert np.array_equal(accumulate(tower, 1).cell, V1.cell)
    zero = PotentialTower.build([PeriodicPotential.zero((2,)), PeriodicPotential.zero((4,))])
    assert accumulate(zero, 2).sup_norm == 0


def test_evaluate_examples():
    V = PeriodicPotential.from_cell((2,), [1.0, -1.0])
    assert evaluate(V, 5) == -1.0
    assert evaluate(V, -1) == V.cell[1]
    W = PeriodicPotential.from_cell((2, 3), np.arange(6.0))
    assert evaluate(W, (4, 7)) == W.cell[0, 1]


def test_layer_json_round_trip():
    V = PeriodicPotential.from_cell((2, 2), [0.1, -0.2, 0.3, 0.4])
    assert np.array_equal(layer_from_json(layer_to_json(V)).cell, V.cell)
    W = layer_from_json({"period": [2], "coeffs": [[[1], 0.5, 0.0]]})
    assert np.allclose(W.cell, [0.5, -0.5])


@given(potentials(max_d=2, max_size=16))
def test_parseval(V):
    lhs = np.sum(V.cell**2) / V.period.size
    rhs = np.sum(np.abs(V.coeffs) ** 2)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, lhs)


@given(potentials(max_d=2, max_size=8))
def test_refined_support(V):
    fine = tuple(2 * c for c in V.period)
    W = V.refine(fine)
    mask = np.zeros(W.period.components, dtype=bool)
    mask[tuple(slice(None, None, 2) for _ in fine)] = True
    assert np.max(np.abs(W.coeffs[~mask]), initial=0.0) <= 1e-12
    assert np.allclose(W.coeffs[mask].reshape(V.period.components), V.coeffs, atol=1e-12)


@given(potentials(max_d=1, max_size=4), st.integers(0, 2**32 - 1))
def test_sup_norm_subadditive(V, seed):
    rng = np.random.default_rng(seed)
    fine = (V.period[0] * 2,)
    W = PeriodicPotential.from_cell(fine, rng.uniform(-1, 1, fine[0]))
    total = accumulate(PotentialTower.build([V, W]), 2)
    assert total.sup_norm <= V.sup_norm + W.sup_norm + 1e-15
