import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from blochlab import hierarchy as h
from blochlab.errors import ChainBroken, PreconditionViolated, UnderflowWarning
from blochlab.potential import PeriodicPotential

V1 = PeriodicPotential.from_cell((2,), [0.3, -0.3])
SEED2 = PeriodicPotential.from_cell((4,), [1.0, 0.0, -1.0, 0.0])


def test_schedule_next_examples():
    assert h.schedule_next(0.1, 1e6) == pytest.approx(1e-10, rel=1e-12)
    assert h.schedule_next(0.5, 1e-9) == pytest.approx(5e-12, rel=1e-12)
    assert h.schedule_next(1.0, 100.0) == 1.0
    with pytest.raises(PreconditionViolated):
        h.schedule_next(0.0, 1.0)


def test_default_eta():
    assert h.default_eta(1, 2) == 1 / 8
    assert h.default_eta(3, 4) == 1 / 128


def test_embed_examples():
    psi = np.array([0.6, 0.8])
    assert np.allclose(h.embed_eigenvector(psi, (2,), (4,), 0), [0.6, 0, 0.8, 0])
    assert np.allclose(h.embed_eigenvector(psi, (2,), (4,), 1), [0, 0.6, 0, 0.8])
    assert np.linalg.norm(h.embed_eigenvector(psi, (2,), (4,), 1)) == pytest.approx(1.0)
    v = np.random.default_rng(0).normal(size=6)
    for s in range(4):
        assert np.linalg.norm(h.embed_eigenvector(v, (2, 3), (4, 6), s)) == pytest.approx(np.linalg.norm(v))


def test_two_stage_demo(two_stage):
    s1, s2 = two_stage.stage(1), two_stage.stage(2)
    assert s2.layer.sup_norm == s2.eps
    assert s2.eps <= s2.delta**10 and s2.eps <= s1.gamma * s2.delta / 100
    assert s1.gamma >= 100 * s2.delta**2
    rep = h.stage_report(two_stage, s2)
    assert rep["pass"] and all(rep["checks"].values())
    acc = s2.tracking.accepted & s2.certificate.mask
    assert np.all(s2.tracking.mismatch[acc] <= s2.eps)
    assert np.all(s2.tracking.distance[acc] <= 2 * s2.eps / s2.delta)
    assert rep["ambiguous_on_good_set"] == 0


def test_zero_seed_keeps_spectra():
    state = h.construct([V1, PeriodicPotential.zero((4,))], 256, [0.25, 0.2])
    s2 = state.stage(2)
    assert s2.layer.sup_norm == 0 and s2.eps > 0
    t = s2.tracking
    acc = t.accepted
    assert acc.any()
    assert np.max(t.mismatch[acc]) < 1e-12
    assert np.max(t.distance[acc]) < 1e-12
    assert np.min(t.overlap[acc]) > 1 - 1e-12
    # spectra coincide under the coset identification
    E2 = np.sort(s2.survey.energies[: 128].ravel())
    ref = h.construct([V1.refine((4,))], 256, [0.25]).stage(1).survey.energies[:128].ravel()
    assert np.allclose(E2, np.sort(ref), atol=1e-13)


def test_underflow_guard(monkeypatch):
    monkeypatch.setattr(h, "UNDERFLOW", 1e-3)
    with pytest.warns(UnderflowWarning):
        state = h.construct([V1, SEED2, PeriodicPotential.from_cell((8,), np.ones(8))], 256, [0.25, 0.2, 0.1])
    assert state.stop_reason is not None and "underflow" in state.stop_reason
    assert state.depth == 2 and state.stage(2).layer.sup_norm == 0


def test_track_record(two_stage):
    s2 = two_stage.stage(2)
    i, b = np.argwhere(s2.good)[0]
    rec = h.track(two_stage, 2, int(i), int(b) + 1)
    assert rec.status == "Accepted" and rec.mismatch <= s2.eps
    bad = np.argwhere(~s2.certificate.mask)
    with pytest.raises(PreconditionViolated):
        h.track(two_stage, 2, int(bad[0][0]), int(bad[0][1]) + 1)


def test_good_chain(two_stage):
    g11 = h.good_chain(two_stage, 1, 1)
    assert np.array_equal(g11, two_stage.stage(1).good)
    g12 = h.good_chain(two_stage, 1, 2)
    assert not np.any(g12 & ~g11)
    eta = [two_stage.stage(k).eta for k in (1, 2)]
    assert h.chain_measure(g12) >= 1 - sum(eta) - two_stage.slack


def test_chain_measures_three_stage(three_stage):
    for j in (1, 2, 3):
        prev = None
        for K in range(j, 4):
            m = h.good_chain(three_stage, j, K)
            total = sum(three_stage.stage(k).eta for k in range(j, K + 1))
            assert h.chain_measure(m) >= 1 - total - three_stage.slack
            if prev is not None:
                assert not np.any(m & ~prev)
            prev = m


def test_injective(three_stage):
    for s in three_stage.stages[1:]:
        assert h.injective(s)
        acc = np.argwhere(s.good)
        targets = {(int(s.tracking.coarse_sample[i, b]), int(s.tracking.coarse_band[i, b])) for i, b in acc}
        assert len(targets) == len(acc)


def test_energy_telescoping(three_stage):
    i, b = h.default_chain_point(three_stage)
    chain = h.resolve_chain(three_stage, 1, i, b)
    for r in h.energy_telescoping(three_stage, chain):
        assert r["pass"]
    E = [h.chain_energy(three_stage, cp) for cp in chain]
    eps = [three_stage.stage(k).eps for k in (2, 3)]
    assert abs(E[1] - E[0]) <= eps[0] + 1e-12
    assert abs(E[2] - E[0]) <= eps[0] + eps[1] + 1e-12


def test_chain_broken(two_stage):
    bad = np.argwhere(~h.good_chain(two_stage, 1))[0]
    with pytest.raises(ChainBroken):
        h.resolve_chain(two_stage, 1, int(bad[0]), int(bad[1]))


def test_free_plane_wave():
    state = h.construct([PeriodicPotential.zero((1,))], 64)
    x = state.stage(1).grid.points()[5]
    chain = h.resolve_chain(state, 1, 5, 0)
    ef = h.synthesize_eigenfunction(state, chain, 1, 10)
    assert ef.energy == pytest.approx(2 * math.cos(2 * math.pi * x[0]), abs=1e-15)
    assert np.allclose(ef.values, np.exp(-2j * np.pi * x[0] * ef.box[:, 0]), atol=1e-14)
    assert ef.residual < 1e-13


def test_alternating_synthesis_residual():
    state = h.construct([V1], 512, [0.25])
    i, b = h.default_chain_point(state)
    ef = h.synthesize_eigenfunction(state, h.resolve_chain(state, 1, i, b), 1, 50)
    assert ef.residual <= 1e-8 * (1 + abs(ef.energy))


def test_three_stage_synthesis(three_stage):
    i, b = h.default_chain_point(three_stage)
    chain = h.resolve_chain(three_stage, 1, i, b)
    for k in (1, 2, 3):
        ef = h.synthesize_eigenfunction(three_stage, chain, k, 50)
        assert ef.residual <= 1e-8 * (1 + abs(ef.energy))
        rep = h.full_operator_residual(three_stage, ef)
        assert rep["pass"]
    for r in h.successive_differences(three_stage, chain, 50):
        assert r["pass"]
    assert h.cauchy_check(three_stage, chain, 50)["pass"]


def test_frequency_amplitude_examples():
    x = 0.173
    for R in (1, 5, 20):
        box = h.lattice_box(1, R)
        phi = np.exp(-2j * np.pi * x * box[:, 0])
        assert h.frequency_amplitude(phi, box, [x]) == pytest.approx(1.0)
        amp = abs(h.frequency_amplitude(phi, box, [x + 0.5]))
        assert amp == pytest.approx(1 / (2 * R + 1))
        assert amp <= 2 / (2 * R)


def test_dominant_amplitude(two_stage):
    i, b = h.default_chain_point(two_stage)
    chain = h.resolve_chain(two_stage, 1, i, b)
    rep = h.dominant_amplitude(two_stage, chain, 2, 50)
    assert rep["pass"] and rep["amplitude"] >= rep["lower_bound"]
    single = h.construct([V1], 4096, [0.25])
    i, b = h.default_chain_point(single)
    rep = h.dominant_amplitude(single, h.resolve_chain(single, 1, i, b), 1, 50)
    psi = h.chain_vector(single, h.ChainPoint(1, i, b))
    assert rep["pass"] and rep["amplitude"] >= np.max(np.abs(psi)) - rep["tail_bound"] - 1e-12


def test_ell1_checks(two_stage):
    i, b = h.default_chain_point(two_stage)
    chain = h.resolve_chain(two_stage, 1, i, b)
    same = h.ell1_tracking_check(two_stage, chain, 1, 1)
    assert same["pass"] and same["l1"] <= math.sqrt(2) + 1e-12
    rep = h.ell1_tracking_check(two_stage, chain, 1, 2)
    assert rep["pass"]
    a = h.carried_from(two_stage, chain, 0, 1)
    bvec = h.chain_vector(two_stage, chain[1])
    c = np.vdot(a, bvec) / abs(np.vdot(a, bvec))
    assert np.sum(np.abs(bvec - c * a)) <= math.sqrt(4) * np.linalg.norm(bvec - c * a) + 1e-15


def test_ell1_zero_layers():
    state = h.construct([V1, PeriodicPotential.zero((4,))], 256, [0.25, 0.2])
    i, b = h.default_chain_point(state)
    chain = h.resolve_chain(state, 1, i, b)
    rep = h.ell1_tracking_check(state, chain, 1, 2)
    assert all(p["distance"] < 1e-13 for p in rep["pairs"])


@given(st.floats(0.05, 0.5), st.integers(0, 2**32 - 1))
def test_tracking_property(scale, seed):
    rng = np.random.default_rng(seed)
    seeds = [PeriodicPotential.from_cell((2,), rng.uniform(-scale, scale, 2)),
             PeriodicPotential.from_cell((4,), rng.uniform(-1, 1, 4))]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderflowWarning)
        state = h.construct(seeds, 256, [0.25, 0.2])
    if state.depth < 2:
        return
    s2 = state.stage(2)
    t = s2.tracking
    acc = t.accepted & s2.certificate.mask
    assert np.all(t.mismatch[acc] <= t.eps + t.floor)
    assert np.all(t.distance[acc] <= 2 * (t.eps + t.floor) / t.delta)
    assert h.injective(s2)
    m = h.good_chain(state, 1, 2)
    assert not np.any(m & ~h.good_chain(state, 1, 1))
