import numpy as np
import pytest
from hypothesis import settings, strategies as st

from blochlab.potential import PeriodicPotential

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@st.composite
def periods(draw, max_d=2, max_size=12):
    d = draw(st.integers(1, max_d))
    comps = []
    size = 1
    for _ in range(d):
        c = draw(st.integers(1, max(1, max_size // size)))
        comps.append(c)
        size *= c
    return tuple(comps)


@st.composite
def potentials(draw, max_d=2, max_size=12, scale=1.0):
    p = draw(periods(max_d, max_size))
    seed = draw(st.integers(0, 2**32 - 1))
    rng = np.random.default_rng(seed)
    return PeriodicPotential.from_cell(p, rng.uniform(-scale, scale, int(np.prod(p))))


@pytest.fixture(scope="session")
def two_stage():
    from blochlab import config, hierarchy

    cfg = config.shipped("demo_two_stage")
    return hierarchy.construct(cfg.layers, cfg.get("torus_points"), cfg.get("eta_schedule"))


@pytest.fixture(scope="session")
def three_stage():
    from blochlab import config, hierarchy

    cfg = config.shipped("demo_three_stage")
    return hierarchy.construct(cfg.layers, cfg.get("torus_points"), cfg.get("eta_schedule"))
