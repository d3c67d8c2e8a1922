"""Stage-by-stage construction of a limit-periodic potential with tracked eigenpairs.

Every stage shares one torus sampling with ``torus_points`` samples per axis,
so a stage-(j+1) grid sample translated by a coset shift is exactly a stage-j
grid sample, and every parameter grid V_j x {1..P_j} has the same number of
points. Tracking maps and good chains are therefore exact index maps.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import certify, spectral
from .errors import (
    ChainBroken,
    CosetMismatch,
    PreconditionViolated,
    StageOutOfRange,
    UnderflowWarning,
)
from .grid import FiberGrid
from .lattice import Period, coset_shifts, embedding_indices, make_period_tower
from .parallel import chunk_ranges, ordered_map
from .potential import PeriodicPotential, PotentialTower

UNDERFLOW = 1e-300
MARGIN = 0.5
FLOOR_REL = 1e-12

NOT_TRACKED, ACCEPTED, AMBIGUOUS, NO_CANDIDATE, OUT_OF_BOUND = 0, 1, 2, 3, 4
STATUS_NAMES = {
    NOT_TRACKED: "NotTracked",
    ACCEPTED: "Accepted",
    AMBIGUOUS: "AmbiguousMatch",
    NO_CANDIDATE: "NoCandidate",
    OUT_OF_BOUND: "DistanceBound",
}


def default_eta(j: int, P: int) -> float:
    return 2.0**-j / P**2


def schedule_next(delta_next: float, gamma_current: float) -> float:
    """eps_{j+1} = min(delta_{j+1}^10, gamma_j delta_{j+1} / 100)."""
    if delta_next <= 0 or gamma_current <= 0:
        raise PreconditionViolated("delta and gamma must be positive")
    return min(delta_next**10, gamma_current * delta_next / 100.0)


@dataclass(frozen=True, eq=False)
class TrackingTable:
    """A_j on the stage-(j+1) parameter grid; arrays have shape (samples, P_{j+1})."""

    coarse_sample: np.ndarray
    coarse_band: np.ndarray
    shift: np.ndarray
    mismatch: np.ndarray
    distance: np.ndarray
    overlap: np.ndarray
    margin: np.ndarray
    status: np.ndarray
    eps: float
    delta: float
    floor: float

    @property
    def accepted(self) -> np.ndarray:
        return self.status == ACCEPTED


@dataclass(frozen=True, eq=False)
class TrackingRecord:
    x: np.ndarray
    band: int
    shift: tuple[int, ...]
    coarse_band: int
    mismatch: float
    distance: float
    overlap: float
    margin: float
    status: str


@dataclass(eq=False)
class Stage:
    index: int
    period: Period
    potential: PeriodicPotential
    layer: PeriodicPotential
    grid: FiberGrid
    survey: certify.Survey
    certificate: certify.GoodSetCertificate
    eta: float
    delta: float
    gamma: float
    eps: float | None
    delta_pre: float | None = None
    theory: dict | None = None
    tracking: TrackingTable | None = None
    good: np.ndarray | None = None
    checks: dict = field(default_factory=dict)

    @property
    def P(self) -> int:
        return self.period.size


@dataclass(frozen=True, eq=False)
class Schedule:
    eta: tuple[float, ...]
    delta: tuple[float, ...]
    gamma: tuple[float, ...]
    eps: tuple[float | None, ...]
    P: tuple[int, ...]


@dataclass(eq=False)
class HierarchyState:
    torus_points: tuple[int, ...]
    stages: list[Stage] = field(default_factory=list)
    eta_overrides: tuple[float, ...] = ()
    stop_reason: str | None = None
    threads: int | None = None

    @property
    def depth(self) -> int:
        return len(self.stages)

    @property
    def d(self) -> int:
        return len(self.torus_points)

    def stage(self, j: int) -> Stage:
        if not 1 <= j <= self.depth:
            raise StageOutOfRange(f"stage {j} not in 1..{self.depth}")
        return self.stages[j - 1]

    @property
    def tower(self) -> PotentialTower:
        return PotentialTower(make_period_tower([s.period for s in self.stages]),
                              tuple(s.layer for s in self.stages))

    @property
    def schedule(self) -> Schedule:
        return Schedule(tuple(s.eta for s in self.stages), tuple(s.delta for s in self.stages),
                        tuple(s.gamma for s in self.stages), tuple(s.eps for s in self.stages),
                        tuple(s.P for s in self.stages))

    @property
    def slack(self) -> float:
        return 2.0 * self.d / min(self.torus_points)

    def eta_for(self, j: int, P: int) -> float:
        if j <= len(self.eta_overrides) and self.eta_overrides[j - 1] is not None:
            return float(self.eta_overrides[j - 1])
        return default_eta(j, P)


def _survey_stage(state: HierarchyState, V: PeriodicPotential, keep_vectors: bool):
    grid = FiberGrid.for_torus(V.period, state.torus_points)
    survey = certify.survey_points(V, grid.points(), state.threads, keep_vectors)
    return grid, survey


def _normalized_layer(seed: PeriodicPotential, eps: float) -> PeriodicPotential:
    norm = seed.sup_norm
    if norm == 0 or eps == 0:
        return PeriodicPotential.zero(seed.period)
    cell = seed.cell * (eps / norm)
    while np.max(np.abs(cell)) > eps:
        cell = cell * (1 - 2.0**-52)
    return PeriodicPotential.from_cell(seed.period, cell)


def _theory(V: PeriodicPotential, eta: float) -> dict | None:
    if not 0 < eta < 0.5:
        return None
    res = certify.theoretical_simplicity(V, eta)
    return {"log_delta": res.log_delta, "log_gamma": res.log_gamma}


def start(seed: PeriodicPotential, torus_points, eta_overrides=(), threads: int | None = None) -> HierarchyState:
    """Stage 1: the first layer is used as given."""
    pts = tuple(torus_points) if np.ndim(torus_points) else (int(torus_points),) * seed.d
    state = HierarchyState(pts, [], tuple(eta_overrides), None, threads)
    eta = state.eta_for(1, seed.period.size)
    grid, survey = _survey_stage(state, seed, True)
    cert = certify.good_set_from_survey(grid, survey, eta)
    stage = Stage(1, seed.period, seed, seed, grid, survey, cert, eta,
                  min(cert.delta, 1.0), cert.gamma, None, None, _theory(seed, eta))
    stage.good = cert.mask.copy()
    stage.checks = {"certificate_accepted": cert.accepted}
    state.stages.append(stage)
    return state


def extend(state: HierarchyState, seed: PeriodicPotential) -> HierarchyState:
    """Append stage j+1 with layer eps_{j+1} * seed / ||seed||.

    delta_{j+1} comes from the certificate of V_{<=j} refined to the new
    period, capped so that gamma_j >= 100 delta_{j+1}^2; eps_{j+1} follows from
    :func:`schedule_next`. The certificate, tracking table and good set of the
    new stage are computed after the layer is added.
    """
    if state.stop_reason is not None:
        return state
    prev = state.stages[-1]
    j = prev.index + 1
    per = seed.period
    make_period_tower([prev.period, per])
    eta = state.eta_for(j, per.size)
    base = prev.potential.refine(per)
    grid, pre = _survey_stage(state, base, False)
    pre_cert = certify.good_set_from_survey(grid, pre, eta)
    delta = min(pre_cert.delta, math.sqrt(prev.gamma / 100.0), 1.0)
    while 100.0 * delta**2 > prev.gamma:
        delta = math.nextafter(delta, 0.0)
    eps = schedule_next(delta, prev.gamma) if delta > 0 else 0.0
    if eps < UNDERFLOW:
        warnings.warn(f"eps at stage {j} is {eps:.3e}; layer flushed to zero", UnderflowWarning, stacklevel=2)
        state.stop_reason = f"underflow at stage {j}: eps = {eps!r}"
        eps = 0.0
    layer = _normalized_layer(seed, eps)
    V = PeriodicPotential.from_cell(per, base.cell + layer.cell)
    grid, survey = _survey_stage(state, V, True)
    cert = certify.good_set_from_survey(grid, survey, eta)
    stage = Stage(j, per, V, layer, grid, survey, cert, eta, delta, cert.gamma, eps,
                  pre_cert.delta, _theory(V, eta))
    table = track_stage(prev, stage)
    stage.tracking = table
    stage.good = cert.mask & table.accepted
    stage.checks = _stage_checks(state, prev, stage)
    state.stages.append(stage)
    return state


def construct(seeds, torus_points, eta_overrides=(), threads: int | None = None) -> HierarchyState:
    seeds = list(seeds)
    state = start(seeds[0], torus_points, eta_overrides, threads)
    for seed in seeds[1:]:
        extend(state, seed)
        if state.stop_reason is not None:
            break
    return state


def embed_eigenvector(psi, p_coarse, p_fine, shift_index: int) -> np.ndarray:
    """Place a coarse fiber vector at the coset k' + s of the fine dual lattice."""
    coarse, fine = Period.of(p_coarse), Period.of(p_fine)
    psi = np.asarray(psi)
    if psi.shape[0] != coarse.size:
        raise CosetMismatch(f"vector of length {psi.shape[0]} for a coarse lattice of size {coarse.size}")
    emb = embedding_indices(coarse, fine)
    out = np.zeros(fine.size, dtype=complex)
    out[emb[shift_index]] = psi
    return out


def track_stage(coarse: Stage, fine: Stage) -> TrackingTable:
    """Tracking table for every point of the fine parameter grid."""
    emb = embedding_indices(coarse.period, fine.period)
    shifts = coset_shifts(coarse.period, fine.period)
    S, Pc = emb.shape
    Nf, Pf = fine.survey.energies.shape
    targets = np.stack([coarse.grid.shifted_index(s.numerators, fine.period) for s in shifts], axis=1)
    eps = float(fine.eps or 0.0)
    floor = FLOOR_REL * (1 + 2 * fine.potential.d + fine.potential.sup_norm)
    window = eps + floor
    Ef, psif = fine.survey.energies, fine.survey.vectors
    Ec, psic = coarse.survey.energies, coarse.survey.vectors

    def work(rng):
        lo, hi = rng
        n = hi - lo
        tgt = targets[lo:hi]
        # overlap[i, l, s, m] = |<psi_f(i, l), embed_s psi_c(tgt[i, s], m)>|
        sub = psif[lo:hi][:, emb, :]
        ov = np.abs(np.einsum("iskl,iskm->ilsm", sub.conj(), psic[tgt]))
        mis = np.abs(Ef[lo:hi][:, :, None, None] - Ec[tgt][:, None, :, :])
        cand = mis <= window
        score = np.where(cand, ov, -1.0).reshape(n, Pf, S * Pc)
        order = np.argsort(-score, axis=-1, kind="stable")
        best = order[..., 0]
        best_score = np.take_along_axis(score, best[..., None], -1)[..., 0]
        if S * Pc > 1:
            second = np.take_along_axis(score, order[..., 1:2], -1)[..., 0]
        else:
            second = np.full_like(best_score, -1.0)
        has = best_score >= 0
        margin = np.where(second >= 0, best_score - second, best_score)
        s_idx, m_idx = np.divmod(best, Pc)
        ii = np.arange(n)[:, None]
        c_sample = tgt[ii, s_idx]
        mismatch = mis.reshape(n, Pf, S * Pc)[ii, np.arange(Pf)[None, :], best]
        # distance evaluated directly from the optimally rotated difference
        e_vec = np.zeros((n, Pf, Pf), dtype=complex)
        coarse_vec = psic[c_sample, :, m_idx]
        rows = emb[s_idx]
        np.put_along_axis(e_vec, rows, coarse_vec, axis=-1)
        f_vec = np.swapaxes(psif[lo:hi], 1, 2)
        inner = np.einsum("ilk,ilk->il", e_vec.conj(), f_vec)
        phase = np.where(np.abs(inner) > 0, inner / np.where(np.abs(inner) > 0, np.abs(inner), 1), 1)
        dist = np.linalg.norm(f_vec - phase[..., None] * e_vec, axis=-1)
        return c_sample, m_idx, s_idx, mismatch, dist, np.abs(inner), margin, has

    parts = ordered_map(work, chunk_ranges(Nf, max(1, 4096 // max(1, Pf))), None)
    cat = [np.concatenate([p[i] for p in parts]) for i in range(8)]
    c_sample, band, s_idx, mismatch, dist, overlap, margin, has = cat
    bound = 2.0 * window / fine.delta if fine.delta > 0 else np.inf
    status = np.full(has.shape, ACCEPTED, dtype=np.int8)
    status[dist > bound] = OUT_OF_BOUND
    status[margin < MARGIN] = AMBIGUOUS
    status[~has] = NO_CANDIDATE
    c_sample = np.where(has, c_sample, -1)
    return TrackingTable(c_sample, band, s_idx, mismatch, dist, overlap, margin, status, eps, fine.delta, floor)


def track(state: HierarchyState, j_next: int, sample: int, band: int) -> TrackingRecord:
    """Tracking record of one stage-(j+1) point; ``band`` is 1-based."""
    stage = state.stage(j_next)
    if stage.tracking is None:
        raise StageOutOfRange("stage 1 has no coarser ancestor")
    ell = band - 1
    if not stage.certificate.mask[sample, ell]:
        raise PreconditionViolated("point is outside the stage certificate good set")
    t = stage.tracking
    status = int(t.status[sample, ell])
    shift = coset_shifts(state.stage(j_next - 1).period, stage.period)[t.shift[sample, ell]]
    record = TrackingRecord(stage.grid.points()[sample], band, shift.numerators, int(t.coarse_band[sample, ell]) + 1,
                            float(t.mismatch[sample, ell]), float(t.distance[sample, ell]),
                            float(t.overlap[sample, ell]), float(t.margin[sample, ell]), STATUS_NAMES[status])
    return record


def injective(stage: Stage) -> bool:
    """Accepted good records at one fine sample never share a coarse target."""
    t = stage.tracking
    if t is None:
        return True
    good = stage.good
    keys = t.coarse_sample.astype(np.int64) * (t.coarse_band.max() + 1) + t.coarse_band
    keys = np.where(good, keys, -1 - np.arange(keys.size).reshape(keys.shape))
    flat = keys[good]
    return flat.size == np.unique(flat).size


def _stage_checks(state: HierarchyState, prev: Stage, stage: Stage) -> dict:
    t = stage.tracking
    good = stage.certificate.mask
    eps, delta = stage.eps, stage.delta
    acc_good = t.accepted & good
    rate = float(np.count_nonzero(stage.good)) / stage.good.size
    checks = {
        "layer_norm_le_eps": stage.layer.sup_norm <= eps,
        "eps_le_delta10": eps <= delta**10,
        "eps_le_gamma_delta_over_100": eps <= prev.gamma * delta / 100.0,
        "gamma_ge_100_delta2": prev.gamma >= 100.0 * delta**2,
        "mismatch_le_eps": bool(np.all(t.mismatch[acc_good] <= eps + t.floor)),
        "distance_le_2eps_over_delta": bool(np.all(t.distance[acc_good] <= 2 * (eps + t.floor) / delta)),
        "no_ambiguous_on_good_set": int(np.count_nonzero((t.status == AMBIGUOUS) & good)) == 0,
        "injective": injective(stage),
        "acceptance_rate": rate >= 1 - prev.eta - state.slack,
        "certificate_accepted": stage.certificate.accepted,
    }
    return {k: bool(v) for k, v in checks.items()}


def stage_report(state: HierarchyState, stage: Stage) -> dict:
    rep = {
        "stage": stage.index,
        "period": list(stage.period.components),
        "P": stage.P,
        "eta": stage.eta,
        "delta": stage.delta,
        "delta_pre": stage.delta_pre,
        "delta_certificate": stage.certificate.delta,
        "gamma": stage.gamma,
        "eps": stage.eps,
        "layer_norm": stage.layer.sup_norm,
        "measure_certificate": stage.certificate.measure_good,
        "measure_good": float(np.count_nonzero(stage.good)) / stage.good.size,
        "theory": stage.theory,
    }
    t = stage.tracking
    if t is not None:
        good = stage.certificate.mask
        acc = t.accepted & good
        rep.update({
            "tracking_acceptance_rate": float(np.count_nonzero(stage.good)) / stage.good.size,
            "tracking_acceptance_on_good_set": float(np.count_nonzero(acc)) / max(1, np.count_nonzero(good)),
            "max_energy_mismatch": float(np.max(t.mismatch[acc], initial=0.0)),
            "max_eigenfunction_distance": float(np.max(t.distance[acc], initial=0.0)),
            "distance_bound": 2 * (t.eps + t.floor) / t.delta if t.delta > 0 else math.inf,
            "ambiguous_on_good_set": int(np.count_nonzero((t.status == AMBIGUOUS) & good)),
            "no_candidate_on_good_set": int(np.count_nonzero((t.status == NO_CANDIDATE) & good)),
        })
    rep["checks"] = dict(stage.checks)
    rep["pass"] = all(stage.checks.values())
    return rep


# chains


def _image(stage_fine: Stage, mask_fine: np.ndarray, shape_coarse) -> np.ndarray:
    t = stage_fine.tracking
    img = np.zeros(shape_coarse, dtype=bool)
    sel = mask_fine & t.accepted
    img[t.coarse_sample[sel], t.coarse_band[sel]] = True
    return img


def good_chain(state: HierarchyState, j: int, K: int | None = None) -> np.ndarray:
    """Mask over the stage-j parameter grid of points whose descendants stay good up to depth K."""
    K = state.depth if K is None else K
    if not 1 <= j <= K <= state.depth:
        raise StageOutOfRange(f"need 1 <= j={j} <= K={K} <= {state.depth}")
    mask = state.stage(K).good.copy()
    for k in range(K - 1, j - 1, -1):
        mask = state.stage(k).good & _image(state.stage(k + 1), mask, state.stage(k).good.shape)
    return mask


def descendants(state: HierarchyState, j: int, K: int | None = None) -> list[np.ndarray]:
    """[G_{j,j}, G_{j+1,j}, ..., G_{K,j}]: the chain set of stage j carried to later stages."""
    K = state.depth if K is None else K
    masks = [good_chain(state, j, K)]
    for k in range(j + 1, K + 1):
        st = state.stage(k)
        t = st.tracking
        prev = masks[-1]
        sel = st.good & (t.coarse_sample >= 0)
        hit = np.zeros_like(sel)
        hit[sel] = prev[t.coarse_sample[sel], t.coarse_band[sel]]
        masks.append(hit)
    return masks


def chain_measure(mask: np.ndarray) -> float:
    return float(np.count_nonzero(mask)) / mask.size


@dataclass(frozen=True)
class ChainPoint:
    stage: int
    sample: int
    band: int  # 0-based

    def x(self, state: HierarchyState) -> np.ndarray:
        return state.stage(self.stage).grid.points()[self.sample]


def resolve_chain(state: HierarchyState, j: int, sample: int, band: int, K: int | None = None) -> list[ChainPoint]:
    """Follow a stage-j chain point (0-based band) to its descendants at stages j..K."""
    K = state.depth if K is None else K
    if not good_chain(state, j, K)[sample, band]:
        raise ChainBroken(f"({sample}, {band}) is not in the stage-{j} good chain at depth {K}")
    chain = [ChainPoint(j, sample, band)]
    for k in range(j + 1, K + 1):
        st = state.stage(k)
        t = st.tracking
        hit = st.good & (t.coarse_sample == chain[-1].sample) & (t.coarse_band == chain[-1].band)
        idx = np.argwhere(hit)
        if idx.shape[0] != 1:
            raise ChainBroken(f"stage {k}: {idx.shape[0]} preimages of {chain[-1]}")
        chain.append(ChainPoint(k, int(idx[0, 0]), int(idx[0, 1])))
    return chain


def default_chain_point(state: HierarchyState, j: int = 1, K: int | None = None) -> tuple[int, int]:
    """Chain point with the largest stage-j gap (ties: lowest index)."""
    mask = good_chain(state, j, K)
    if not mask.any():
        raise ChainBroken(f"stage-{j} good chain is empty")
    gaps = state.stage(j).survey.gaps
    score = np.where(mask, gaps[:, None], -np.inf)
    flat = int(np.argmax(score))
    return divmod(flat, mask.shape[1])


def chain_vector(state: HierarchyState, cp: ChainPoint) -> np.ndarray:
    return state.stage(cp.stage).survey.vectors[cp.sample, :, cp.band]


def chain_energy(state: HierarchyState, cp: ChainPoint) -> float:
    return float(state.stage(cp.stage).survey.energies[cp.sample, cp.band])


def energy_telescoping(state: HierarchyState, chain: list[ChainPoint]) -> list[dict]:
    """|E^k - E^j| against sum of eps_m along a resolved chain."""
    E0 = chain_energy(state, chain[0])
    out, total = [], 0.0
    for cp in chain[1:]:
        st = state.stage(cp.stage)
        total += st.eps + st.tracking.floor
        diff = abs(chain_energy(state, cp) - E0)
        out.append({"stage": cp.stage, "difference": diff, "bound": total, "pass": diff <= total})
    return out


# synthesis


def lattice_box(d: int, R: int) -> np.ndarray:
    """Points of [-R, R]^d in C order, shape (M, d)."""
    axis = np.arange(-R, R + 1)
    return np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)


def synthesize_from_fiber(psi, period, x, box: np.ndarray) -> np.ndarray:
    """phi(n) = sum_t psi(t) e(-(t + x).n) on the given lattice points."""
    from .lattice import dual_numerators

    per = Period.of(period)
    t = dual_numerators(per) / np.array(per.components, dtype=float)
    freqs = t + np.asarray(x, dtype=float)
    phase = np.exp(-2j * np.pi * (box @ freqs.T))
    return phase @ np.asarray(psi, dtype=complex)


def apply_operator(values: np.ndarray, V: PeriodicPotential, R: int) -> tuple[np.ndarray, np.ndarray]:
    """(Delta + V) on the interior of the box [-R, R]^d; returns (H phi, interior points)."""
    d = V.d
    side = 2 * R + 1
    arr = values.reshape((side,) * d)
    inner = tuple(slice(1, -1) for _ in range(d))
    out = np.zeros(arr[inner].shape, dtype=complex)
    for m in range(d):
        up = tuple(slice(2, None) if a == m else slice(1, -1) for a in range(d))
        dn = tuple(slice(None, -2) if a == m else slice(1, -1) for a in range(d))
        out += arr[up] + arr[dn]
    pts = lattice_box(d, R - 1)
    pot = V.cell[tuple((pts[:, m] % V.period[m]) for m in range(d))].reshape(out.shape)
    out += pot * arr[inner]
    return out.ravel(), pts


@dataclass(frozen=True, eq=False)
class Eigenfunction:
    stage: int
    x: np.ndarray
    band: int
    energy: float
    box: np.ndarray
    values: np.ndarray
    residual: float
    R: int


def synthesize_eigenfunction(state: HierarchyState, chain: list[ChainPoint], k: int, R: int) -> Eigenfunction:
    """phi^k on Lambda_R with residual of (H^k - E_k) phi^k on the interior."""
    stages = [cp.stage for cp in chain]
    if k not in stages:
        raise ChainBroken(f"chain does not reach stage {k}")
    cp = chain[stages.index(k)]
    st = state.stage(k)
    x = cp.x(state)
    psi = chain_vector(state, cp)
    box = lattice_box(st.potential.d, R)
    values = synthesize_from_fiber(psi, st.period, x, box)
    E = chain_energy(state, cp)
    Hphi, pts = apply_operator(values, st.potential, R)
    inner_vals = synthesize_from_fiber(psi, st.period, x, pts)
    residual = float(np.max(np.abs(Hphi - E * inner_vals)))
    return Eigenfunction(k, x, cp.band + 1, E, box, values, residual, R)


def full_operator_residual(state: HierarchyState, ef: Eigenfunction, J: int | None = None) -> dict:
    """Residual of phi^k against the stage-J operator with its telescoped bound."""
    J = state.depth if J is None else J
    VJ = state.stage(J).potential
    Hphi, pts = apply_operator(ef.values, VJ, ef.R)
    inner = ef.values.reshape((2 * ef.R + 1,) * VJ.d)[tuple(slice(1, -1) for _ in range(VJ.d))].ravel()
    residual = float(np.max(np.abs(Hphi - ef.energy * inner)))
    sup = float(np.max(np.abs(ef.values)))
    tail = sum(state.stage(m).eps for m in range(ef.stage + 1, J + 1))
    bound = tail * sup + ef.residual + 1e-12 * (1 + abs(ef.energy)) * sup
    return {"stage": ef.stage, "J": J, "residual": residual, "bound": bound, "pass": residual <= bound}


def frequency_amplitude(values: np.ndarray, box: np.ndarray, theta) -> complex:
    """Birkhoff average (1/#Lambda) sum_n phi(n) e(n.theta) over the box."""
    theta = np.asarray(theta, dtype=float)
    return complex(np.mean(values * np.exp(2j * np.pi * (box @ theta))))


def dirichlet_tail(R: int, alpha) -> float:
    """Bound on |average of e(n.alpha)| over [-R, R]^d for alpha not in Z^d."""
    alpha = np.asarray(alpha, dtype=float)
    frac = np.abs(alpha - np.round(alpha))
    best = 1.0
    for a in frac:
        if a > 1e-14:
            best = min(best, 1.0 / ((2 * R + 1) * abs(math.sin(math.pi * a))))
    return best


def successive_differences(state: HierarchyState, chain: list[ChainPoint], R: int) -> list[dict]:
    """sup-norm of phi^{k+1} - c phi^k on Lambda_R against sqrt(P_{k+1}) d(psi^{k+1}, embed psi^k)."""
    out = []
    for prev, cp in zip(chain, chain[1:]):
        a = synthesize_eigenfunction(state, chain, prev.stage, R).values
        b = synthesize_eigenfunction(state, chain, cp.stage, R).values
        inner = np.vdot(a, b)
        c = inner / abs(inner) if abs(inner) > 0 else 1.0
        diff = float(np.max(np.abs(b - c * a)))
        st = state.stage(cp.stage)
        emb = embed_eigenvector(chain_vector(state, prev), state.stage(prev.stage).period, st.period,
                                int(st.tracking.shift[cp.sample, cp.band]))
        dist = spectral.eig_distance(chain_vector(state, cp), emb)
        bound = math.sqrt(st.P) * dist
        out.append({
            "stage": cp.stage,
            "sup_difference": diff,
            "distance": dist,
            "bound": bound,
            "telescoped": 2 * (st.eps + st.tracking.floor) / st.delta,
            "nominal_bound": 2 * state.stage(prev.stage).delta ** 9,
            "pass": diff <= bound * (1 + 1e-9) + 1e-13,
        })
    return out


def cauchy_check(state: HierarchyState, chain: list[ChainPoint], R: int) -> dict:
    diffs = successive_differences(state, chain, R)
    sups = [r["sup_difference"] for r in diffs]
    monotone = all(b <= a for a, b in zip(sups, sups[1:]))
    distances_ok = all(r["distance"] <= r["telescoped"] for r in diffs)
    nominal_ok = all(r["distance"] <= 2 * state.stage(r["stage"] - 1).delta ** 9 for r in diffs)
    return {
        "differences": diffs,
        "monotone": monotone,
        "distance_le_telescoped": distances_ok,
        "distance_le_nominal": nominal_ok,
        "pass": monotone and distances_ok and all(r["pass"] for r in diffs),
    }


def ell1_tracking_check(state: HierarchyState, chain: list[ChainPoint], j: int, k: int) -> dict:
    """||psi^k||_1 <= sqrt(P_j) + 2 delta_j^8 and d(psi^k, psi^l) <= 2 delta_k^9 along the chain."""
    stages = [cp.stage for cp in chain]
    if j not in stages or k not in stages or j > k:
        raise ChainBroken(f"chain does not resolve stages {j}..{k}")
    sj = state.stage(j)
    psi_k = chain_vector(state, chain[stages.index(k)])
    l1 = float(np.sum(np.abs(psi_k)))
    bound = math.sqrt(sj.P) + 2 * sj.delta**8
    pairs = []
    for a in range(stages.index(j), stages.index(k) + 1):
        for b in range(a + 1, stages.index(k) + 1):
            va = carried_from(state, chain, a, b)
            dist = spectral.eig_distance(chain_vector(state, chain[b]), va)
            lim = 2 * state.stage(chain[a].stage).delta ** 9
            pairs.append({"from": chain[a].stage, "to": chain[b].stage, "distance": dist, "bound": lim,
                          "pass": dist <= lim})
    ok = l1 <= bound + 1e-12 and all(p["pass"] for p in pairs)
    return {"l1": l1, "l1_bound": bound, "pairs": pairs, "pass": ok}


def carried_from(state: HierarchyState, chain: list[ChainPoint], a: int, b: int) -> np.ndarray:
    """Chain vector at position a embedded forward to the fiber of position b."""
    vec = chain_vector(state, chain[a])
    for i in range(a + 1, b + 1):
        st = state.stage(chain[i].stage)
        s_idx = int(st.tracking.shift[chain[i].sample, chain[i].band])
        vec = embed_eigenvector(vec, state.stage(chain[i - 1].stage).period, st.period, s_idx)
    return vec


def dominant_amplitude(state: HierarchyState, chain: list[ChainPoint], k: int, R: int) -> dict:
    """Birkhoff amplitude of phi^k at the dominant frequency of the chain's first fiber vector.

    The dominant frequency is theta = x_j + t* with t* maximising |psi^j(t)|. It
    resonates with the stage-k coefficient at the carried dual point; every
    other frequency contributes at most a Dirichlet-kernel tail.
    """
    from .lattice import dual_numerators

    first = chain[0]
    stages = [cp.stage for cp in chain]
    pos = stages.index(k)
    psi_j = chain_vector(state, first)
    t_star = int(np.argmax(np.abs(psi_j)))
    per_j = state.stage(first.stage).period
    theta = first.x(state) + dual_numerators(per_j)[t_star] / np.array(per_j.components, dtype=float)
    ef = synthesize_eigenfunction(state, chain, k, R)
    amp = frequency_amplitude(ef.values, ef.box, theta)
    st = state.stage(k)
    psi_k = chain_vector(state, chain[pos])
    marker = np.zeros(per_j.size, dtype=complex)
    marker[t_star] = 1.0
    carried = np.abs(carried_marker(state, chain, pos, marker)) > 0.5
    freqs = dual_numerators(st.period) / np.array(st.period.components, dtype=float) + chain[pos].x(state)
    tail = sum(abs(psi_k[t]) * dirichlet_tail(R, theta - freqs[t]) for t in range(st.P) if not carried[t])
    coeff = complex(psi_k[carried][0])
    delta_j = state.stage(first.stage).delta
    lower = float(np.max(np.abs(psi_j))) - 2 * delta_j**8 - tail
    return {
        "stage": k,
        "theta": [float(v) for v in theta],
        "amplitude": abs(amp),
        "fiber_coefficient": abs(coeff),
        "tail_bound": tail,
        "lower_bound": lower,
        "pass": abs(amp) >= lower - 1e-12 and abs(amp - coeff) <= tail + 1e-12,
    }


def carried_marker(state: HierarchyState, chain: list[ChainPoint], pos: int, marker: np.ndarray) -> np.ndarray:
    """Indicator of a first-stage dual point carried to chain position ``pos``."""
    vec = marker
    for i in range(1, pos + 1):
        st = state.stage(chain[i].stage)
        s_idx = int(st.tracking.shift[chain[i].sample, chain[i].band])
        vec = embed_eigenvector(vec, state.stage(chain[i - 1].stage).period, st.period, s_idx)
    return vec
