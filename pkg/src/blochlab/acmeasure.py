"""Fiber projections, spectral measures and the density and cascade checks built on them.

A finitely supported lattice vector phi is represented on the torus through
``phihat(theta) = sum_n phi(n) e(theta.n)``. Fiber y of a period p sees the
values ``phihat(y + k)`` for k in B_p. Norms use the cell-centre quadrature
of the torus grid, which is exact for trigonometric polynomials whose degree
is below the grid size.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize

from . import bloch, certify, hierarchy
from .errors import BinRangeError, GridMismatch, MissingCertificate, TangencyWarning
from .grid import FiberGrid
from .lattice import Period
from .potential import PeriodicPotential


@dataclass(frozen=True, eq=False)
class LatticeVector:
    points: np.ndarray
    values: np.ndarray

    @classmethod
    def delta(cls, n) -> "LatticeVector":
        n = np.atleast_1d(np.asarray(n, dtype=np.int64))
        return cls(n[None, :], np.array([1.0 + 0j]))

    @classmethod
    def from_pairs(cls, pairs) -> "LatticeVector":
        pts = np.array([p for p, _ in pairs], dtype=np.int64)
        vals = np.array([complex(v) for _, v in pairs])
        return cls(np.atleast_2d(pts), vals)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    @property
    def l1(self) -> float:
        return float(np.sum(np.abs(self.values)))

    @property
    def l2(self) -> float:
        return float(np.linalg.norm(self.values))


@dataclass(frozen=True, eq=False)
class ParamSet:
    grid: FiberGrid
    mask: np.ndarray

    @classmethod
    def full(cls, grid: FiberGrid) -> "ParamSet":
        return cls(grid, np.ones((grid.size, grid.period.size), dtype=bool))

    @classmethod
    def empty(cls, grid: FiberGrid) -> "ParamSet":
        return cls(grid, np.zeros((grid.size, grid.period.size), dtype=bool))

    @property
    def measure(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size

    def complement(self) -> "ParamSet":
        return ParamSet(self.grid, ~self.mask)

    def to_json(self) -> dict:
        flat = self.mask.ravel().astype(np.int8)
        change = np.flatnonzero(np.diff(flat)) + 1
        starts = np.concatenate([[0], change])
        lengths = np.diff(np.concatenate([starts, [flat.size]]))
        return {
            "period": list(self.grid.period.components),
            "resolution": list(self.grid.resolution),
            "shape": list(self.mask.shape),
            "first": int(flat[0]) if flat.size else 0,
            "runs": [int(v) for v in lengths],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ParamSet":
        grid = FiberGrid(Period.of(data["period"]), tuple(data["resolution"]))
        flat = np.zeros(int(np.prod(data["shape"])), dtype=bool)
        pos, val = 0, bool(data["first"])
        for run in data["runs"]:
            flat[pos:pos + run] = val
            pos += run
            val = not val
        return cls(grid, flat.reshape(data["shape"]))


@dataclass(frozen=True, eq=False)
class MeasureHistogram:
    edges: np.ndarray
    masses: np.ndarray
    total: float
    provenance: dict = field(default_factory=dict)

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.edges)

    @property
    def density(self) -> np.ndarray:
        return self.masses / self.widths


def fiber_transform(phi: LatticeVector, grid: FiberGrid) -> np.ndarray:
    """phihat(y + k) for every grid sample y and k in B_p, shape (samples, P)."""
    if phi.d != grid.d:
        raise GridMismatch(f"vector is {phi.d}-dimensional, grid is {grid.d}-dimensional")
    from .lattice import dual_numerators

    per = grid.period
    k = dual_numerators(per) / np.array(per.components, dtype=float)
    theta = grid.points()[:, None, :] + k[None, :, :]
    phase = np.exp(2j * np.pi * np.einsum("spd,md->spm", theta, phi.points.astype(float)))
    return phase @ phi.values


def _eigen(V: PeriodicPotential, grid: FiberGrid, survey: certify.Survey | None, threads=None):
    if survey is None or survey.vectors is None:
        survey = certify.survey_points(V, grid.points(), threads, keep_vectors=True)
    if survey.vectors.shape[0] != grid.size:
        raise GridMismatch("survey does not match the grid")
    return survey


def fiber_coefficients(phihat: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """<psi(y, l), phihat_y> for every sample and band."""
    return np.einsum("skl,sk->sl", vectors.conj(), phihat)


def project(V: PeriodicPotential, phi: LatticeVector, A: ParamSet, survey: certify.Survey | None = None,
            threads=None) -> np.ndarray:
    """Q_A phi as fiber values, shape (samples, P), same layout as :func:`fiber_transform`."""
    if A.grid.period != V.period:
        raise GridMismatch("parameter set and potential have different periods")
    survey = _eigen(V, A.grid, survey, threads)
    phihat = fiber_transform(phi, A.grid)
    coeff = fiber_coefficients(phihat, survey.vectors) * A.mask
    return np.einsum("skl,sl->sk", survey.vectors, coeff)


def torus_norm(values: np.ndarray) -> float:
    """L^2(T^d) norm of fiber values through the cell-centre rule."""
    return float(np.sqrt(np.sum(np.abs(values) ** 2) / values.size))


def bddqa_bound(P: int, measure: float, sup_phihat: float) -> float:
    """P^{3/2} |A|^{1/2} ||phihat||_inf."""
    return P**1.5 * math.sqrt(measure) * sup_phihat


def _edges(bins, lo: float, hi: float) -> np.ndarray:
    if np.ndim(bins) == 0:
        return np.linspace(lo, hi, int(bins) + 1)
    edges = np.asarray(bins, dtype=float)
    if edges[0] > lo + 1e-12 or edges[-1] < hi - 1e-12:
        raise BinRangeError(f"bins [{edges[0]}, {edges[-1]}] do not cover [{lo}, {hi}]")
    return edges


def _spread(edges: np.ndarray, lo: np.ndarray, hi: np.ndarray, mass: np.ndarray) -> np.ndarray:
    """Distribute each mass uniformly over [lo, hi] (a point mass when lo == hi)."""
    nb = edges.size - 1
    out = np.zeros(nb)
    point = hi - lo <= 0
    if np.any(point):
        idx = np.clip(np.searchsorted(edges, lo[point], side="right") - 1, 0, nb - 1)
        np.add.at(out, idx, mass[point])
    span = ~point
    if np.any(span):
        a, b, m = lo[span], hi[span], mass[span]
        # cumulative mass at each edge for every segment, summed over segments
        for e in range(nb):
            left = np.clip((edges[e] - a) / (b - a), 0, 1)
            right = np.clip((edges[e + 1] - a) / (b - a), 0, 1)
            out[e] += np.sum(m * (right - left))
    return out


def _segments(grid: FiberGrid, energies: np.ndarray, weights: np.ndarray, mask: np.ndarray):
    """Consecutive pairs along x_d (cyclic over the fundamental domain) for every band."""
    shape = grid.resolution + (energies.shape[1],)
    E = energies.reshape(shape)
    W = weights.reshape(shape)
    M = mask.reshape(shape)
    axis = grid.d - 1
    E2, W2, M2 = (np.roll(a, -1, axis=axis) for a in (E, W, M))
    keep = M & M2
    lo = np.minimum(E, E2)[keep]
    hi = np.maximum(E, E2)[keep]
    mass = 0.5 * (W + W2)[keep]
    return lo, hi, mass


def spectral_measure(V: PeriodicPotential, phi: LatticeVector, G: ParamSet | None, bins=256,
                     survey: certify.Survey | None = None, method: str = "linear",
                     grid: FiberGrid | None = None, threads=None) -> MeasureHistogram:
    """Histogram of mu_G(bin) = <Q_G phi, chi_bin(H) Q_G phi> by fiber quadrature.

    ``method="sample"`` puts each (x, l) weight into the bin of E(x, l);
    ``method="linear"`` interpolates E linearly along x_d between neighbouring
    samples, both of which must lie in G, and spreads the trapezoid mass of
    the segment uniformly over its energy range.
    """
    grid = G.grid if G is not None else grid
    if grid is None:
        raise GridMismatch("need a parameter set or a grid")
    G = ParamSet.full(grid) if G is None else G
    survey = _eigen(V, grid, survey, threads)
    lo_e = -2 * V.d - V.sup_norm
    hi_e = 2 * V.d + V.sup_norm
    edges = _edges(bins, lo_e, hi_e)
    phihat = fiber_transform(phi, grid)
    weights = np.abs(fiber_coefficients(phihat, survey.vectors)) ** 2 / phihat.size
    E = survey.energies
    if np.any(E < edges[0] - 1e-9) or np.any(E > edges[-1] + 1e-9):
        raise BinRangeError("eigenvalues outside the bin range")
    if method == "sample":
        idx = np.clip(np.searchsorted(edges, E[G.mask], side="right") - 1, 0, edges.size - 2)
        masses = np.zeros(edges.size - 1)
        np.add.at(masses, idx, weights[G.mask])
    elif method == "linear":
        lo, hi, mass = _segments(grid, E, weights, G.mask)
        masses = _spread(edges, lo, hi, mass)
    else:
        raise ValueError(f"unknown method {method!r}")
    prov = {"period": list(V.period.components), "method": method, "set_measure": G.measure,
            "samples": grid.size}
    return MeasureHistogram(edges, masses, float(np.sum(masses)), prov)


def free_dos_cdf(E):
    """Integrated density of states of the free 1-d Laplacian."""
    return 1.0 - np.arccos(np.clip(np.asarray(E) / 2.0, -1, 1)) / np.pi


def free_dos_l1_error(hist: MeasureHistogram) -> float:
    exact = np.diff(free_dos_cdf(hist.edges))
    return float(np.sum(np.abs(hist.masses - exact)))


def ell1_constant(vectors: np.ndarray, mask: np.ndarray) -> float:
    """C_1 = max ||psi(x, l)||_1 over the set."""
    if not mask.any():
        return 0.0
    norms = np.sum(np.abs(vectors), axis=1)
    return float(np.max(norms[mask]))


def segment_speed(grid: FiberGrid, energies: np.ndarray, mask: np.ndarray) -> float:
    """Smallest mean |dE/dx_d| over segments used by the linear quadrature."""
    lo, hi, _ = _segments(grid, energies, np.zeros_like(energies), mask)
    if lo.size == 0:
        return math.inf
    step = 1.0 / grid.torus_points[-1]
    return float(np.min(hi - lo) / step)


@dataclass(frozen=True)
class DensityReport:
    passed: bool
    bound: float
    gamma_effective: float
    worst_bin: int
    worst_density: float


def density_bound_check(hist: MeasureHistogram, C1: float | None, phi_l1: float, gamma: float | None,
                        segment_gamma: float | None = None) -> DensityReport:
    """Every bin density <= 4 (C_1 ||phi||_1)^2 / gamma.

    ``segment_gamma`` is the smallest mean velocity over the quadrature
    segments; when smaller than ``gamma`` it replaces it (quadrature slack).
    """
    if C1 is None or gamma is None:
        raise MissingCertificate("density bound needs C_1 and gamma from a certificate")
    dens = hist.density
    worst = int(np.argmax(dens)) if dens.size else 0
    worst_val = float(dens[worst]) if dens.size else 0.0
    if np.all(hist.masses == 0):
        return DensityReport(True, math.inf if gamma <= 0 else 4 * (C1 * phi_l1) ** 2 / gamma, gamma, worst, 0.0)
    g_eff = gamma if segment_gamma is None else min(gamma, segment_gamma)
    if g_eff <= 0:
        return DensityReport(True, math.inf, g_eff, worst, worst_val)
    bound = 4 * (C1 * phi_l1) ** 2 / g_eff
    return DensityReport(bool(worst_val <= bound * (1 + 1e-9)), bound, g_eff, worst, worst_val)


# root counting


def _band_value(V: PeriodicPotential, xp, t: float, band: int, E: float) -> float:
    x = np.concatenate([np.asarray(xp, dtype=float), [t]])
    return float(np.linalg.eigvalsh(bloch.assemble(V, x).entries)[band] - E)


def root_count(V: PeriodicPotential, x_prime, E: float, scan: int | None = None,
               tol: float = 1e-12) -> tuple[int, list[float]]:
    """Number of x_d in [0, 1/p_d) with E in the spectrum of H_(x', x_d).

    Every sorted band is scanned cyclically on 64 P points; sign changes are
    refined by bisection, and sign-preserving dips are checked by a local
    minimisation (a dip that touches zero raises TangencyWarning and is not
    counted, so the result is then a lower bound).
    """
    per = V.period
    xp = np.asarray(x_prime, dtype=float).reshape(-1)
    if xp.size != per.d - 1:
        raise GridMismatch(f"x' must have {per.d - 1} coordinates")
    P = per.size
    M = scan or 64 * P
    L = 1.0 / per[-1]
    ts = np.arange(M) * (L / M)
    xs = np.column_stack([np.broadcast_to(xp, (M, xp.size)), ts])
    energies = np.linalg.eigvalsh(bloch.assemble_batch(V, xs)) - E
    roots: list[float] = []
    for band in range(P):
        vals = energies[:, band]
        for i in range(M):
            a, b = ts[i], ts[i] + L / M
            fa, fb = vals[i], vals[(i + 1) % M]
            if fa == 0:
                roots.append(float(a))
                continue
            if fa * fb < 0:
                f = lambda t: _band_value(V, xp, t, band, E)  # noqa: E731
                roots.append(float(scipy.optimize.bisect(f, a, b, xtol=tol)) % L)
        # sign-preserving dips between samples
        mags = np.abs(vals)
        for i in range(M):
            prev, nxt = mags[(i - 1) % M], mags[(i + 1) % M]
            if mags[i] <= prev and mags[i] <= nxt and mags[i] > 0 and \
                    np.sign(vals[(i - 1) % M]) == np.sign(vals[i]) == np.sign(vals[(i + 1) % M]):
                sgn = np.sign(vals[i])
                f = lambda t: sgn * _band_value(V, xp, t % L, band, E)  # noqa: E731
                res = scipy.optimize.minimize_scalar(f, bounds=(ts[i] - L / M, ts[i] + L / M), method="bounded",
                                                     options={"xatol": 1e-13})
                if res.fun < 0:
                    lo_t, hi_t = ts[i] - L / M, ts[i] + L / M
                    roots.append(float(scipy.optimize.bisect(f, lo_t, res.x, xtol=tol)) % L)
                    roots.append(float(scipy.optimize.bisect(f, res.x, hi_t, xtol=tol)) % L)
                elif res.fun < 1e-9:
                    warnings.warn(f"tangential contact near x_d = {res.x % L:.6g}", TangencyWarning, stacklevel=2)
    roots.sort()
    merged: list[float] = []
    for r in roots:
        if not merged or min(abs(r - merged[-1]), L - abs(r - merged[-1])) > 1e-9:
            merged.append(r)
    if len(merged) > 1 and L - abs(merged[-1] - merged[0]) <= 1e-9:
        merged.pop()
    return len(merged), merged


def root_bound(p) -> int:
    per = Period.of(p)
    return 2 * math.prod(per.components[:-1])


# hierarchy checks


def _stage_fiber(state: hierarchy.HierarchyState, k: int, phi: LatticeVector) -> np.ndarray:
    return fiber_transform(phi, state.stage(k).grid)


def _projected(state, k: int, phihat: np.ndarray, mask: np.ndarray) -> np.ndarray:
    vec = state.stage(k).survey.vectors
    coeff = fiber_coefficients(phihat, vec) * mask
    return np.einsum("skl,sl->sk", vec, coeff)


def _on_torus(state, k: int, fiber_values: np.ndarray) -> np.ndarray:
    idx = state.stage(k).grid.torus_index()
    out = np.zeros(int(np.prod(state.torus_points)), dtype=complex)
    out[idx.ravel()] = fiber_values.ravel()
    return out


def projection_cascade_check(state: hierarchy.HierarchyState, j: int, K: int, vectors) -> dict:
    """Projection norms of the chain sets against the bounds they are expected to satisfy.

    Reports, per test vector, ||(I - P_{j,j}) phi|| against the bounded-projection
    estimate, ||(P_{k+1,j} - P_{k,j}) phi|| against delta_k ||phi|| and against
    the tracked-distance bound, and the quadratic-form inequality
    <phi, P_{K,j} phi> <= <phi, P_{K,j+1} phi>.
    """
    sets = {jj: hierarchy.descendants(state, jj, K) for jj in range(j, min(j + 1, K) + 1)}
    chain_j = sets[j]
    st_j = state.stage(j)
    records = []
    for phi in vectors:
        rec = {}
        phihat_j = _stage_fiber(state, j, phi)
        sup = float(np.max(np.abs(phihat_j)))
        norm = torus_norm(phihat_j)
        comp = ~chain_j[0]
        rest = torus_norm(_projected(state, j, phihat_j, comp))
        meas = float(np.count_nonzero(comp)) / comp.size
        rec["complement_norm"] = rest
        rec["complement_measure"] = meas
        rec["bddqa_bound"] = bddqa_bound(st_j.P, meas, sup)
        rec["nominal_bound"] = 2 * st_j.eta * st_j.P**2 * sup
        rec["complement_ok"] = rest <= rec["bddqa_bound"] * (1 + 1e-9) + 1e-14
        rec["consistent_with_nominal"] = rest <= rec["nominal_bound"] * (1 + 1e-9) + 1e-14
        diffs = []
        for k in range(j, K):
            a = _on_torus(state, k, _projected(state, k, _stage_fiber(state, k, phi), chain_j[k - j]))
            b = _on_torus(state, k + 1, _projected(state, k + 1, _stage_fiber(state, k + 1, phi),
                                                   chain_j[k + 1 - j]))
            diff = torus_norm(b - a)
            t = state.stage(k + 1).tracking
            dmax = float(np.max(t.distance[chain_j[k + 1 - j]], initial=0.0))
            tracked = state.stage(k + 1).P * dmax * norm
            delta_k = state.stage(k).delta
            diffs.append({"k": k, "difference": diff, "tracked_bound": tracked, "delta_bound": delta_k * norm,
                          "pass": diff <= tracked * (1 + 1e-9) + 1e-13 and diff <= delta_k * norm + 1e-13})
        rec["differences"] = diffs
        if j + 1 in sets:
            inner = sets[j + 1]
            inc = bool(np.all(~chain_j[-1] | inner[-1]))
            phihat_K = _stage_fiber(state, K, phi)
            qa = torus_norm(_projected(state, K, phihat_K, chain_j[-1])) ** 2
            qb = torus_norm(_projected(state, K, phihat_K, inner[-1])) ** 2
            rec["monotone_inclusion"] = inc
            rec["monotone_quadratic"] = qa <= qb * (1 + 1e-12) + 1e-15
        rec["pass"] = bool(rec["complement_ok"] and all(d["pass"] for d in diffs)
                           and rec.get("monotone_inclusion", True) and rec.get("monotone_quadratic", True))
        records.append(rec)
    return {"j": j, "K": K, "vectors": records, "pass": all(r["pass"] for r in records)}


def measure_decomposition_check(state: hierarchy.HierarchyState, phi: LatticeVector, K: int | None = None,
                                bins=256, slack: float = 1e-6, method: str = "linear") -> dict:
    """mu_j at depth K for j = 1..K on stage-K data: monotone, telescoping and density-bounded."""
    K = state.depth if K is None else K
    st = state.stage(K)
    hists, dens = [], []
    for j in range(1, K + 1):
        G = ParamSet(st.grid, hierarchy.descendants(state, j, K)[-1])
        hist = spectral_measure(st.potential, phi, G, bins, st.survey, method)
        hists.append(hist)
        C1 = ell1_constant(st.survey.vectors, G.mask)
        gamma = state.stage(j).gamma / 2
        seg = segment_speed(st.grid, st.survey.energies, G.mask)
        rep = density_bound_check(hist, C1, phi.l1, gamma, seg)
        dens.append({"j": j, "C1": C1, "gamma": gamma, "gamma_effective": rep.gamma_effective,
                     "bound": rep.bound, "max_density": rep.worst_density, "pass": rep.passed})
    masses = np.array([h.masses for h in hists])
    steps = np.diff(masses, axis=0)
    monotone = bool(np.all(steps >= -slack))
    telescoped = masses[0] + steps.sum(axis=0) if K > 1 else masses[0]
    tele_err = float(np.max(np.abs(telescoped - masses[-1]), initial=0.0))
    tele_ok = tele_err <= 1e-14 * max(1.0, float(np.max(masses)))
    return {
        "K": K,
        "totals": [h.total for h in hists],
        "monotone": monotone,
        "min_step": float(np.min(steps)) if steps.size else 0.0,
        "telescoping_error": tele_err,
        "telescoping": tele_ok,
        "density": dens,
        "histograms": hists,
        "pass": monotone and tele_ok and all(d["pass"] for d in dens),
    }


def velocity_stability_check(state: hierarchy.HierarchyState, j: int, k: int, slack: float = 1e-9) -> dict:
    """At chain points, |dE^k/dx_d| >= gamma_j / 2 and |v_k - v_j| <= 8 pi d(psi_k, embed psi_j) + tolerance."""
    if not 1 <= j <= k <= state.depth:
        raise hierarchy.ChainBroken(f"stages {j}..{k} not resolved")
    sets = hierarchy.descendants(state, j, k)
    mask_k = sets[-1]
    vk = np.abs(state.stage(k).survey.velocities[mask_k])
    floor = state.stage(j).gamma / 2 - slack
    ok = bool(np.all(vk >= floor)) if vk.size else True
    worst_diff = 0.0
    worst_allow = math.inf
    if k > j:
        # follow each stage-k point back to stage j through the tracking maps
        samples, bands = np.nonzero(mask_k)
        cur_s, cur_b = samples.copy(), bands.copy()
        for m in range(k, j, -1):
            t = state.stage(m).tracking
            cur_s, cur_b = t.coarse_sample[cur_s, cur_b], t.coarse_band[cur_s, cur_b]
        v_j = state.stage(j).survey.velocities[cur_s, cur_b]
        v_k = state.stage(k).survey.velocities[samples, bands]
        dist = np.zeros_like(v_k)
        s2, b2 = samples.copy(), bands.copy()
        for m in range(k, j, -1):
            t = state.stage(m).tracking
            dist += t.distance[s2, b2]
            s2, b2 = t.coarse_sample[s2, b2], t.coarse_band[s2, b2]
        allow = 8 * math.pi * dist + 1e-9
        diff = np.abs(v_k - v_j)
        if diff.size:
            i = int(np.argmax(diff - allow))
            worst_diff, worst_allow = float(diff[i]), float(allow[i])
        ok = ok and bool(np.all(diff <= allow))
    return {"j": j, "k": k, "min_speed": float(np.min(vk)) if vk.size else math.inf,
            "floor": floor, "worst_difference": worst_diff, "allowed": worst_allow, "pass": ok}
