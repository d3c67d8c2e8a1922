"""Cartan sublevel estimates, the theoretical simplicity pipeline and empirical good sets.

Theoretical levels are astronomically small, so every level is also carried
as a natural logarithm; the plain value is ``exp`` of it and may be 0.0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import bloch, spectral
from .errors import CertificateFailure, HypothesisViolation
from .grid import FiberGrid
from .lattice import Period
from .parallel import chunk_ranges, ordered_map
from .potential import PeriodicPotential

CARTAN_CONST = 60.0 * math.e**3
Y_CLAMP = 1.0 + 1e-9


@dataclass(frozen=True)
class CartanBudget:
    kappa: float
    A: float
    y: float
    eps: float
    d: int

    def __post_init__(self):
        if not self.kappa > 0:
            raise HypothesisViolation("kappa must be positive")
        if not self.y > 1:
            raise HypothesisViolation(f"witness norm |y| = {self.y} must exceed 1")
        if not 0 < self.eps < 1:
            raise HypothesisViolation("eps must lie in (0, 1)")
        if self.A < math.log(self.kappa):
            raise HypothesisViolation("A must dominate log kappa")
        if self.d < 1:
            raise HypothesisViolation("dimension must be positive")


def cartan_1d_log_threshold(sup_log: float, y: float, eps: float) -> float:
    if not y > 1:
        raise HypothesisViolation(f"|y| = {y} must exceed 1")
    if not 0 < eps < 1:
        raise HypothesisViolation("eps must lie in (0, 1)")
    if sup_log < 0:
        raise HypothesisViolation("sup_log must be nonnegative")
    return math.log(eps / (CARTAN_CONST * y)) * sup_log


def cartan_1d_threshold(kappa: float, sup_log: float, y: float, eps: float) -> float:
    """delta with log delta = log(eps / (60 e^3 |y|)) * sup_log; the sublevel is delta * kappa."""
    if not kappa > 0:
        raise HypothesisViolation("kappa must be positive")
    return math.exp(cartan_1d_log_threshold(sup_log, y, eps))


def cartan_nd_log_threshold(b: CartanBudget) -> float:
    return math.log(b.kappa) + b.d * b.A * math.log(b.eps / (CARTAN_CONST * b.d * b.y))


def cartan_nd_threshold(b: CartanBudget) -> float:
    """kappa * (eps / (60 e^3 d |y|))^{d A}."""
    return math.exp(cartan_nd_log_threshold(b))


def sublevel_measure(values, level: float, log: bool = False) -> float:
    """Fraction of samples with |f| <= level; with ``log=True`` both are natural logs."""
    vals = np.asarray(values, dtype=float)
    if vals.size == 0:
        return 0.0
    mags = vals if log else np.abs(vals)
    return float(np.count_nonzero(mags <= level)) / vals.size


# surveys


@dataclass(frozen=True, eq=False)
class Survey:
    points: np.ndarray
    energies: np.ndarray
    velocities: np.ndarray
    log_f: np.ndarray
    vectors: np.ndarray | None = None

    @property
    def gaps(self) -> np.ndarray:
        """Minimal consecutive gap per sample (inf for single-band fibers)."""
        if self.energies.shape[1] < 2:
            return np.full(self.energies.shape[0], np.inf)
        return np.min(np.diff(self.energies, axis=1), axis=1)

    @property
    def log_g(self) -> np.ndarray:
        return spectral.log_g(self.log_f, self.velocities)

    @property
    def f(self) -> np.ndarray:
        return np.exp(self.log_f)

    @property
    def g(self) -> np.ndarray:
        return self.f * np.prod(self.velocities, axis=1)


def survey_points(V: PeriodicPotential, xs, threads: int | None = None, keep_vectors: bool = False,
                  axis: int | None = None) -> Survey:
    """Eigen-data at arbitrary real quasi-momenta in fixed row order."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    conv = bloch.convolution_matrix(V)

    def work(rng):
        lo, hi = rng
        H = bloch.assemble_batch(V, xs[lo:hi], conv)
        E, psi = spectral.eigensystem_batch(H)
        v = spectral.velocities_batch(psi, bloch.derivative_diagonal(V.period, xs[lo:hi], axis))
        return E, v, (psi if keep_vectors else None)

    parts = ordered_map(work, chunk_ranges(xs.shape[0]), threads)
    E = np.concatenate([p[0] for p in parts])
    v = np.concatenate([p[1] for p in parts])
    psi = np.concatenate([p[2] for p in parts]) if keep_vectors else None
    return Survey(xs, E, v, spectral.log_discriminant(E), psi)


def grid_survey(V: PeriodicPotential, resolution, threads: int | None = None,
                keep_vectors: bool = False) -> tuple[FiberGrid, Survey]:
    """Survey on the cell-centre grid of the fundamental domain."""
    res = _resolution(V.period, resolution)
    if any(r < 2 for r in res):
        raise HypothesisViolation("survey resolution must be at least 2 per axis")
    grid = FiberGrid(V.period, res)
    return grid, survey_points(V, grid.points(), threads, keep_vectors)


def torus_survey(V: PeriodicPotential, points_per_axis: int, threads: int | None = None) -> Survey:
    """Survey on the cell-centre grid of the whole torus [0, 1)^d."""
    d = V.d
    axis = (np.arange(points_per_axis) + 0.5) / points_per_axis
    xs = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
    return survey_points(V, xs, threads)


def _resolution(p: Period, resolution) -> tuple[int, ...]:
    if np.ndim(resolution) == 0:
        return (int(resolution),) * p.d
    return tuple(int(r) for r in resolution)


# theory


@dataclass(frozen=True, eq=False)
class TheoryResult:
    delta: float
    gamma: float
    log_delta: float
    log_gamma: float
    audit: dict = field(default_factory=dict)


def log_bound_constant(d: int, sup_norm: float) -> float:
    """C = log(max(4 pi, 5d) 2^{4 e d} (4d + |V| + 1)^{4e})."""
    return (math.log(max(4 * math.pi, 5 * d)) + 4 * math.e * d * math.log(2)
            + 4 * math.e * math.log(4 * d + sup_norm + 1))


def witness_shift(V: PeriodicPotential) -> tuple[np.ndarray, bool]:
    """Imaginary witness y with |y| > 1; returns (y, clamped)."""
    y = bloch.separation_shift(V.period, V.sup_norm)
    norm = float(np.max(np.abs(y)))
    if norm >= Y_CLAMP:
        return y, False
    return y * (Y_CLAMP / norm), True


def theoretical_simplicity(V: PeriodicPotential, eta: float) -> TheoryResult:
    """delta and gamma of the quantitative simplicity theorem, made explicit.

    The Cartan level is applied to f (for delta) and to g (for gamma) with
    eps = eta / 2 each, witness y from :func:`witness_shift` and kappa = 1.
    """
    if not 0 < eta < 0.5:
        raise HypothesisViolation(f"eta = {eta} must lie in (0, 1/2)")
    P, d, vn = V.period.size, V.d, V.sup_norm
    if P == 1:
        return TheoryResult(math.inf, 0.0, math.inf, -math.inf,
                            {"P": 1, "note": "single band: no gap condition, gamma not defined by the pipeline"})
    y, clamped = witness_shift(V)
    ynorm = float(np.max(np.abs(y)))
    C = log_bound_constant(d, vn)
    logP = math.log(P)
    R = 4 * math.e * ynorm
    # take the larger of the lemma bound and the direct bound on |f| over the polydisc
    A_f_lemma = P * P * (4 * math.e * logP + C)
    A_f_direct = P * P * math.log(4 * d * math.exp(2 * math.pi * R) + vn)
    A_f = max(A_f_lemma, A_f_direct)
    A_g_lemma = P * (P + 1) * (4 * math.e * logP + C)
    A_g_direct = P * math.log(4 * math.pi * math.exp(2 * math.pi * R)) + A_f
    A_g = max(A_g_lemma, A_g_direct)
    eps = eta / 2
    kappa = 1.0
    log_level_f = cartan_nd_log_threshold(CartanBudget(kappa, A_f, ynorm, eps, d))
    log_level_g = cartan_nd_log_threshold(CartanBudget(kappa, A_g, ynorm, eps, d))
    log_delta = float(spectral.log_gap_from_discriminant(log_level_f, d, vn, P))
    # |dE| = |d_x P| / |d_E P| and |d_E P(E_l)| <= (4d + 2|V|)^{P-1}
    log_gamma = (log_level_g - P * (P - 1) * math.log(4 * d + 2 * vn + 1)
                 - (P - 1) * math.log(4 * d + 2 * vn))
    witness = bloch.assemble_complex(V, 1j * y)
    spec = spectral.nonhermitian_spectrum(witness)
    f_witness = abs(spectral.complex_discriminant(spec))
    exponent = log_delta / math.log(eta)
    audit = {
        "P": P,
        "d": d,
        "sup_norm": vn,
        "y": [float(v) for v in y],
        "y_norm": ynorm,
        "y_clamped": clamped,
        "kappa": kappa,
        "f_at_witness": f_witness,
        "C": C,
        "A_f": A_f,
        "A_f_lemma": A_f_lemma,
        "A_g": A_g,
        "A_g_lemma": A_g_lemma,
        "eps": eps,
        "log_level_f": log_level_f,
        "log_level_g": log_level_g,
        "log_delta": log_delta,
        "log_gamma": log_gamma,
        "eta_exponent": exponent,
        "C_prime": exponent / (P * P * logP),
    }
    return TheoryResult(math.exp(log_delta), math.exp(log_gamma), log_delta, log_gamma, audit)


def cartan_conclusion(V: PeriodicPotential, eps: float, points_per_axis: int,
                      threads: int | None = None) -> dict:
    """Empirical sublevel fraction of |f| on [0,1]^d at the Cartan level, with kappa = 1."""
    P, d = V.period.size, V.d
    y, clamped = witness_shift(V)
    ynorm = float(np.max(np.abs(y)))
    C = log_bound_constant(d, V.sup_norm)
    R = 4 * math.e * ynorm
    A = max(P * P * (4 * math.e * math.log(P) + C), P * P * math.log(4 * d * math.exp(2 * math.pi * R) + V.sup_norm))
    log_level = cartan_nd_log_threshold(CartanBudget(1.0, A, ynorm, eps, d))
    survey = torus_survey(V, points_per_axis, threads)
    fraction = sublevel_measure(survey.log_f, log_level, log=True)
    slack = 2.0 * d / points_per_axis
    return {
        "period": list(V.period.components),
        "eps": eps,
        "A": A,
        "y_norm": ynorm,
        "y_clamped": clamped,
        "log_level": log_level,
        "fraction": fraction,
        "slack": slack,
        "samples": survey.log_f.size,
        "pass": fraction <= eps + slack,
    }


# empirical certificates


@dataclass(frozen=True, eq=False)
class GoodSetCertificate:
    grid: FiberGrid
    mask: np.ndarray
    delta: float
    gamma: float
    eta: float
    measure_good: float
    accepted: bool
    audit: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "period": list(self.grid.period.components),
            "eta": self.eta,
            "delta": self.delta,
            "gamma": self.gamma,
            "resolution": list(self.grid.resolution),
            "measure_good": self.measure_good,
            "audit": self.audit,
        }


def empirical_level(values: np.ndarray, fraction: float) -> float:
    """Largest sampled level whose strict sublevel fraction is at most ``fraction``."""
    flat = np.sort(np.asarray(values, dtype=float).ravel())
    if flat.size == 0:
        return math.inf
    m = int(math.floor(fraction * flat.size + 1e-12))
    return float(flat[min(m, flat.size - 1)])


def good_set_from_survey(grid: FiberGrid, survey: Survey, eta: float) -> GoodSetCertificate:
    if not 0 < eta < 1:
        raise HypothesisViolation(f"eta = {eta} must lie in (0, 1)")
    gaps = survey.gaps
    speed = np.abs(survey.velocities)
    if np.any(np.isnan(gaps)) or np.any(np.isnan(speed)):
        raise CertificateFailure("survey contains NaN values")
    delta = empirical_level(gaps, eta / 2)
    gamma = empirical_level(speed, eta / 2)
    mask = (gaps >= delta)[:, None] & (speed >= gamma)
    measure = float(np.count_nonzero(mask)) / mask.size
    accepted = bool(measure >= 1 - eta - 1e-12)
    audit = {
        "samples": int(mask.shape[0]),
        "bands": int(mask.shape[1]),
        "gap_bad_fraction": float(np.count_nonzero(gaps < delta)) / gaps.size,
        "velocity_bad_fraction": float(np.count_nonzero(speed < gamma)) / speed.size,
        "grid_max_gap": float(np.max(gaps)),
        "grid_min_speed": float(np.min(speed)),
        "sampled": True,
    }
    return GoodSetCertificate(grid, mask, delta, gamma, eta, measure, accepted, audit)


def good_set(V: PeriodicPotential, eta: float, resolution, threads: int | None = None) -> GoodSetCertificate:
    """Empirical certificate: eta/2 of the budget for gaps, eta/2 for velocities."""
    grid, survey = grid_survey(V, resolution, threads)
    cert = good_set_from_survey(grid, survey, eta)
    if not cert.accepted:
        raise CertificateFailure(f"good measure {cert.measure_good} below 1 - eta = {1 - eta}")
    return cert


def empirical_quantiles(survey: Survey, eta: float) -> tuple[float, float]:
    """eta-quantiles of the sampled min gap (per fiber) and of |velocity| (per band point)."""
    return empirical_level(survey.gaps, eta), empirical_level(np.abs(survey.velocities), eta)


def diagonal_dominance_check(p, d: int | None = None, sup_norm: float = 0.0, y=None) -> bool:
    """Pairwise |d(k, y) - d(l, y)| >= d + |V| + 1 at the separation shift (or a given y)."""
    per = Period.of(p)
    d = per.d if d is None else d
    y = bloch.separation_shift(per, sup_norm) if y is None else np.asarray(y, dtype=float)
    vals = bloch.diagonal_profile(per, y).values
    if vals.size < 2:
        return True
    diff = np.abs(vals[:, None] - vals[None, :])
    np.fill_diagonal(diff, np.inf)
    return bool(np.min(diff) >= d + sup_norm + 1)
