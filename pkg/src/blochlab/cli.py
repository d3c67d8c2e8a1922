"""Command-line driver.

``blochlab <command> --config <path> [--out <dir>] [--threads N]``

Exit codes: 0 success, 1 acceptance criterion failed (``verify``),
2 configuration error, 3 numerical failure, 4 certificate failure,
5 construction inequality failure, 6 broken good chain.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import acmeasure, certify, config, hierarchy, spectral, verify
from .errors import (
    BlochLabError,
    CertificateFailure,
    ChainBroken,
    ConfigError,
    DivisibilityViolation,
    HypothesisViolation,
    ShapeMismatch,
    UnderflowWarning,
)
from .parallel import set_default_threads
from .potential import layer_to_json

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_NUMERIC, EXIT_CERTIFICATE, EXIT_CONSTRUCT, EXIT_CHAIN = range(7)
COMMANDS = ("bands", "certify", "cartan", "construct", "eigfun", "measure", "verify")


def _num(v) -> str:
    return repr(float(v))


def _plain(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _dumps(data, **kw) -> str:
    return json.dumps(data, sort_keys=True, default=_plain, **kw)


def _write_json(path: Path, data) -> None:
    path.write_text(_dumps(data, indent=1) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _total_potential(cfg: config.RunConfig):
    return functools.reduce(lambda a, b: a + b, cfg.layers)


def _construct(cfg: config.RunConfig, threads):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderflowWarning)
        return hierarchy.construct(cfg.layers, cfg.get("torus_points"), cfg.get("eta_schedule"), threads)


def cmd_bands(cfg, out: Path, threads) -> int:
    V = _total_potential(cfg)
    per = V.period
    res = cfg.get("resolution")
    res = tuple(res) if isinstance(res, list) else (res,) * per.d
    # nodes i / (res p) of the fundamental domain, so band edges like x = 1/4 are sampled
    axes = [np.arange(r) / (r * p) for r, p in zip(res, per)]
    xs = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, per.d)
    survey = certify.survey_points(V, xs, threads)
    below, above = spectral.band_gaps(survey.energies)
    f, g = survey.f, survey.g
    rows = []
    for i, x in enumerate(xs):
        for b in range(per.size):
            rows.append([_num(v) for v in x] + [b + 1, _num(survey.energies[i, b]), _num(survey.velocities[i, b]),
                                                _num(below[i, b]), _num(above[i, b]), _num(f[i]), _num(g[i])])
    header = [f"x_{j + 1}" for j in range(per.d)] + ["band", "E", "velocity", "gap_below", "gap_above", "f", "g"]
    _write_csv(out / "bands.csv", header, rows)
    gaps = survey.gaps
    summary = {"period": list(per.components), "resolution": list(res), "samples": int(xs.shape[0])}
    if per.size > 1:
        i = int(np.argmin(gaps))
        b = int(np.argmin(np.diff(survey.energies[i])))
        summary["global_min_gap"] = {"gap": float(gaps[i]), "x": [float(v) for v in xs[i]], "bands": [b + 1, b + 2]}
    k = np.unravel_index(int(np.argmax(np.abs(survey.velocities))), survey.velocities.shape)
    summary["max_speed"] = {"speed": float(abs(survey.velocities[k])), "x": [float(v) for v in xs[k[0]]],
                            "band": int(k[1]) + 1}
    summary["bands"] = [{"band": b + 1, "min": float(survey.energies[:, b].min()),
                         "max": float(survey.energies[:, b].max()),
                         "min_speed": float(np.abs(survey.velocities[:, b]).min())} for b in range(per.size)]
    _write_json(out / "bands_summary.json", summary)
    return EXIT_OK


def cmd_certify(cfg, out: Path, threads) -> int:
    V = _total_potential(cfg)
    eta = cfg.get("eta")
    if not eta < 0.5:
        raise ConfigError(f"eta = {eta} must be below 1/2 for the theoretical certificate")
    grid, survey = certify.grid_survey(V, cfg.get("resolution"), threads)
    cert = certify.good_set_from_survey(grid, survey, eta)
    th = certify.theoretical_simplicity(V, eta)
    report = cert.to_json()
    report["accepted"] = cert.accepted
    report["theory"] = {"delta": th.delta, "gamma": th.gamma, "log_delta": th.log_delta,
                        "log_gamma": th.log_gamma, "audit": th.audit}
    _write_json(out / "certificate.json", report)
    _write_json(out / "good_set.json", acmeasure.ParamSet(grid, cert.mask).to_json())
    if not cert.accepted:
        raise CertificateFailure(f"good set measure {cert.measure_good} below 1 - eta")
    return EXIT_OK


def cmd_cartan(cfg, out: Path, threads) -> int:
    V = _total_potential(cfg)
    n = max(2, round(cfg.get("cartan_points") ** (1.0 / V.d)))
    runs = [certify.cartan_conclusion(V, eps, n, threads) for eps in cfg.get("cartan_eps")]
    _write_json(out / "cartan.json", {"points_per_axis": n, "runs": runs})
    return EXIT_OK if all(r["pass"] for r in runs) else EXIT_CERTIFICATE


def _archive(state: hierarchy.HierarchyState) -> dict:
    return {
        "torus_points": list(state.torus_points),
        "stop_reason": state.stop_reason,
        "layers": [layer_to_json(s.layer) for s in state.stages],
        "schedule": {"eta": [s.eta for s in state.stages], "delta": [s.delta for s in state.stages],
                     "gamma": [s.gamma for s in state.stages], "eps": [s.eps for s in state.stages],
                     "P": [s.P for s in state.stages]},
        "certificate_masks": [acmeasure.ParamSet(s.grid, s.certificate.mask).to_json() for s in state.stages],
        "good_masks": [acmeasure.ParamSet(s.grid, s.good).to_json() for s in state.stages],
    }


def cmd_construct(cfg, out: Path, threads) -> int:
    state = _construct(cfg, threads)
    reports = [hierarchy.stage_report(state, s) for s in state.stages]
    with (out / "stages.jsonl").open("w") as fh:
        for rep in reports:
            fh.write(_dumps(rep) + "\n")
    _write_json(out / "state.json", _archive(state))
    return EXIT_OK if all(r["pass"] for r in reports) else EXIT_CONSTRUCT


def _chain_start(cfg, state) -> tuple[int, int]:
    cp = cfg.get("chain_point")
    if cp is None:
        return hierarchy.default_chain_point(state)
    st = state.stage(1)
    x = np.asarray(cp["x"], dtype=float)
    if x.size != st.grid.d:
        raise ConfigError("chain_point.x has the wrong dimension")
    cell = 1.0 / np.array(st.period.components, dtype=float)
    diff = np.abs(((st.grid.points() - x) + cell / 2) % cell - cell / 2)
    sample = int(np.argmin(np.max(diff, axis=1)))
    band = int(cp["band"]) - 1
    if band >= st.P:
        raise ConfigError(f"chain_point.band must be at most {st.P}")
    return sample, band


def cmd_eigfun(cfg, out: Path, threads) -> int:
    state = _construct(cfg, threads)
    sample, band = _chain_start(cfg, state)
    chain = hierarchy.resolve_chain(state, 1, sample, band)
    R = cfg.get("box_radius")
    K = state.depth
    tol = cfg.tolerances["residual"]
    stages, final = [], None
    for k in range(1, K + 1):
        ef = hierarchy.synthesize_eigenfunction(state, chain, k, R)
        limit = tol * (1 + abs(ef.energy))
        stages.append({"stage": k, "energy": ef.energy, "residual": ef.residual, "tolerance": limit,
                       "pass": ef.residual <= limit, "full_operator": hierarchy.full_operator_residual(state, ef)})
        final = ef
    report = {
        "chain": [{"stage": c.stage, "sample": c.sample, "band": c.band + 1,
                   "x": [float(v) for v in c.x(state)]} for c in chain],
        "R": R,
        "stages": stages,
        "energy_telescoping": hierarchy.energy_telescoping(state, chain),
        "cauchy": hierarchy.cauchy_check(state, chain, R),
        "ell1_tracking": hierarchy.ell1_tracking_check(state, chain, 1, K),
        "dominant_frequency": hierarchy.dominant_amplitude(state, chain, K, R),
    }
    _write_json(out / "eigfun.json", report)
    rows = [[int(v) for v in n] + [_num(z.real), _num(z.imag)] for n, z in zip(final.box, final.values)]
    _write_csv(out / "eigenfunction.csv", [f"n_{j + 1}" for j in range(state.d)] + ["re", "im"], rows)
    if not all(s["pass"] for s in stages):
        return EXIT_NUMERIC
    return EXIT_OK


def _vector(cfg, d: int) -> acmeasure.LatticeVector:
    spec = cfg.get("vector")
    if spec is None:
        return acmeasure.LatticeVector.delta([0] * d)
    if any(len(n) != d for n, _, _ in spec):
        raise ConfigError("vector entries must have one index per axis")
    return acmeasure.LatticeVector.from_pairs([(n, complex(re, im)) for n, re, im in spec])


def _hist_rows(hist, bounds, slack: float):
    dens = hist.density
    rows = []
    for i in range(hist.masses.size):
        ok = dens[i] <= bounds + slack
        rows.append([_num(hist.edges[i]), _num(hist.edges[i + 1]), _num(hist.masses[i]), _num(dens[i]),
                     _num(bounds), str(bool(ok)).lower()])
    return rows


HIST_HEADER = ["bin_lo", "bin_hi", "mass", "density", "bound", "pass"]


def cmd_measure(cfg, out: Path, threads) -> int:
    state = _construct(cfg, threads)
    st = state.stage(state.depth)
    phi = _vector(cfg, state.d)
    bins, method = cfg.get("bins"), cfg.get("measure_method")
    slack = cfg.tolerances["measure_slack"]
    if cfg.get("measure_set") == "full":
        hist = acmeasure.spectral_measure(st.potential, phi, None, bins, st.survey, method, st.grid)
        _write_csv(out / "histogram.csv", HIST_HEADER, _hist_rows(hist, math.inf, slack))
        report = {"set": "full", "total": hist.total, "norm_squared": phi.l2**2, "provenance": hist.provenance}
        if np.all(st.potential.cell == 0) and state.d == 1:
            report["free_dos_l1_error"] = acmeasure.free_dos_l1_error(hist)
        _write_json(out / "measure.json", report)
        return EXIT_OK
    rep = acmeasure.measure_decomposition_check(state, phi, bins=bins, slack=slack, method=method)
    for hist, dens in zip(rep.pop("histograms"), rep["density"]):
        _write_csv(out / f"histogram_j{dens['j']}.csv", HIST_HEADER, _hist_rows(hist, dens["bound"], slack))
    rep["set"] = "chain"
    _write_json(out / "measure.json", rep)
    return EXIT_OK if rep["pass"] else EXIT_NUMERIC


def cmd_verify(cfg, out: Path, threads) -> int:
    report = verify.run(cfg.get("seed"))
    _write_json(out / "verify_report.json", report)
    for r in report["criteria"]:
        print(f"criterion {r['id']:2d} {r['name']}: {'PASS' if r['pass'] else 'FAIL'}")
    return EXIT_OK if report["all_pass"] else EXIT_FAILED


HANDLERS = {
    "bands": cmd_bands,
    "certify": cmd_certify,
    "cartan": cmd_cartan,
    "construct": cmd_construct,
    "eigfun": cmd_eigfun,
    "measure": cmd_measure,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="blochlab", description="Bloch band and limit-periodic hierarchy toolkit")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="run configuration (JSON)")
    ap.add_argument("--out", help="output directory (default: config 'output' or the current directory)")
    ap.add_argument("--threads", type=int, help="worker threads (default: BLOCHLAB_THREADS or all cores)")
    return ap


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config.load(args.config)
        if args.threads is not None and args.threads < 1:
            raise ConfigError("--threads must be positive")
        set_default_threads(args.threads)
        out = Path(args.out or cfg.get("output") or ".")
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[args.command](cfg, out, args.threads)
    except (ConfigError, DivisibilityViolation, ShapeMismatch, HypothesisViolation) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CertificateFailure as exc:
        print(f"certificate failure: {exc}", file=sys.stderr)
        return EXIT_CERTIFICATE
    except ChainBroken as exc:
        print(f"chain broken: {exc}", file=sys.stderr)
        return EXIT_CHAIN
    except (BlochLabError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        set_default_threads(None)


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
