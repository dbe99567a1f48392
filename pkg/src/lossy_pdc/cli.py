"""Command-line entry point: ``python -m lossy_pdc <command> --config FILE``."""

from __future__ import annotations

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, dump_toml, load_config, parse_override, replace_path
from .gaussian import CorrelationState
from .inversion import (
    AmbiguityError,
    ForwardModel,
    InversionSettings,
    NoIntersectionError,
    build_forward_grid,
    calibrate_gamma,
    invert_losses,
    isolines,
    lossless_photons,
)
from .measurement import (
    GainTooLowError,
    field_amplitudes,
    g2_click_value,
    g2_moment_value,
    hom_scan,
    jsi,
    spectrum,
    summary,
    temporal_intensity,
    walkoff_delay,
)
from .output import dumps, write_csv, write_json, write_matrix_csv
from .physics import DomainError, Setup
from .propagation import IntegratorConfig, propagate

OUT_ENV = "LOSSY_PDC_OUT"

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_NO_INTERSECTION, EXIT_AMBIGUOUS = 0, 2, 3, 4, 5


def resolve_gamma(cfg: RunConfig) -> float:
    g = cfg.waveguide.gamma_per_m
    if isinstance(g, str):
        return calibrate_gamma(cfg.physics, cfg.integrator_config(), cfg.calibrate.target_photons)
    return float(g)


def _meta(cfg: RunConfig, setup: Setup, extra: Optional[dict] = None) -> dict:
    grid = setup.grid
    meta = {
        "config_hash": cfg.fingerprint(),
        "code_version": __version__,
        "grid_omega_0": grid.omega_0,
        "grid_delta_omega": grid.delta_omega,
        "grid_n_points": grid.n_points,
        "gamma_per_m": setup.waveguide.gamma,
        "frame": "retarded",
        "alpha_s_db_cm": cfg.waveguide.alpha_s_db_cm,
        "alpha_i_db_cm": cfg.waveguide.alpha_i_db_cm,
    }
    meta.update(extra or {})
    return meta


def _run(cfg: RunConfig, gamma: Optional[float] = None) -> tuple[Setup, CorrelationState]:
    setup = cfg.physics.build_setup(resolve_gamma(cfg) if gamma is None else gamma)
    return setup, propagate(setup, cfg.integrator_config(), frame="retarded")


def _hom(cfg: RunConfig, setup: Setup, state: CorrelationState):
    h = cfg.hom
    taus = np.linspace(h.tau_min_ps, h.tau_max_ps, h.points) * 1e-12
    if h.delay_reference == "half-walkoff":
        offset = 0.5 * walkoff_delay(setup)
    elif h.delay_reference == "none":
        offset = 0.0
    else:
        offset = float(h.delay_reference) * 1e-12
    return hom_scan(state, taus, delay_offset=offset), offset


def _hom_summary(scan, offset) -> dict:
    flat = not scan.plateau > 0
    return {
        "delay_offset_ps": offset * 1e12,
        "peak": scan.peak,
        "plateau": scan.plateau,
        "visibility": scan.visibility,
        "dip_center_ps": None if flat else scan.dip_center_ps,
        "dip_fwhm_ps": None if flat else scan.dip_fwhm_ps,
    }


def simulate_outputs(cfg: RunConfig, out: Path, gamma: Optional[float] = None, with_hom: bool = False) -> dict:
    setup, state = _run(cfg, gamma)
    meta = _meta(cfg, setup)
    spec = spectrum(state)
    write_csv(out / "spectrum.csv", ["detuning_thz", "signal_occupation", "idler_occupation"],
              zip(spec.detuning_thz, spec.signal_occupation, spec.idler_occupation), meta)
    write_matrix_csv(out / "jsi.csv", "signal_detuning_thz\\idler_detuning_thz",
                     spec.detuning_thz, spec.detuning_thz, jsi(state), meta)
    o = cfg.output
    times = np.linspace(o.temporal_min_ps, o.temporal_max_ps, o.temporal_points) * 1e-12
    prof = temporal_intensity(state, times, field_amplitudes(setup)).normalized()
    write_csv(out / "temporal.csv", ["time_ps", "signal", "idler"],
              zip(prof.times * 1e12, prof.signal, prof.idler),
              {**meta, "time_origin": "pump-retarded", "normalization": "idler peak"})
    hom = None
    if with_hom:
        hom, offset = _hom(cfg, setup, state)
        _write_hom(out, hom, offset, meta)
    result = {"gamma_per_m": setup.waveguide.gamma, "N_total": state.total_photons()}
    result.update(summary(state, hom))
    write_json(out / "summary.json", result)
    return result


def _write_hom(out: Path, scan, offset, meta):
    norm = scan.normalized() if scan.plateau > 0 else np.zeros_like(scan.p_cd)
    write_csv(out / "hom.csv", ["tau_ps", "p_cd", "p_c", "p_d", "p_cd_normalized"],
              zip(scan.tau_ps, scan.p_cd, scan.p_c, scan.p_d, norm),
              {**meta, "delay_offset_ps": offset * 1e12})
    write_json(out / "hom_summary.json", _hom_summary(scan, offset))


def cmd_simulate(cfg: RunConfig, out: Path, args) -> dict:
    return simulate_outputs(cfg, out)


def cmd_hom(cfg: RunConfig, out: Path, args) -> dict:
    setup, state = _run(cfg)
    scan, offset = _hom(cfg, setup, state)
    _write_hom(out, scan, offset, _meta(cfg, setup))
    return _hom_summary(scan, offset)


def g2_report(state: CorrelationState) -> dict:
    report = {}
    for sub in ("signal", "idler"):
        try:
            click = g2_click_value(state, sub)
        except GainTooLowError:
            click = None
        try:
            moment = g2_moment_value(state, sub)
        except DomainError:
            moment = None
        report[sub] = {"click": click, "moment": moment}
    return report


def cmd_g2(cfg: RunConfig, out: Path, args) -> dict:
    setup, state = _run(cfg)
    result = {"gamma_per_m": setup.waveguide.gamma, **g2_report(state)}
    write_json(out / "g2.json", result)
    return result


def cmd_calibrate(cfg: RunConfig, out: Path, args) -> dict:
    integ = cfg.integrator_config()
    target = cfg.calibrate.target_photons
    gamma = calibrate_gamma(cfg.physics, integ, target)
    verified = lossless_photons(cfg.physics, integ, gamma) if gamma > 0 else 0.0
    calibrated = replace_path(cfg, {"waveguide.gamma_per_m": gamma})
    (out).mkdir(parents=True, exist_ok=True)
    (out / "calibrated.toml").write_text(dump_toml(calibrated), encoding="utf-8")
    result = {"gamma_per_m": gamma, "target_photons": target, "verified_photons": verified,
              "relative_error": (verified / target - 1.0) if target > 0 else 0.0}
    write_json(out / "calibration.json", result)
    return result


def inversion_models(cfg: RunConfig) -> tuple[ForwardModel, ForwardModel]:
    """(grid model at reduced resolution, refinement model at the configured resolution).

    Each resolution gets its own gamma so both produce the same lossless photon number.
    """
    inv = cfg.invert
    integ = cfg.integrator_config()
    if isinstance(cfg.waveguide.gamma_per_m, str):
        target = cfg.calibrate.target_photons
        gamma_full = calibrate_gamma(cfg.physics, integ, target)
    else:
        gamma_full = float(cfg.waveguide.gamma_per_m)
        target = lossless_photons(cfg.physics, integ, gamma_full)
    coarse_phys = cfg.physics.with_grid(inv.grid_n_points)
    coarse_integ = IntegratorConfig(inv.grid_steps, "rk4")
    if (inv.grid_n_points, inv.grid_steps) == (cfg.grid.n_points, cfg.integrator.steps):
        gamma_coarse = gamma_full
    else:
        gamma_coarse = calibrate_gamma(coarse_phys, coarse_integ, target)
    return (ForwardModel(coarse_phys, coarse_integ, gamma_coarse, inv.g2_definition),
            ForwardModel(cfg.physics, integ, gamma_full, inv.g2_definition))


def cmd_invert(cfg: RunConfig, out: Path, args) -> dict:
    inv = cfg.invert
    if inv.g2_s is None or inv.g2_i is None:
        raise ConfigError("invert.g2_s and invert.g2_i are required")
    coarse, fine = inversion_models(cfg)
    cache = inv.cache_dir or str(out / "cache")
    grid = build_forward_grid(coarse, (0.0, inv.alpha_max_db_cm), (-inv.r_max, inv.r_max),
                              (inv.alpha_points, inv.r_points), jobs=args.jobs, cache_dir=cache)
    if inv.export_isolines:
        write_json(out / "isolines.json",
                   isolines(grid, {"g2_s": inv.g2_s, "g2_i": inv.g2_i, "r_n": inv.r_n}))
    settings = InversionSettings(tol=inv.g2_tolerance, measurement_error=inv.measurement_error,
                                 r_n_tolerance=inv.r_n_tolerance, max_iterations=inv.max_iterations)
    estimate = invert_losses(fine, grid, inv.g2_s, inv.g2_i, inv.r_n, settings)
    result = {"measured": {"g2_s": inv.g2_s, "g2_i": inv.g2_i, "r_n": inv.r_n}, **estimate.to_json()}
    write_json(out / "loss_estimate.json", result)
    return result


def _sweep_points(cfg: RunConfig) -> list[tuple[float, float]]:
    sw = cfg.sweep
    if sw.alphas_db_cm is not None:
        if sw.alpha_bar_db_cm is not None or sw.r is not None:
            raise ConfigError("sweep takes either alphas_db_cm or alpha_bar_db_cm with r, not both")
        return [(a, a) for a in sw.alphas_db_cm]
    if sw.alpha_bar_db_cm is None or sw.r is None:
        raise ConfigError("sweep needs alphas_db_cm, or alpha_bar_db_cm and r")
    pts = []
    for a in sw.alpha_bar_db_cm:
        for r in sw.r:
            if not abs(r) < 1:
                raise ConfigError("sweep.r values must satisfy |r| < 1")
            pts.append((a * (1 + r), a * (1 - r)))
    return pts


def _sweep_job(job):
    cfg, gamma, point, out = job
    sub = replace_path(cfg, {"waveguide.alpha_s_db_cm": point[0], "waveguide.alpha_i_db_cm": point[1]})
    return simulate_outputs(sub, Path(out), gamma, with_hom=cfg.sweep.hom)


def point_dirname(alpha_s: float, alpha_i: float) -> str:
    return f"as_{alpha_s:.6g}_ai_{alpha_i:.6g}"


def cmd_sweep(cfg: RunConfig, out: Path, args) -> dict:
    points = _sweep_points(cfg)
    if any(a < 0 for p in points for a in p):
        raise ConfigError("sweep produces negative losses")
    gamma = resolve_gamma(cfg)
    jobs = [(cfg, gamma, p, str(out / point_dirname(*p))) for p in points]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    keys = list(results[0].keys()) if results else []
    write_csv(out / "sweep.csv", ["alpha_s_db_cm", "alpha_i_db_cm"] + keys,
              ([p[0], p[1]] + [r[k] for k in keys] for p, r in zip(points, results)),
              {"config_hash": cfg.fingerprint(), "code_version": __version__, "gamma_per_m": gamma})
    return {"gamma_per_m": gamma,
            "points": [{"alpha_s_db_cm": p[0], "alpha_i_db_cm": p[1], "dir": point_dirname(*p), **r}
                       for p, r in zip(points, results)]}


COMMANDS = {
    "simulate": cmd_simulate,
    "hom": cmd_hom,
    "g2": cmd_g2,
    "invert": cmd_invert,
    "calibrate": cmd_calibrate,
    "sweep": cmd_sweep,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lossy_pdc", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="TOML or JSON run configuration")
    parser.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./out)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for grids and sweeps")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value by dotted path; repeatable")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out or os.environ.get(OUT_ENV) or "out")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        overrides = dict(parse_override(item) for item in args.overrides)
        cfg = load_config(args.config, overrides)
        result = COMMANDS[args.command](cfg, out, args)
    except NoIntersectionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_INTERSECTION
    except AmbiguityError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_AMBIGUOUS
    except (ConfigError, DomainError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ArithmeticError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    sys.stdout.write(dumps(result))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
