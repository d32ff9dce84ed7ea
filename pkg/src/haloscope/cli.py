"""Batch entry points: simulate, analyze, plan, calibrate, allan.

Exit codes: 0 success, 2 configuration error, 3 provenance mismatch,
4 empty or degenerate data.  Outputs are written atomically (temp+rename)
and embed the config digest and seed.
"""

import argparse
import json
import math
import os
import sys
import tempfile

import numpy as np

from . import analysis as ana
from .axion import (G_GAMMA_DFSZ, G_GAMMA_KSVZ, axion_signal_power,
                    measurement_time, scan_rate, signal_photon_rate,
                    speedup, thermal_occupation)
from .calibration import (CalibrationFitError, RamseyObservation,
                          fit_dispersive, input_photon_flux,
                          operational_efficiency)
from .config import ConfigError, RunConfig, load_config
from .constants import photon_energy
from .protocol import ProtocolSchedule, ScheduleError, build_schedule
from .smpd import ClickStream, generate_click_stream, params_digest

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISMATCH = 3
EXIT_EMPTY = 4


def _verbose() -> bool:
    return os.environ.get("HALOSCOPE_VERBOSITY", "") not in ("", "0")


def _atomic_write(path: str, writer):
    """Write via a temp file in the target directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-haloscope-")
    os.close(fd)
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _load_run_config(args) -> RunConfig:
    cfg = load_config(path=args.config, preset=args.preset)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def cmd_simulate(args) -> int:
    try:
        cfg = _load_run_config(args)
    except (ConfigError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    if not os.path.isdir(out):
        print(f"output directory does not exist: {out}", file=sys.stderr)
        return EXIT_CONFIG

    schedule = build_schedule(cfg.smpd, cfg.plan,
                              n_super_cycles=cfg.simulation.n_super_cycles,
                              compression=cfg.simulation.time_compression)
    stream = generate_click_stream(
        schedule, cfg.smpd, cfg.truth,
        include_calibration_clicks=cfg.simulation.include_calibration_clicks)
    stream.meta["config_digest"] = cfg.digest()

    sched_path = os.path.join(out, "schedule.txt")
    stream_path = os.path.join(out, "stream.txt")
    _atomic_write(sched_path, schedule.to_text)
    _atomic_write(stream_path, stream.save_text)
    if args.binary:
        _atomic_write(os.path.join(out, "stream.npz"), stream.save_npz)

    acct = schedule.accounting()
    print(f"simulate: clicks={len(stream)} live_s={acct['detect_s']:.3f} "
          f"label0_live_s={acct['label0_detect_s']:.3f} "
          f"wall_s={acct['wall_s']:.3f} seed={cfg.seed} "
          f"digest={cfg.digest()}")
    if _verbose():
        print(json.dumps(acct, indent=2))
    return EXIT_OK


def _allan_block(windows) -> dict:
    """Allan-variance table for the on/off/difference rate series."""
    if len(windows) < 6:
        return {}
    base = windows[0].duration_s
    rate_c = np.array([w.n_c / w.duration_s for w in windows])
    rate_b = np.array([w.n_b / w.duration_s for w in windows])
    taus = ana.default_taus(base, len(windows))
    return {
        "base_tau_s": base,
        "taus_s": list(taus),
        "sigma2_on": list(ana.allan_variance(rate_c, taus, base)),
        "sigma2_off": list(ana.allan_variance(rate_b, taus, base)),
        "sigma2_diff": list(ana.allan_variance(rate_c - rate_b, taus, base)),
    }


def cmd_analyze(args) -> int:
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out
    if not os.path.isdir(out):
        print(f"output directory does not exist: {out}", file=sys.stderr)
        return EXIT_CONFIG

    schedule = ProtocolSchedule.from_text(args.schedule)
    stream = ClickStream.load_text(args.stream)

    want = stream.meta.get("params_digest")
    have = params_digest(cfg.smpd, cfg.truth)
    if want is not None and want != have:
        print(f"provenance mismatch: stream params digest {want} != "
              f"config {have}", file=sys.stderr)
        return EXIT_MISMATCH
    sched_digest = stream.meta.get("schedule_digest")
    if sched_digest is not None and sched_digest != schedule.digest():
        print(f"provenance mismatch: stream schedule digest {sched_digest} "
              f"!= {schedule.digest()}", file=sys.stderr)
        return EXIT_MISMATCH

    windows = ana.bin_counts(stream, schedule)
    total = sum(w.n_c + w.n_b for w in windows)
    if total == 0:
        print("no detect-phase clicks", file=sys.stderr)
        return EXIT_EMPTY

    bias = ana.estimate_bias(windows)
    k_b = cfg.analysis.k_b_fixed if cfg.analysis.k_b_policy == "fixed" else bias
    result = ana.exclusion_curve(
        windows, cfg.haloscope, eta=cfg.smpd.eta0, k_b=k_b,
        dt_m_s=cfg.analysis.dt_m_s, cl=cfg.analysis.cl,
        discovery_sigma=cfg.analysis.discovery_sigma,
        time_compression=cfg.simulation.time_compression)

    speed_mhz_day = result.scan_speed_mhz_per_day
    summary = {
        "config_digest": cfg.digest(),
        "seed": cfg.seed,
        "n_windows": len(windows),
        "total_counts": total,
        "estimated_bias": bias,
        "k_b_used": k_b,
        "scan_speed_mhz_per_day": speed_mhz_day,
        "discoveries": [{"nu_hz": nu, "significance": s}
                        for nu, s in result.discoveries],
        "g_limits_gev_inv": [p.g_limit_gev_inv for p in result.points],
        "allan": _allan_block(windows),
    }
    _atomic_write(os.path.join(out, "exclusion.txt"),
                  lambda p: ana.save_exclusion_text(result, p))
    _atomic_write(os.path.join(out, "summary.json"),
                  lambda p: _dump_json(summary, p))
    print(f"analyze: windows={len(windows)} counts={total} bias={bias:.4f} "
          f"points={len(result.points)} "
          f"scan_speed={speed_mhz_day:.3f} MHz/day "
          f"discoveries={len(result.discoveries)}")
    return EXIT_OK


def _dump_json(obj, path):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2)
        fh.write("\n")


def cmd_plan(args) -> int:
    try:
        cfg = _load_run_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    h = cfg.haloscope
    det = cfg.smpd.detector_figures(h.nu_c_hz, q_a=h.q_a)
    gains = speedup(det, h.cavity_linewidth_hz)
    n_sys = photon_energy(h.nu_c_hz)   # SQL-equivalent noise quanta
    lines = {
        "nu_c_hz": h.nu_c_hz,
        "n_th_20mk": thermal_occupation(h.nu_c_hz, 0.020),
        "p_signal_ksvz_w": axion_signal_power(h.replace(g_gamma=G_GAMMA_KSVZ)),
        "p_signal_dfsz_w": axion_signal_power(h.replace(g_gamma=G_GAMMA_DFSZ)),
        "rate_ksvz_s": signal_photon_rate(h.replace(g_gamma=G_GAMMA_KSVZ)),
        "gamma_dc_s": det.gamma_dc_s,
        "speedup_R": gains["R"],
        "speedup_R_thermal": gains["R_thermal"],
        "t_counter_snr2_s": measurement_time(
            "counter", axion_signal_power(h), h.nu_c_hz, 2.0, det),
        "scan_rate_hz_per_s": scan_rate(h, snr_target=2.0, n_sys_j=n_sys),
    }
    span = args.span_hz if args.span_hz is not None else cfg.plan.span_hz
    if span > 0:
        lines["span_hz"] = span
        lines["span_days_at_sql_noise"] = span / lines["scan_rate_hz_per_s"] / 86400.0
    else:
        lines["span_hz"] = 0.0
    print("plan:")
    for key, val in lines.items():
        print(f"  {key} = {val:.6g}" if isinstance(val, float) else
              f"  {key} = {val}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    try:
        table = np.loadtxt(args.observations)
    except OSError as exc:
        print(f"cannot read observations: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if table.ndim != 2 or table.shape[1] != 5:
        print("observations must have 5 columns: delta_hz domega_hz "
              "dgamma_hz err_domega err_dgamma", file=sys.stderr)
        return EXIT_CONFIG
    obs = [RamseyObservation(*row) for row in table]
    try:
        fit = fit_dispersive(obs, nu0_hz=args.nu0_hz, kappa_l_hz=args.kappa_l_hz)
    except (CalibrationFitError, ValueError) as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_EMPTY
    flux = input_photon_flux(fit.params)
    report = {
        "kappa_hz": fit.params.kappa_hz, "kappa_err_hz": fit.kappa_err_hz,
        "chi_hz": fit.params.chi_hz, "chi_err_hz": fit.chi_err_hz,
        "epsilon_hz": fit.params.epsilon_hz, "epsilon_err_hz": fit.epsilon_err_hz,
        "chi2_reduced": fit.chi2_reduced,
        "covariance": [list(row) for row in fit.covariance],
        "flux_s": flux["flux_s"], "power_w": flux["power_w"],
    }
    if args.rate_on_s is not None and args.rate_off_s is not None:
        eta, err = operational_efficiency(args.rate_on_s, args.rate_off_s,
                                          flux["flux_s"],
                                          flux_err_s=args.flux_err_s or 0.0)
        report["eta"] = eta
        report["eta_err"] = err
    if args.out:
        _atomic_write(args.out, lambda p: _dump_json(report, p))
    print("calibrate:")
    for key in ("kappa_hz", "chi_hz", "epsilon_hz", "flux_s", "power_w"):
        print(f"  {key} = {report[key]:.6g}")
    if "eta" in report:
        print(f"  eta = {report['eta']:.4f} +- {report['eta_err']:.4f}")
    return EXIT_OK


def cmd_allan(args) -> int:
    schedule = ProtocolSchedule.from_text(args.schedule)
    stream = ClickStream.load_text(args.stream)
    windows = ana.bin_counts(stream, schedule, check_digest=False)
    if sum(w.n_c + w.n_b for w in windows) == 0:
        print("no detect-phase clicks", file=sys.stderr)
        return EXIT_EMPTY
    block = _allan_block(windows)
    if not block:
        print("too few windows for an Allan table", file=sys.stderr)
        return EXIT_EMPTY
    if args.out:
        _atomic_write(args.out, lambda p: _dump_json(block, p))
    print("allan: tau_s sigma2_on sigma2_off sigma2_diff")
    for i, tau in enumerate(block["taus_s"]):
        print(f"  {tau:.3f} {block['sigma2_on'][i]:.6e} "
              f"{block['sigma2_off'][i]:.6e} {block['sigma2_diff'][i]:.6e}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="haloscope",
        description="photon-counting haloscope simulator and analysis")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON run config")
        p.add_argument("--preset", default="paper2024")
        p.add_argument("--seed", type=int, default=None)

    p_sim = sub.add_parser("simulate", help="generate a click stream")
    common(p_sim)
    p_sim.add_argument("--out", required=True, help="output directory")
    p_sim.add_argument("--binary", action="store_true",
                       help="also write a compact npz stream")
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="run the full inference chain")
    common(p_ana)
    p_ana.add_argument("--stream", required=True)
    p_ana.add_argument("--schedule", required=True)
    p_ana.add_argument("--out", required=True)
    p_ana.set_defaults(func=cmd_analyze)

    p_plan = sub.add_parser("plan", help="projected sensitivity and speed")
    common(p_plan)
    p_plan.add_argument("--span-hz", type=float, default=None)
    p_plan.set_defaults(func=cmd_plan)

    p_cal = sub.add_parser("calibrate", help="dispersive calibration fits")
    p_cal.add_argument("--observations", required=True,
                       help="5-column table: delta domega dgamma errs")
    p_cal.add_argument("--nu0-hz", type=float, default=7.3693e9)
    p_cal.add_argument("--kappa-l-hz", type=float, default=0.0)
    p_cal.add_argument("--rate-on-s", type=float, default=None)
    p_cal.add_argument("--rate-off-s", type=float, default=None)
    p_cal.add_argument("--flux-err-s", type=float, default=None)
    p_cal.add_argument("--out", default=None)
    p_cal.set_defaults(func=cmd_calibrate)

    p_all = sub.add_parser("allan", help="Allan-variance table of a stream")
    p_all.add_argument("--stream", required=True)
    p_all.add_argument("--schedule", required=True)
    p_all.add_argument("--out", default=None)
    p_all.set_defaults(func=cmd_allan)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScheduleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
