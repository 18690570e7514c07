"""Command-line entry point: ``gemsim <command> [options]``.

Exit codes: 0 success, 2 validation error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from gemsim import analysis, imaging
from gemsim.config import RunConfig, load_config, require_recall
from gemsim.errors import ConfigError, DomainError, NumericalInstabilityError
from gemsim.io import (
    atomic_write_text,
    csv_text,
    read_csv,
    read_series,
    write_csv,
    write_json,
    write_keyvalue,
    write_matrix_csv,
)
from gemsim.model import (
    RB87_MASS,
    EfficiencyReport,
    efficiency_report,
    memory_bandwidth,
    raman_exponent,
)
from gemsim.solver import (
    echo_efficiency,
    leakage_fraction,
    raman_line_scan,
    run_storage_recall,
    sweep_storage_time,
)

log = logging.getLogger("gemsim")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4


class InputFileError(OSError):
    """An input file exists but could not be parsed."""


def _load(reader, path):
    try:
        return reader(path)
    except (ValueError, IndexError) as exc:
        msg = str(exc)
        raise InputFileError(msg if str(path) in msg else f"{path}: {msg}") from None


def _config(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required for this command")
    cfg = load_config(args.config[0] if isinstance(args.config, list) else args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _out(args, name) -> Path:
    return Path(args.out_dir) / name


# ------------------------------------------------------------------ simulate


def measured_report(result, cfg: RunConfig) -> EfficiencyReport:
    leak = leakage_fraction(result)
    eps_t = echo_efficiency(result)
    eps_s = max(0.0, 1.0 - leak)
    recall = min(1.0, eps_t / eps_s) if eps_s > 0 else 0.0
    delay = result.echo_peak_time or 0.0
    bandwidth = memory_bandwidth(cfg.schedule.eta_write, cfg.ensemble.length)
    return EfficiencyReport(
        storage_efficiency=eps_s,
        recall_efficiency=recall,
        total_efficiency=min(eps_t, eps_s),
        leakage_fraction=min(leak, 1.0),
        delay_bandwidth_product=delay * bandwidth,
    )


def cmd_simulate(args) -> int:
    cfg = _config(args)
    require_recall(cfg, args.config[0])
    grid = cfg.simulation_grid()
    result = run_storage_recall(
        cfg.ensemble, cfg.line, cfg.coupling, cfg.pulse, cfg.schedule, cfg.decoherence, grid
    )
    out = result.probe_out
    if args.noise:
        rng = np.random.default_rng(cfg.seed)
        scale = args.noise * abs(cfg.pulse.peak_amplitude)
        out = out + scale * (rng.standard_normal(len(out)) + 1j * rng.standard_normal(len(out)))
    rows = zip(result.times, out.real, out.imag, np.abs(out) ** 2)
    traces = csv_text(["time_s", "re_field", "im_field", "intensity"], rows)

    write_bw = memory_bandwidth(cfg.schedule.eta_write, cfg.ensemble.length)
    read_bw = memory_bandwidth(cfg.schedule.eta_read, cfg.ensemble.length)
    rate = cfg.decoherence.storage_rate
    tau = 1.0 / rate if rate > 0 else math.inf
    storage_time = 2 * cfg.schedule.switch_time
    analytic = efficiency_report(
        cfg.ensemble, cfg.line, cfg.coupling, write_bw, tau, storage_time, read_bw
    ) if cfg.coupling.one_photon_detuning else None
    measured = measured_report(result, cfg)
    report = {
        "seed": cfg.seed,
        "label": cfg.label,
        "measured": measured.to_dict(),
        "analytic": analytic.to_dict() if analytic else None,
        "write_exponent": (
            raman_exponent(cfg.ensemble, cfg.line, cfg.coupling, write_bw)
            if cfg.coupling.one_photon_detuning else 0.0
        ),
        "energies": {
            "input": result.input_energy,
            "leak": result.leak_energy,
            "echo": result.echo_energy,
            "residual": result.residual_energy,
        },
        "echo_peak_time_s": result.echo_peak_time,
        "expected_echo_time_s": cfg.schedule.predicted_echo_time(),
        "grid": {"n_z": grid.n_z, "dt_s": grid.dt, "t_end_s": grid.t_end},
        "noise": args.noise,
        "config": cfg.to_dict(),
    }
    traces_path = Path(cfg.output.get("traces_csv") or _out(args, "traces.csv"))
    report_path = Path(cfg.output.get("report_json") or _out(args, "report.json"))
    atomic_write_text(traces_path, traces)
    if cfg.output.get("spacetime_csv"):
        write_matrix_csv(cfg.output["spacetime_csv"], np.abs(result.spin_field) ** 2)
    write_json(report_path, report)
    print(
        f"leakage={measured.leakage_fraction:.6f} "
        f"total_efficiency={measured.total_efficiency:.6f} "
        f"echo_peak_time_s={result.echo_peak_time}"
    )
    return EXIT_OK


# --------------------------------------------------------------------- sweep


def _ts_list(text):
    try:
        values = [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad --ts-list {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError("--ts-list needs positive times in seconds")
    return values


def cmd_sweep(args) -> int:
    if not args.config:
        raise ConfigError("--config is required for this command")
    rows, fits = [], []
    for idx, path in enumerate(args.config):
        cfg = load_config(path)
        require_recall(cfg, path)
        n_z = int(cfg.grid.get("n_z", 256))
        points = sweep_storage_time(
            cfg.ensemble, cfg.line, cfg.coupling, cfg.pulse, cfg.schedule,
            cfg.decoherence, args.ts_list, n_z=n_z, threads=args.threads,
        )
        for p in points:
            rows.append((
                idx, p.switch_time, p.storage_time, p.efficiency,
                math.log10(p.storage_time),
                math.log10(p.efficiency) if p.efficiency > 0 else math.nan,
            ))
        entry = {"label": cfg.label or Path(path).stem, "label_index": idx, "config": str(path)}
        if len(points) >= 3:
            fit = analysis.fit_exponential_decay(
                [p.storage_time for p in points], [p.efficiency for p in points]
            )
            entry["fit"] = fit.to_dict()
            entry["tau_s"] = fit["tau"]
        else:
            entry["fit"] = None
        fits.append(entry)
    header = [
        "label_index", "switch_time_s", "storage_time_s", "efficiency",
        "log10_storage_time", "log10_efficiency",
    ]
    write_csv(_out(args, "sweep.csv"), header, rows)
    write_json(_out(args, "sweep_report.json"), {"seed": args.seed or 0, "curves": fits})
    for f in fits:
        print(f"{f['label']}: tau_s={f.get('tau_s')}")
    return EXIT_OK


# ---------------------------------------------------------------- raman-scan


def cmd_raman_scan(args) -> int:
    cfg = _config(args)
    etas = {"write": cfg.schedule.eta_write, "read": cfg.schedule.eta_read}
    widest = max(memory_bandwidth(e, cfg.ensemble.length) for e in etas.values())
    span = args.span_hz or 3 * widest
    scans = {
        k: raman_line_scan(
            cfg.ensemble, cfg.line, cfg.coupling, eta, span, args.n_points, args.linewidth_hz
        )
        for k, eta in etas.items()
    }
    det = scans["write"].detuning
    rows = zip(
        det,
        scans["write"].absorbed_fraction, scans["write"].optical_depth,
        scans["read"].absorbed_fraction, scans["read"].optical_depth,
    )
    header = ["detuning_hz", "absorbed_write", "od_write", "absorbed_read", "od_read"]
    report = {
        "seed": cfg.seed,
        **{
            f"{k}_{name}": value
            for k, s in scans.items()
            for name, value in (
                ("fwhm_hz", s.fwhm()),
                ("peak_od", s.peak_od),
                ("peak_absorption", s.peak_absorption),
                ("bandwidth_hz", memory_bandwidth(s.eta, cfg.ensemble.length)),
            )
        },
    }
    write_csv(_out(args, "raman_scan.csv"), header, rows)
    write_json(_out(args, "raman_scan.json"), report)
    print(f"fwhm_write_hz={report['write_fwhm_hz']:.6g} fwhm_read_hz={report['read_fwhm_hz']:.6g}")
    return EXIT_OK


# ------------------------------------------------------------------- imaging


def cmd_odmap(args) -> int:
    pair = _load(
        lambda p: imaging.load_pair(p, args.reference, args.meta), args.transmitted
    )
    od = imaging.od_map(pair, intensity_floor=args.floor)
    profile = imaging.averaged_cross_section(od, "x", min(args.n_slices, od.od.shape[0]))
    report = {
        "seed": args.seed or 0,
        "shape": list(od.od.shape),
        "masked_pixels": int(od.mask.sum()),
        "peak_od": float(np.nanmax(od.od)) if (~od.mask).any() else None,
        "detuning_hz": pair.detuning,
        "pixel_pitch_m": pair.pixel_pitch,
    }
    try:
        report["cloud"] = imaging.cloud_widths(od).to_dict()
    except DomainError as exc:
        report["cloud"] = None
        report["cloud_error"] = str(exc)
    x = np.arange(len(profile)) * pair.pixel_pitch
    write_matrix_csv(_out(args, "od_map.csv"), od.od)
    write_csv(_out(args, "od_profile.csv"), ["x_m", "od"], zip(x, profile))
    write_json(_out(args, "od_report.json"), report)
    print(f"peak_od={report['peak_od']} masked={report['masked_pixels']}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    det, od = _load(read_series, args.scan)
    cal = imaging.calibrate_line_center(det, od)
    report = {"seed": args.seed or 0, **cal.to_dict()}
    write_json(_out(args, "calibration.json"), report)
    print(f"center_offset_hz={cal.center_offset:.6g} fwhm_hz={cal.fwhm:.6g}")
    if not cal.well_conditioned:
        log.error("scan is poorly conditioned (peak not bracketed)")
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_temperature(args) -> int:
    t, sigma = _load(read_series, args.widths)
    res = analysis.temperature_from_expansion(t, sigma, args.mass_kg)
    write_json(_out(args, "temperature.json"), {"seed": args.seed or 0, **res.to_dict()})
    print(f"temperature_k={res.temperature:.6g} sigma0_m={res.sigma0:.6g}")
    return EXIT_OK if res.physical else EXIT_NUMERICAL


def cmd_decay_fit(args) -> int:
    t, y = _load(read_series, args.series)
    fit = analysis.fit_exponential_decay(t, y, weighted=args.log_weighted)
    report = {"seed": args.seed or 0, "exponential": fit.to_dict()}
    if args.compare_gaussian:
        g = analysis.fit_gaussian_decay(t, y)
        report["gaussian"] = g.to_dict()
        # both residuals in log units: a much smaller quadratic residual
        # points to Gaussian (motional) dephasing
        report["log_linear_residual"] = analysis.log_linear_residual(t, y)
    write_json(_out(args, "decay_fit.json"), report)
    write_keyvalue(_out(args, "decay_fit.txt"), {
        "tau_s": fit["tau"], "amplitude": fit["amplitude"],
        "converged": fit.converged, "residual_norm": fit.residual_norm,
        "excluded": fit.excluded,
    })
    print(f"tau_s={fit['tau']:.6g} converged={fit.converged}")
    return EXIT_OK if fit.converged else EXIT_NUMERICAL


def cmd_demod(args) -> int:
    records, times = [], None
    for path in args.records:
        t, v = _load(read_series, path)
        if len(t) < 2:
            raise InputFileError(f"{path}: need at least two samples")
        rate = 1.0 / float(np.median(np.diff(t)))
        records.append(analysis.HeterodyneRecord(v, rate, args.if_hz))
        if times is None:
            times = t
        elif len(t) != len(times):
            raise DomainError(f"{path}: record length differs from {args.records[0]}")
    env = analysis.demodulate_traces(records, args.phase_rad, args.cutoff_hz, args.order)
    write_csv(_out(args, "envelope.csv"), ["t_s", "intensity"], zip(times, env))
    write_json(_out(args, "demod_report.json"), {
        "seed": args.seed or 0, "n_records": len(records), "order": args.order,
        "intermediate_frequency_hz": args.if_hz,
        "lowpass_cutoff_hz": args.cutoff_hz or args.if_hz / 5,
        "peak_intensity": float(env.max()),
    })
    print(f"records={len(records)} peak_intensity={env.max():.6g}")
    return EXIT_OK


def cmd_plot(args) -> int:
    from gemsim.plotting import render_svg

    if args.format != "svg":
        raise ConfigError("only --format svg is supported")
    _load(read_csv, args.csv)
    svg = render_svg(args.csv, loglog=args.loglog, title=args.title)
    target = Path(args.output) if args.output else _out(args, Path(args.csv).stem + ".svg")
    atomic_write_text(target, svg)
    print(str(target))
    return EXIT_OK


# --------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", action="append", help="run configuration JSON")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--threads", type=int, default=1, help="worker threads for sweeps")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="gemsim", description="Gradient echo memory simulation and MOT analysis."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="run one storage/recall simulation")
    p.add_argument("--noise", type=float, default=0.0,
                   help="detector noise std on the output field, relative to the pulse peak")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", parents=[common], help="efficiency against storage time")
    p.add_argument("--ts-list", type=_ts_list, required=True,
                   help="comma-separated switch times in seconds")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("raman-scan", parents=[common], help="broadened Raman absorption lines")
    p.add_argument("--span-hz", type=float, default=None)
    p.add_argument("--n-points", type=int, default=801)
    p.add_argument("--linewidth-hz", type=float, default=1e3)
    p.set_defaults(func=cmd_raman_scan)

    p = sub.add_parser("odmap", parents=[common], help="optical-depth map from an image pair")
    p.add_argument("transmitted")
    p.add_argument("reference")
    p.add_argument("--meta", default=None, help="sidecar JSON (default: <transmitted>.json)")
    p.add_argument("--floor", type=float, default=0.0, help="transmitted-count mask floor")
    p.add_argument("--n-slices", type=int, default=10)
    p.set_defaults(func=cmd_odmap)

    p = sub.add_parser("calibrate", parents=[common], help="line centre from an OD scan CSV")
    p.add_argument("scan", help="CSV of detuning_hz, peak_od")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("temperature", parents=[common], help="temperature from cloud widths")
    p.add_argument("widths", help="CSV of t_s, sigma_m")
    p.add_argument("--mass-kg", type=float, default=RB87_MASS)
    p.set_defaults(func=cmd_temperature)

    p = sub.add_parser("decay-fit", parents=[common], help="exponential decay fit")
    p.add_argument("series", help="CSV of t_s, value")
    p.add_argument("--log-weighted", action="store_true")
    p.add_argument("--compare-gaussian", action="store_true")
    p.set_defaults(func=cmd_decay_fit)

    p = sub.add_parser("demod", parents=[common], help="demodulate heterodyne records")
    p.add_argument("records", nargs="+", help="CSV files of t_s, sample")
    p.add_argument("--if-hz", type=float, required=True)
    p.add_argument("--phase-rad", type=float, default=0.0)
    p.add_argument("--cutoff-hz", type=float, default=None)
    p.add_argument("--order", choices=("average-then-square", "square-then-average"),
                   default="average-then-square")
    p.set_defaults(func=cmd_demod)

    p = sub.add_parser("plot", parents=[common], help="render a CSV as SVG")
    p.add_argument("csv")
    p.add_argument("--format", default="svg")
    p.add_argument("--loglog", action="store_true")
    p.add_argument("--title", default="")
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except NumericalInstabilityError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (ConfigError, DomainError) as exc:
        log.error("validation error: %s", exc)
        return EXIT_VALIDATION
    except OSError as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
