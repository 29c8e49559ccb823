"""Command-line batch pipeline: ``ponderomotive <command> --config run.toml``.

Every command reads one TOML config (rates in Hz), applies ``--set`` overrides
and writes plot-ready CSV files into ``--out``.  Exit status encodes the
class of failure so scripts can tell a bad config from an unstable model.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io
from .fitting import (FitError, FitProblem, RawTraceSet, RingdownData, fit, fit_per_window,
                      normalize_trace, ringdown_fit)
from .model import DegenerateDenominatorError, ModelError, desk_model
from .oracle import (InsufficientDataError, TimeStepError, UnstableModelError,
                     frequency_psd_exact, langevin_simulate, max_time_step,
                     stochastic_comparison)
from .spectra import (Quantity, SpectrumTrace, correct_for_losses, default_windows,
                      model_hash, optimal_from_components, output_components, spectrum_trace,
                      squeezing_level_db)
from .sweeps import SweepPlan, run_sweep

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_MODEL = 5
EXIT_FIT = 6
EXIT_NUMERICS = 7
EXIT_CHECK_FAILED = 8

VOLATILE_PREFIX = "# created="


def strip_volatile(text: str) -> str:
    """Drop the timestamp line so two runs can be compared byte for byte."""
    return "".join(l for l in text.splitlines(keepends=True) if not l.startswith(VOLATILE_PREFIX))


def _stamp() -> dict:
    return {"created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")}


def _parse_window(text: str):
    try:
        a, b = (float(x) for x in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"window '{text}' is not f1_hz:f2_hz") from None
    if not b > a:
        raise argparse.ArgumentTypeError(f"window '{text}' is empty")
    return (a, b)


def _report_windows(args, doc, model):
    if args.window:
        return list(args.window)
    if "windows_hz" in doc.get("report", {}):
        return io.windows_from(doc["report"]["windows_hz"], "report.windows_hz")
    return [(lo / (2 * math.pi), hi / (2 * math.pi)) for lo, hi in default_windows(model)]


def _write(out: Path, name: str, trace: SpectrumTrace, seed=None) -> Path:
    meta = dict(_stamp())
    if seed is not None:
        meta["seed"] = seed
    path = out / name
    io.write_trace(path, trace, meta)
    return path


def _levels_lines(trace: SpectrumTrace, windows):
    lines = []
    for w in windows:
        try:
            lv = squeezing_level_db(trace, w)
            lines.append(f"  window {w[0]:.6g}-{w[1]:.6g} Hz: min {lv.min_db:+.3f} dB "
                         f"at {lv.freq_at_min:.9g} Hz")
        except ValueError as exc:
            lines.append(f"  window {w[0]:.6g}-{w[1]:.6g} Hz: {exc}")
    return lines


# ---------------------------------------------------------------------------
# commands


def cmd_spectrum(args, doc, model, out):
    freqs = io.grid_from_document(doc, model)
    outputs = doc.get("output", {})
    quantities = list(args.quantity or outputs.get("quantities",
                                                   ["direct_X", "phase_Y", "cross_ReXY"]))
    thetas = list(args.theta or outputs.get("thetas_rad", []))
    if thetas and "quadrature_theta" not in quantities:
        quantities.append("quadrature_theta")
    stage = args.stage or outputs.get("stage", "detected")
    windows = _report_windows(args, doc, model)
    for q in quantities:
        Quantity(q)
        if q == "quadrature_theta":
            if not thetas:
                raise io.ConfigError("quadrature_theta needs --theta or output.thetas_rad")
            for k, th in enumerate(thetas):
                tr = _staged(model, freqs, q, th, stage)
                _write(out, f"quadrature_theta_{k}.csv", tr)
                print(f"quadrature theta={tr.metadata['theta']:.6g} rad [{stage}]")
                print("\n".join(_levels_lines(tr, windows)))
            continue
        tr = _staged(model, freqs, q, None, stage)
        _write(out, f"{q}.csv", tr)
        print(f"{q} [{stage}]")
        if q not in ("cross_ReXY", "optimal_phase"):
            print("\n".join(_levels_lines(tr, windows)))
    return EXIT_OK


def _staged(model, freqs, quantity, theta, stage):
    if stage == "loss_corrected":
        tr = spectrum_trace(model, freqs, quantity, theta, stage="detected")
        if quantity in ("cross_ReXY", "optimal_phase"):
            raise io.ConfigError(f"{quantity} has no loss-corrected form")
        return correct_for_losses(tr, model.eta_det)
    return spectrum_trace(model, freqs, quantity, theta, stage=stage)


def cmd_optimal(args, doc, model, out):
    freqs = io.grid_from_document(doc, model)
    stage = args.stage or doc.get("output", {}).get("stage", "detected")
    env = _staged(model, freqs, "optimal", None, stage)
    phase = spectrum_trace(model, freqs, "optimal_phase", stage="cavity_output")
    _write(out, "optimal.csv", env)
    _write(out, "optimal_phase.csv", phase)
    print(f"optimal quadrature envelope [{stage}]")
    print("\n".join(_levels_lines(env, _report_windows(args, doc, model))))
    if phase.metadata.get("degenerate_points"):
        print(f"  {phase.metadata['degenerate_points']} grid points have an undefined optimal angle")
    return EXIT_OK


def _load_data(args):
    if args.trace:
        return io.read_trace(args.trace)
    if args.raw:
        t = io.read_table(args.raw)
        need = ("frequency_hz", "signal", "shot", "electronic")
        missing = [k for k in need if k not in t]
        if missing:
            raise io.ConfigError(f"raw trace file lacks column(s) {', '.join(missing)}")
        return normalize_trace(RawTraceSet(t["frequency_hz"], t["signal"], t["shot"],
                                           t["electronic"]))
    raise io.ConfigError("fit needs --raw <csv> or --trace <csv>")


def cmd_fit(args, doc, model, out):
    data = _load_data(args)
    section = doc.get("fit", {})
    if args.window:
        windows = list(args.window)
    elif "windows_hz" in section:
        windows = io.windows_from(section["windows_hz"], "fit.windows_hz")
    else:
        raise io.ConfigError("fit needs --window (repeatable) or fit.windows_hz")
    if len(windows) != len(model.modes):
        raise io.ConfigError(f"need one fit window per mode ({len(model.modes)}), got {len(windows)}")
    exclude = io.windows_from(section.get("exclude_hz", []), "fit.exclude_hz")
    bounds = {k: (2 * math.pi * lo, 2 * math.pi * hi)
              for k, (lo, hi) in section.get("bounds_hz", {}).items()}
    problem = FitProblem(data, model, windows, bounds=bounds, exclude=exclude,
                         max_iter=int(section.get("max_iter", 20000)))
    results = fit_per_window(problem) if section.get("per_window", False) else [fit(problem)]
    report = []
    for k, res in enumerate(results):
        if len(results) > 1:
            report.append(f"[window {k + 1}]")
        report.append(res.report())
        report.append(f"model_hash {model_hash(res.model)}")
        if res.fitted is not None:
            name = "fitted.csv" if len(results) == 1 else f"fitted_{k + 1}.csv"
            _write(out, name, res.fitted)
    text = "\n".join(report) + "\n"
    (out / "fit_report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_sweep(args, doc, model, out):
    s = doc.get("sweep")
    if not s:
        raise io.ConfigError("missing section [sweep]")
    windows = (list(args.window) if args.window else
               io.windows_from(s["windows_hz"], "sweep.windows_hz") if "windows_hz" in s else None)
    try:
        plan = SweepPlan(model, io._need(s, "parameter", "sweep"), io._need(s, "values", "sweep"),
                         io.grid_from_document(doc, model),
                         reference_power_mw=float(s.get("reference_power_mw", 1.0)),
                         input_power_mw=s.get("input_power_mw"),
                         quantity=(args.quantity or [s.get("quantity", "direct_X")])[0],
                         stage=s.get("stage", "detected"), windows_hz=windows)
    except ValueError as exc:
        raise io.ConfigError(f"[sweep]: {exc}") from None
    result = run_sweep(plan)
    n_modes = len(model.modes)
    n_win = len(windows) if windows else n_modes
    cols = {"value": [], "stable": []}
    for k in range(n_win):
        cols[f"min_db_{k + 1}"] = []
        cols[f"f_min_hz_{k + 1}"] = []
    for k in range(n_modes):
        cols[f"gamma_eff_hz_{k + 1}"] = []
    for i, p in enumerate(result.points):
        cols["value"].append(p.value)
        cols["stable"].append(p.stable and p.error is None)
        for k in range(n_win):
            lv = p.levels[k] if k < len(p.levels) else None
            cols[f"min_db_{k + 1}"].append(lv.min_db if lv else math.nan)
            cols[f"f_min_hz_{k + 1}"].append(lv.freq_at_min if lv else math.nan)
        for k in range(n_modes):
            g = p.gamma_eff[k] if k < len(p.gamma_eff) else math.nan
            cols[f"gamma_eff_hz_{k + 1}"].append(g / (2 * math.pi))
        if p.trace is not None:
            _write(out, f"sweep_{i:03d}.csv", p.trace)
        status = "ok" if p.stable and p.error is None else f"skipped ({p.error})"
        print(f"{plan.parameter}={p.value:.6g}: {status}")
    io.write_table(out / "sweep_summary.csv", cols,
                   [f"parameter={plan.parameter}", f"model_hash={model_hash(model)}"])
    return EXIT_OK


def cmd_oracle_check(args, doc, model, out):
    freqs = io.grid_from_document(doc, model)
    windows = _report_windows(args, doc, model)
    w_rad = [(2 * math.pi * a, 2 * math.pi * b) for a, b in windows]
    omega = 2 * math.pi * freqs
    inside = np.zeros(omega.shape, bool)
    for a, b in w_rad:
        inside |= (omega >= a) & (omega <= b)
    if not np.any(inside):
        raise io.ConfigError("no grid points inside the comparison windows")
    w = omega[inside]
    closed = output_components(model, w, w_rad, outside="error")
    exact = frequency_psd_exact(model, w)
    lines = [f"model_hash {model_hash(model)}", f"grid points compared {w.size}"]
    worst = 0.0
    for name, a, b in (("S_X", closed.sx, exact.sx), ("S_Y", closed.sy, exact.sy),
                       ("ReS_XY", closed.rxy, exact.rxy),
                       ("optimal", optimal_from_components(closed), optimal_from_components(exact))):
        scale = np.maximum(np.abs(b), 1e-300)
        dev = float(np.max(np.abs(a - b) / scale))
        worst = max(worst, dev)
        lines.append(f"max relative deviation {name:8s} {dev:.3e}")
    lines.append(f"max relative deviation overall {worst:.3e}")
    ok = worst < args.tolerance
    ocfg = doc.get("oracle", {})
    if args.stochastic or ocfg.get("stochastic", False):
        seed = args.seed if args.seed is not None else int(ocfg.get("seed", 0))
        sim_model = desk_model() if args.desk else model
        dt = float(ocfg.get("dt", max_time_step(sim_model)))
        rec = langevin_simulate(sim_model, dt, float(io._need(ocfg, "duration", "oracle")), seed)
        cmp = stochastic_comparison(sim_model, rec, int(io._need(ocfg, "segment_length", "oracle")),
                                    float(ocfg.get("overlap", 0.5)))
        lines.append(f"stochastic run seed {seed}, dt {dt:.6g}, steps {rec.x_out.size}")
        for c in cmp:
            lines.append(f"  mode {c.mode_index + 1}: band-mean Welch/exact {c.ratio:.4f} "
                         f"({c.n_bins} bins, peak {c.f_peak:.6g}, fwhm {c.fwhm:.3g})")
    text = "\n".join(lines) + "\n"
    (out / "oracle_report.txt").write_text(text)
    print(text, end="")
    if args.strict and not ok:
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_ringdown(args, doc, model, out):
    if not args.input:
        raise io.ConfigError("ringdown needs --input <csv> with columns time_s,amplitude")
    t = io.read_table(args.input)
    if "time_s" not in t or "amplitude" not in t:
        raise io.ConfigError("ring-down file needs columns time_s,amplitude")
    if args.omega_hz is not None:
        f0 = args.omega_hz
    elif doc is not None and "omega_hz" in doc.get("ringdown", {}):
        f0 = float(doc["ringdown"]["omega_hz"])
    else:
        raise io.ConfigError("ringdown needs --omega-hz or ringdown.omega_hz")
    res = ringdown_fit(RingdownData(t["time_s"], t["amplitude"], f0))
    text = (f"gamma_m_hz {res.gamma_m / (2 * math.pi):.9g}\n"
            f"Q {res.Q:.9g}\n"
            f"decaying {str(res.decaying).lower()}\n")
    (out / "ringdown_report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "optimal": cmd_optimal,
    "fit": cmd_fit,
    "sweep": cmd_sweep,
    "oracle-check": cmd_oracle_check,
    "ringdown": cmd_ringdown,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML config file (rates in Hz)")
    common.add_argument("--out", type=Path, default=Path("."), help="output directory")
    common.add_argument("--seed", type=int, default=None, help="RNG seed for stochastic runs")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. modes.0.g_hz=1.2e5 (repeatable)")
    common.add_argument("--quantity", action="append", choices=[q.value for q in Quantity],
                        help="spectral quantity (repeatable)")
    common.add_argument("--window", action="append", type=_parse_window, metavar="F1:F2",
                        help="frequency window in Hz (repeatable)")

    p = argparse.ArgumentParser(prog="ponderomotive", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("spectrum", parents=[common], help="quadrature spectra")
    sp.add_argument("--theta", action="append", type=float, help="homodyne angle in rad")
    sp.add_argument("--stage", choices=["cavity_output", "detected", "loss_corrected"])
    op = sub.add_parser("optimal", parents=[common], help="optimal-quadrature envelope and angle")
    op.add_argument("--stage", choices=["cavity_output", "detected", "loss_corrected"])
    fp = sub.add_parser("fit", parents=[common], help="fit measured spectra")
    fp.add_argument("--raw", type=Path, help="CSV frequency_hz,signal,shot,electronic")
    fp.add_argument("--trace", type=Path, help="normalized trace CSV")
    sub.add_parser("sweep", parents=[common], help="power or detuning sweep")
    oc = sub.add_parser("oracle-check", parents=[common],
                        help="closed forms against the exact linear-response solve")
    oc.add_argument("--tolerance", type=float, default=1e-6)
    oc.add_argument("--strict", action="store_true", help="exit nonzero above tolerance")
    oc.add_argument("--stochastic", action="store_true", help="also run a time-domain simulation")
    oc.add_argument("--desk", action="store_true",
                    help="simulate the small dimensionless model instead of the config model")
    rp = sub.add_parser("ringdown", parents=[common], help="quality factor from a free decay")
    rp.add_argument("--input", type=Path, help="CSV time_s,amplitude")
    rp.add_argument("--omega-hz", type=float, help="mode frequency in Hz")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        if args.config is None:
            if args.command != "ringdown":
                raise io.ConfigError("--config is required")
            doc, model = None, None
        else:
            doc, model = io.load_config(args.config, args.set)
        args.out.mkdir(parents=True, exist_ok=True)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return COMMANDS[args.command](args, doc, model, args.out)
    except io.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except FitError as exc:
        print(f"fit error: {exc}", file=sys.stderr)
        return EXIT_FIT
    except (UnstableModelError, ModelError, DegenerateDenominatorError) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (TimeStepError, InsufficientDataError, ArithmeticError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICS


def dispatch(command: str, *options) -> int:
    """Run one subcommand with string options; returns the exit status."""
    if command not in COMMANDS:
        print(f"unknown command '{command}' (choose from {', '.join(COMMANDS)})", file=sys.stderr)
        return EXIT_USAGE
    return main([command, *(str(o) for o in options)])


if __name__ == "__main__":
    sys.exit(main())
