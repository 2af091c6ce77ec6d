"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 fit
non-convergence. ``FLUXSAMPLER_CONFIG_DIR`` names a directory searched for
config files (and for a default ``fluxsampler.json``).
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import circuit, config
from .circuit import CircuitError
from .config import ConfigError
from .estimators import (
    CalibrationFit, FitError, NonConvergenceError, OutOfBranchError, fit_calibration, fit_settling,
    invert_calibration, normalize_step, select_model_order,
)
from .plotting import PlotDataError, emit_plot
from .scenarios import BUILTIN, ScenarioError, format_report, reflection_scan, run_scenario
from .signalchain import (
    PhaseTrace, RFTrace, SignalChainError, average_traces, digital_demodulate, hardware_demodulate,
    synthesize_trace, trace_rng,
)
from .traceio import ScanTrace, Sweep, TraceFormatError, load_trace, save_trace
from .waveforms import FluxWaveform, WaveformError, apply_settling, dac_output, make_step

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NONCONVERGENCE = 0, 2, 3, 4

DATA_ERRORS = (TraceFormatError, FitError, OutOfBranchError, SignalChainError, WaveformError,
               CircuitError, PlotDataError, FileNotFoundError, IsADirectoryError)


def _emit(report: dict, args) -> None:
    text = format_report(report)
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_cfg(args, flag_overrides: dict) -> dict:
    overrides = {}
    for item in args.set or []:
        k, v = config.parse_assignment(item)
        overrides[k] = v
    if args.seed is not None:
        overrides["seed"] = args.seed
    overrides.update({k: v for k, v in flag_overrides.items() if v is not None})
    return config.load_config(args.config, overrides)


# -- subcommands ---------------------------------------------------------------

def cmd_model(args) -> int:
    cfg = _load_cfg(args, {})
    p = config.circuit_params(cfg)
    lo = -p.flux_clamp if args.flux_min is None else args.flux_min
    hi = p.flux_clamp if args.flux_max is None else args.flux_max
    flux = np.linspace(lo, hi, args.n)
    if args.kind == "calibration":
        values = {"phase": np.asarray(circuit.calibration_curve(flux, p))}
    elif args.kind == "gain":
        values = {"gain": np.asarray(circuit.transducer_gain(flux, p))}
    else:
        values = {"sensitivity": np.asarray(circuit.flux_sensitivity(flux, p, args.phase_noise))}
    sweep = Sweep(flux, values)
    if args.out:
        save_trace(sweep, args.out, cfg["seed"])
    if args.plot:
        emit_plot({"flux": flux, **values}, args.kind, args.plot)
    pk_flux, pk_gain = circuit.peak_gain(p)
    _emit({
        "kind": args.kind,
        "bandwidth_GHz": circuit.bandwidth(p) / 1e9,
        "max_resonance_GHz": circuit.resonant_frequency(0.0, p) / 1e9,
        "peak_gain_flux_phi0": pk_flux,
        "peak_gain_deg_per_phi0": pk_gain,
        "sensitivity_at_peak_phi0": circuit.flux_sensitivity(pk_flux, p, args.phase_noise),
        "points": args.n,
    }, args)
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_cfg(args, {"step.flux_start": args.flux_start, "step.flux_end": args.flux_end,
                           "step.t_edge": args.t_edge, "step.duration": args.duration})
    p = config.circuit_params(cfg)
    wcfg = config.waveform_config(cfg)
    noise = config.noise_config(cfg)
    refl = config.reflection_scenario(cfg)
    s, d = cfg["step"], cfg["demod"]
    rate = d["sample_rate_GHz"] * 1e9
    wf = make_step(s["flux_start"], s["flux_end"], s["t_edge"], s["duration"], wcfg)
    wf = apply_settling(wf, config.settling_model(cfg))
    shaped = dac_output(wf, rate, wcfg.lpf_cutoff)
    if np.any(np.abs(shaped.samples) > p.flux_clamp):
        raise WaveformError("distorted waveform leaves the flux clamp")
    cutoff = None if d["lpf_cutoff_GHz"] is None else d["lpf_cutoff_GHz"] * 1e9
    traces, rf = [], None
    for i in range(noise.n_averages):
        rf = synthesize_trace(shaped, p, noise, refl, rate, trace_rng(noise.seed, i))
        if d["mode"] == "digital":
            traces.append(digital_demodulate(rf, cutoff))
        else:
            traces.append(hardware_demodulate(rf, config.scope_model(cfg), d["out_rate_GHz"] * 1e9, cutoff))
    avg = average_traces(traces)
    # flux through the true circuit, so fit-step can read the file directly
    avg = avg.with_phase(avg.phase, invert_calibration(avg.phase, CalibrationFit(p, 0.0, 0.0, p.flux_clamp),
                                                       clip=True))
    if args.rf_out:
        save_trace(rf, args.rf_out, noise.seed)
    if args.out:
        save_trace(avg, args.out, noise.seed)
    _emit({"samples": len(avg), "sample_rate_GHz": avg.sample_rate / 1e9, "averages": noise.n_averages,
           "demod": d["mode"], "phase_start_deg": float(avg.phase[0]),
           "phase_end_deg": float(avg.phase[-1])}, args)
    return EXIT_OK


def cmd_demod(args) -> int:
    cfg = _load_cfg(args, {"demod.mode": args.mode, "demod.lpf_cutoff_GHz": args.lpf_cutoff})
    rf = load_trace(args.input)
    if not isinstance(rf, RFTrace):
        raise TraceFormatError(f"{args.input}: expected an rf trace")
    d = cfg["demod"]
    cutoff = None if d["lpf_cutoff_GHz"] is None else d["lpf_cutoff_GHz"] * 1e9
    if d["mode"] == "digital":
        out = digital_demodulate(rf, cutoff)
    else:
        out = hardware_demodulate(rf, config.scope_model(cfg), d["out_rate_GHz"] * 1e9, cutoff)
    if args.calibrate:
        p = config.circuit_params(cfg)
        cal = CalibrationFit(p, 0.0, 0.0, p.flux_clamp)
        out = out.with_phase(out.phase, invert_calibration(out.phase, cal, clip=True))
    if args.out:
        save_trace(out, args.out, cfg["seed"])
    _emit({"samples": len(out), "sample_rate_GHz": out.sample_rate / 1e9, "demod": d["mode"],
           "phase_mean_deg": float(np.mean(out.phase))}, args)
    return EXIT_OK


def _step_xy(trace):
    if isinstance(trace, FluxWaveform):
        return trace.times, trace.samples
    if isinstance(trace, PhaseTrace):
        return trace.times, trace.flux if trace.flux is not None else trace.phase
    raise TraceFormatError("expected a flux or phase trace")


def cmd_fit_step(args) -> int:
    cfg = _load_cfg(args, {"fit.n_terms": args.n_terms, "fit.edge_time": args.edge_time})
    trace = load_trace(args.input)
    t, y = _step_xy(trace)
    f = cfg["fit"]
    if f["n_terms"] == "auto":
        fit = select_model_order((t, y), f["edge_time"], fit_start=args.fit_start)
    else:
        fit = fit_settling((t, y), f["edge_time"], int(f["n_terms"]), args.max_iter, fit_start=args.fit_start)
    if args.plot:
        _, _, tt, a = normalize_step(t, y, f["edge_time"])
        emit_plot({"time": tt, "value": a, "fit": fit.model.step_response(tt)}, "step", args.plot)
    _emit(fit.report(), args)
    return EXIT_OK


def cmd_fit_cal(args) -> int:
    cfg = _load_cfg(args, {"fit.exclude_above": args.exclude_above})
    sweep = load_trace(args.input)
    if not isinstance(sweep, Sweep) or "phase" not in sweep.values:
        raise TraceFormatError(f"{args.input}: expected a sweep with a phase column")
    p = config.circuit_params(cfg)
    fit = fit_calibration(sweep.flux, sweep.values["phase"], p.probe_freq, p,
                          cfg["fit"]["exclude_above"], bool(args.fit_z0 or cfg["fit"]["fit_z0"]), args.max_iter)
    if args.plot:
        keep = np.abs(sweep.flux) <= fit.exclude_above
        emit_plot({"flux": sweep.flux[keep], "phase": sweep.values["phase"][keep],
                   "fit": fit.predict(sweep.flux[keep])}, "calibration", args.plot)
    _emit(fit.report(), args)
    return EXIT_OK


def cmd_reflect_scan(args) -> int:
    over = {}
    for key, val in (("amplitude_db", args.amplitude_db), ("one_way_delay", args.delay),
                     ("reflection_phase", args.phase)):
        if val is not None:
            over[f"reflection.{key}"] = val
    cfg = _load_cfg(args, over)
    refl = config.reflection_scenario(cfg)
    if refl is None:
        raise ConfigError("reflection: a reflector is required (give --amplitude-db and --delay)")
    p = config.circuit_params(cfg)
    res = reflection_scan(p, refl, args.n, args.span, args.final_flux, args.window,
                          phase_noise=cfg["noise"]["phase_noise_deg"], seed=cfg["seed"],
                          sample_rate=cfg["demod"]["sample_rate_GHz"] * 1e9)
    sc = res.scan
    if args.plot:
        emit_plot(sc, "theta_scan", args.plot)
    if args.out:
        rate = 1e9 / float(np.mean(np.diff(sc.times)))
        save_trace(ScanTrace(rate, sc.times, sc.spread), args.out, cfg["seed"])
    lo, hi = res.bound.amp_db_range
    _emit({"traces": args.n, "span_deg": args.span, "max_spread_deg": sc.max_spread_deg,
           "t_peak_ns": sc.t_peak_ns, "t_fall_ns": sc.t_fall_ns, "amp_db_low": lo, "amp_db_high": hi,
           "distance_ns": res.bound.distance_ns}, args)
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.list:
        sys.stdout.write("".join(f"{k}: {v.notes}\n" for k, v in BUILTIN.items()))
        return EXIT_OK
    if not args.name:
        raise ConfigError("scenario: a name or JSON file is required")
    cfg = _load_cfg(args, {"demod.mode": args.demod, "classify.horizon_us": args.horizon})
    res = run_scenario(args.name, seed=cfg["seed"], demod=cfg["demod"]["mode"],
                       horizon_us=cfg["classify"]["horizon_us"], n_terms=cfg["fit"]["n_terms"],
                       thresholds=tuple(cfg["classify"]["thresholds"]),
                       scope=config.scope_model(cfg), out_dir=args.out_dir)
    _emit(res.report, args)
    return EXIT_OK


def cmd_plot(args) -> int:
    obj = load_trace(args.input)
    if args.kind in ("calibration", "gain", "sensitivity"):
        if not isinstance(obj, Sweep):
            raise PlotDataError(f"{args.kind} plot needs a sweep file")
        emit_plot({"flux": obj.flux, **obj.values}, args.kind, args.out)
    elif args.kind == "step":
        t, y = _step_xy(obj)
        emit_plot({"time": t, "value": y}, "step", args.out)
    else:
        if not isinstance(obj, ScanTrace):
            raise PlotDataError("theta_scan plot needs a scan file (reflect-scan --out)")
        emit_plot({"times": obj.times, "spread": obj.spread}, "theta_scan", args.out)
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file (searched in $FLUXSAMPLER_CONFIG_DIR too)")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key, e.g. circuit.z0=14.8 (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--report", help="write the key: value report here instead of stdout")

    ap = argparse.ArgumentParser(prog="fluxsampler", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("model", parents=[common], help="calibration, gain or sensitivity sweep")
    p.add_argument("--kind", choices=("calibration", "gain", "sensitivity"), default="calibration")
    p.add_argument("--flux-min", type=float)
    p.add_argument("--flux-max", type=float)
    p.add_argument("--n", type=int, default=201)
    p.add_argument("--phase-noise", type=float, default=0.25, help="deg, for sensitivity")
    p.add_argument("--out")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_model)

    p = sub.add_parser("simulate", parents=[common], help="step through the full chain")
    p.add_argument("--flux-start", type=float)
    p.add_argument("--flux-end", type=float)
    p.add_argument("--t-edge", type=float)
    p.add_argument("--duration", type=float)
    p.add_argument("--out", help="demodulated phase trace")
    p.add_argument("--rf-out", help="raw RF trace of the last synthesized record")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("demod", parents=[common], help="demodulate an RF trace file")
    p.add_argument("input")
    p.add_argument("--mode", choices=("digital", "hardware"))
    p.add_argument("--lpf-cutoff", type=float, help="GHz")
    p.add_argument("--calibrate", action="store_true", help="attach flux via the config circuit")
    p.add_argument("--out")
    p.set_defaults(func=cmd_demod)

    p = sub.add_parser("fit-step", parents=[common], help="fit the settling model to a step")
    p.add_argument("input")
    p.add_argument("--edge-time", type=float)
    p.add_argument("--n-terms", type=lambda s: s if s == "auto" else int(s))
    p.add_argument("--fit-start", type=float, default=0.0, help="ns after the edge")
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_fit_step)

    p = sub.add_parser("fit-cal", parents=[common], help="fit the calibration curve to a sweep")
    p.add_argument("input")
    p.add_argument("--exclude-above", type=float)
    p.add_argument("--fit-z0", action="store_true")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--plot")
    p.set_defaults(func=cmd_fit_cal)

    p = sub.add_parser("reflect-scan", parents=[common], help="Theta_err scan for a reflector")
    p.add_argument("--amplitude-db", type=float)
    p.add_argument("--delay", type=float, help="one-way delay, ns")
    p.add_argument("--phase", type=float, help="reflection phase, deg")
    p.add_argument("--n", type=int, default=16)
    p.add_argument("--span", type=float, default=190.0)
    p.add_argument("--final-flux", type=float, default=0.08)
    p.add_argument("--window", type=float, default=50.0)
    p.add_argument("--out", help="spread-vs-time scan file")
    p.add_argument("--plot")
    p.set_defaults(func=cmd_reflect_scan)

    p = sub.add_parser("scenario", parents=[common], help="run a package scenario end to end")
    p.add_argument("name", nargs="?")
    p.add_argument("--list", action="store_true")
    p.add_argument("--demod", choices=("digital", "hardware"))
    p.add_argument("--horizon", type=float, help="us")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_scenario)

    p = sub.add_parser("plot", help="render a trace or sweep file as SVG")
    p.add_argument("kind", choices=("calibration", "gain", "sensitivity", "step", "theta_scan"))
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ScenarioError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonConvergenceError as exc:
        print(f"fit did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except DATA_ERRORS as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
