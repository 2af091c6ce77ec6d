"""Package scenarios and the end-to-end pipelines behind the CLI.

A scenario is a parameterized transfer function, not an electromagnetic
model: the package only enters through its settling model.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import circuit
from .circuit import CircuitParams, fitted_params
from .estimators import (
    CalibrationFit, FitError, PackageClass, SettlingFit, classify_package, fit_calibration,
    fit_settling, invert_calibration, normalize_step, select_model_order,
)
from .signalchain import (
    NoiseConfig, PhaseTrace, ReflectionScenario, ScopeModel, angle_schedule, apply_scope,
    baseband_trace, bounce_series, demod_filter, digital_demodulate, hardware_demodulate, infer_reflection_bound,
    steady_state_phase, synthesize_trace, theta_err_scan, trace_rng, ThetaErrScan, ReflectionBound,
)
from .waveforms import (
    FIG3_MODEL, ExpSettlingModel, FluxWaveform, WaveformConfig, angle_sweep_family, apply_settling,
    dac_output, make_step,
)


class ScenarioError(ValueError):
    pass


# Effective per-sample phase noise standing in for a long average.
AVERAGED_NOISE = NoiseConfig(jitter_pkpk=0.0, phase_noise_rms=0.25)


@dataclass(frozen=True)
class Scenario:
    name: str
    circuit: CircuitParams = field(default_factory=fitted_params)
    settling: ExpSettlingModel = FIG3_MODEL
    reflection: ReflectionScenario | None = None
    noise: NoiseConfig = AVERAGED_NOISE
    notes: str = ""


def _with_term(alpha, tau_ns):
    return FIG3_MODEL + ExpSettlingModel(((alpha, tau_ns),))


BUILTIN = {
    s.name: s for s in (
        Scenario("machined-aluminum", notes="standard machined aluminum box, copper center traces"),
        Scenario("al-pcb-2layer", settling=ExpSettlingModel(((0.47, 0.75), (0.045, 8.2), (0.011, 50.0))),
                 notes="two-layer aluminum-plated copper PCB with aluminum vias"),
        Scenario("al-pcb-3layer", settling=ExpSettlingModel(((0.49, 0.71), (0.038, 7.6), (0.009, 56.0))),
                 notes="three-layer aluminum-plated copper PCB"),
        Scenario("short-bias-line", settling=ExpSettlingModel(((0.46, 0.70), (0.04, 7.5), (0.01, 52.0))),
                 notes="normal-metal two-layer PCB with the short symmetric bias line"),
        Scenario("cu-via-pcb", settling=_with_term(5e-3, 100e3),
                 notes="aluminum-plated copper PCB with copper vias: extra 5e-3 over 100 us"),
        Scenario("gold-cu-pcb", settling=_with_term(0.2, 1e6),
                 notes="gold-plated copper PCB, long on-chip bias line: extra 0.2 over 1 ms"),
    )
}


def scenario_from_dict(d: dict) -> Scenario:
    """Build a scenario from JSON-style data (GHz, uA, pF, ns, ps units)."""
    known = {"name", "circuit", "settling", "reflection", "noise", "notes"}
    extra = set(d) - known
    if extra:
        raise ScenarioError(f"{sorted(extra)[0]}: unknown scenario key")
    if "name" not in d:
        raise ScenarioError("name: required")
    try:
        c = d.get("circuit")
        params = fitted_params() if c is None else CircuitParams(
            c.get("ic_total_uA", 3.6) * 1e-6, c.get("c_shunt_pF", 3.8) * 1e-12, c.get("z0", 14.8),
            c.get("probe_freq_GHz", 6.4) * 1e9, c.get("flux_clamp", 0.38))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"circuit: {exc}") from None
    try:
        settling = ExpSettlingModel(tuple(map(tuple, d.get("settling", [list(t) for t in FIG3_MODEL.terms]))))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"settling: {exc}") from None
    try:
        refl = d.get("reflection")
        refl = None if refl is None else ReflectionScenario(**refl)
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"reflection: {exc}") from None
    try:
        n = d.get("noise") or {}
        noise = NoiseConfig(n.get("jitter_ps", 0.0) * 1e-12, n.get("additive_noise_rms", 0.0),
                            n.get("phase_noise_deg", 0.25), n.get("n_averages", 1))
    except (TypeError, ValueError) as exc:
        raise ScenarioError(f"noise: {exc}") from None
    return Scenario(str(d["name"]), params, settling, refl, noise, str(d.get("notes", "")))


def get_scenario(name_or_path) -> Scenario:
    if isinstance(name_or_path, Scenario):
        return name_or_path
    key = str(name_or_path)
    if key in BUILTIN:
        return BUILTIN[key]
    p = Path(key)
    if p.suffix == ".json" and p.exists():
        try:
            return scenario_from_dict(json.loads(p.read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{p}: invalid JSON ({exc})") from None
    raise ScenarioError(f"unknown scenario {key!r}; built-ins: {', '.join(BUILTIN)}")


@dataclass
class ScenarioResult:
    scenario: Scenario
    calibration: CalibrationFit
    calibration_sweep: tuple
    step_trace: PhaseTrace
    normalized: tuple
    settling_fit: SettlingFit | None
    long_trace: PhaseTrace
    classification: PackageClass
    report: dict
    files: list = field(default_factory=list)


def calibration_sweep(params: CircuitParams, n: int = 64, phase_noise: float = 0.25,
                      rng: np.random.Generator | None = None, flux_max: float = 0.45):
    """Static sweep over +-flux_max; points beyond the clamp are reported but not modeled."""
    rng = rng if rng is not None else np.random.default_rng(0)
    flux = np.linspace(-flux_max, flux_max, n)
    wide = params.with_(flux_clamp=min(0.499, flux_max))
    phase = np.asarray(circuit.reflection_angle(flux, wide), dtype=float)
    return flux, phase + rng.normal(0.0, phase_noise, n)


def _to_flux(trace: PhaseTrace, cal: CalibrationFit) -> PhaseTrace:
    return trace.with_phase(trace.phase, invert_calibration(trace.phase, cal, clip=True))


def run_scenario(scenario, seed: int = 0, demod: str = "digital", horizon_us: float = 500.0,
                 n_terms=3, thresholds=(2e-3, 5e-2), scope: ScopeModel = ScopeModel(),
                 sample_rate: float = 40e9, out_dir=None) -> ScenarioResult:
    """Waveform, distortion, synthesis, demodulation, fits and classification.

    Two records are produced. A 1 us record at the digitizer rate feeds the
    settling fit; a record spanning ``horizon_us`` at 20 MS/s is generated
    at baseband (RF synthesis at 40 GS/s would not fit in memory) and feeds
    the classifier. The scenario's settling model is the full measured step
    response, so no separate Gaussian shaping is applied.
    """
    sc = get_scenario(scenario)
    if demod not in ("digital", "hardware"):
        raise ScenarioError("demod must be 'digital' or 'hardware'")
    params = sc.circuit
    noise = NoiseConfig(sc.noise.jitter_pkpk, sc.noise.additive_noise_rms, sc.noise.phase_noise_rms,
                        sc.noise.n_averages, seed)

    sweep = calibration_sweep(params, rng=trace_rng(seed, 0))
    cal = fit_calibration(*sweep, probe_freq=params.probe_freq)

    # the step is built directly on the digitizer grid so no hold delay is added
    edge = 20.0
    fine = WaveformConfig(awg_rate=sample_rate)
    step = apply_settling(make_step(0.08, 0.31, edge, 1020.0, fine), sc.settling)
    rf = synthesize_trace(step, params, noise, sc.reflection, sample_rate, trace_rng(seed, 1))
    cutoff = params.probe_freq / 8
    if demod == "digital":
        short = digital_demodulate(rf, cutoff)
    else:
        short = hardware_demodulate(rf, scope, lpf_cutoff=cutoff)
    short = _to_flux(short, cal)
    baseline, amp, tt, a = normalize_step(short.times, short.flux, edge)
    # samples within the demodulation kernel's reach of the edge are smeared
    guard = (demod_filter(sample_rate, cutoff).size // 2) * 1e9 / sample_rate
    status = "ok"
    if n_terms == "auto":
        fit = select_model_order(short, edge, fit_start=guard)
    else:
        try:
            fit = fit_settling(short, edge, int(n_terms), fit_start=guard)
        except FitError:
            # e.g. a clean step has nothing for extra terms to fit
            try:
                fit, status = select_model_order(short, edge, fit_start=guard), "reduced_order"
            except FitError:
                fit, status = None, "invalid"

    long_edge = 2000.0
    slow = WaveformConfig(awg_rate=20e6)
    lstep = apply_settling(make_step(0.08, 0.31, long_edge, long_edge + horizon_us * 1e3 * 1.02, slow),
                           sc.settling)
    long_tr = baseband_trace(lstep, params, noise, trace_rng(seed, 2))
    if demod == "hardware":
        long_tr = apply_scope(long_tr, scope)
    long_tr = _to_flux(long_tr, cal)
    cls = classify_package(long_tr, long_edge, horizon_us, thresholds)

    report = {"scenario": sc.name, "seed": seed, "demod": demod}
    report.update({f"cal.{k}": v for k, v in cal.report().items()})
    report["fit.status"] = status
    if fit is not None:
        report.update({f"fit.{k}": v for k, v in fit.report().items()})
    report["class"] = cls.label
    report["late_settling_amplitude"] = cls.late_settling_amplitude
    res = ScenarioResult(sc, cal, sweep, short, (tt, a), fit, long_tr, cls, report)
    if out_dir is not None:
        res.files = write_bundle(res, Path(out_dir))
    return res


def format_report(report: dict) -> str:
    lines = []
    for k, v in report.items():
        if isinstance(v, float):
            v = f"{v:.10g}"
        elif isinstance(v, (tuple, list)):
            v = ",".join(f"{x:.10g}" if isinstance(x, float) else str(x) for x in v)
        lines.append(f"{k}: {v}")
    return "\n".join(lines) + "\n"


def write_bundle(res: ScenarioResult, out_dir: Path) -> list:
    from .plotting import emit_plot
    from .traceio import Sweep, save_trace

    out_dir.mkdir(parents=True, exist_ok=True)
    name = res.scenario.name
    files = []
    flux, phase = res.calibration_sweep
    keep = np.abs(flux) <= res.calibration.exclude_above
    sweep = Sweep(flux[keep], {"phase": phase[keep], "fit": res.calibration.predict(flux[keep])})
    files.append(save_trace(sweep, out_dir / "calibration.csv", res.report["seed"], name))
    files.append(save_trace(res.step_trace, out_dir / "step.csv", res.report["seed"], name))
    files.append(save_trace(res.long_trace, out_dir / "long.csv.gz", res.report["seed"], name))
    files.append(emit_plot({"flux": sweep.flux, "phase": sweep.values["phase"],
                            "fit": sweep.values["fit"]}, "calibration", out_dir / "calibration.svg"))
    tt, a = res.normalized
    fit_curve = res.settling_fit.model.step_response(tt) if res.settling_fit is not None else None
    files.append(emit_plot({"time": tt, "value": a, "fit": fit_curve}, "step", out_dir / "step.svg"))
    rp = out_dir / "report.txt"
    rp.write_text(format_report(res.report), encoding="utf-8")
    files.append(rp)
    return files


# -- reflection scan ----------------------------------------------------------

@dataclass
class ReflectionScanResult:
    scan: ThetaErrScan
    bound: ReflectionBound
    initial_angles: np.ndarray


def reflection_scan(params: CircuitParams, reflector: ReflectionScenario, n: int = 16,
                    span_deg: float = 190.0, final_flux: float = 0.08, window: float = 50.0,
                    t_start: float = -5.0, sample_rate: float = 40e9, phase_noise: float = 0.0,
                    seed: int = 0) -> ReflectionScanResult:
    """Step family through the reflector, then the Theta_err scan and bound.

    Each trace is the AWG step (with its Gaussian shaping) converted to an
    angle schedule and passed through the bounce series. The steady-state
    phase of the same schedule is subtracted as the calibration reference,
    and times are reported relative to the programmed edge.
    """
    t_edge = 20.0
    duration = t_edge + max(window + t_start, 0.0) + 30.0
    family = angle_sweep_family(params, n, final_flux, span_deg, t_edge, duration)
    outs, refs, starts = [], [], []
    for i, wf in enumerate(family):
        shaped = dac_output(wf, sample_rate)
        sched = angle_schedule(shaped, params)
        out = bounce_series(sched, reflector)
        if phase_noise:
            rng = trace_rng(seed, i)
            out = out.with_phase(out.phase + rng.normal(0.0, phase_noise, len(out)), out.flux)
        outs.append(out)
        refs.append(sched.with_phase(steady_state_phase(sched.phase, reflector)))
        starts.append(sched.phase[0])
    scan = theta_err_scan(outs, window, t_edge, refs, t_start)
    # the argmax sits anywhere on the plateau before the first bounce returns,
    # so the round trip is read from the plateau's trailing edge
    return ReflectionScanResult(scan, infer_reflection_bound(scan.max_spread_deg, scan.t_fall_ns),
                                np.array(starts))
