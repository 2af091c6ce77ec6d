"""Homodyne signal chain: RF synthesis, demodulation, averaging and reflections.

Phases are in degrees, times in ns, sample rates in samples/s.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import circuit
from .circuit import CircuitParams
from .waveforms import ExpSettlingModel, FluxWaveform, apply_settling, gaussian_kernel, zoh_resample


class SignalChainError(ValueError):
    pass


class DemodulationError(SignalChainError):
    pass


class InsufficientDataError(SignalChainError):
    pass


class ReflectionModelError(SignalChainError):
    pass


@dataclass(frozen=True, eq=False)
class RFTrace:
    """Digitized reflection (``signal``) and local-oscillator copy (``reference``)."""

    sample_rate: float
    signal: np.ndarray
    reference: np.ndarray
    probe_freq: float = 6.4e9
    t0: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.signal, dtype=float)
        r = np.asarray(self.reference, dtype=float)
        if s.shape != r.shape or s.ndim != 1:
            raise SignalChainError("signal and reference must be 1-D and of equal length")
        object.__setattr__(self, "signal", s)
        object.__setattr__(self, "reference", r)
        if not self.sample_rate > 0:
            raise SignalChainError("sample_rate must be positive")

    def __len__(self):
        return self.signal.size

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * 1e9 / self.sample_rate


@dataclass(frozen=True, eq=False)
class PhaseTrace:
    sample_rate: float
    phase: np.ndarray
    t0: float = 0.0
    flux: np.ndarray | None = None

    def __post_init__(self):
        p = np.asarray(self.phase, dtype=float)
        if p.ndim != 1 or p.size < 1:
            raise SignalChainError("phase must be a non-empty 1-D array")
        if not np.all(np.isfinite(p)):
            raise SignalChainError("phase samples must be finite")
        object.__setattr__(self, "phase", p)
        if self.flux is not None:
            f = np.asarray(self.flux, dtype=float)
            if f.shape != p.shape:
                raise SignalChainError("flux and phase lengths differ")
            object.__setattr__(self, "flux", f)
        if not self.sample_rate > 0:
            raise SignalChainError("sample_rate must be positive")

    def __len__(self):
        return self.phase.size

    @property
    def dt(self) -> float:
        return 1e9 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self)) * self.dt

    def with_phase(self, phase, flux=None) -> "PhaseTrace":
        return PhaseTrace(self.sample_rate, phase, self.t0, flux)


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement noise.

    ``jitter_pkpk`` (seconds) is a per-trace uniform timing offset between
    the probe source and the AWG-locked timebase. ``phase_noise_rms``
    (degrees) is an effective white phase noise per sample; it is the knob
    used to reproduce the 0.25 deg averaged noise floor, which pure jitter
    averaging over 50k traces undershoots.
    """

    jitter_pkpk: float = 20e-12
    additive_noise_rms: float = 0.0
    phase_noise_rms: float = 0.0
    n_averages: int = 1
    seed: int | None = None

    def __post_init__(self):
        for name in ("jitter_pkpk", "additive_noise_rms", "phase_noise_rms"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.n_averages < 1:
            raise ValueError("n_averages must be >= 1")

    def jitter_phase_std(self, probe_freq: float) -> float:
        """Per-trace phase std (deg) produced by the uniform jitter alone."""
        return 360.0 * probe_freq * self.jitter_pkpk / np.sqrt(12.0)


NOISELESS = NoiseConfig(jitter_pkpk=0.0)


@dataclass(frozen=True)
class ReflectionScenario:
    """Aggregate spurious reflector between the resonator and the digitizer.

    ``reflection_phase`` orients the direct spurious phasor relative to the
    resonator's reflection; each extra round trip adds ``-reflection_phase``
    of line phase, so the bounce series sums to the standing-wave solution.
    """

    amplitude_db: float
    one_way_delay: float
    reflection_phase: float = 0.0
    chain_delay: float = 10.0

    def __post_init__(self):
        if not self.amplitude_db < 0:
            raise ReflectionModelError("amplitude_db must be negative (|r| < 1)")
        if self.one_way_delay < 0 or self.chain_delay < 0:
            raise ReflectionModelError("delays must be non-negative")

    @property
    def r(self) -> float:
        return 10 ** (self.amplitude_db / 20)

    @classmethod
    def from_impedances(cls, z1: float, zt: float, one_way_delay: float, **kwargs):
        """Reflector from the impedance step Z1 -> ZT."""
        g = (zt - z1) / (zt + z1)
        if g == 0:
            raise ReflectionModelError("matched impedances produce no reflection")
        phase = kwargs.pop("reflection_phase", 0.0) + (180.0 if g < 0 else 0.0)
        return cls(20 * np.log10(abs(g)), one_way_delay, phase, **kwargs)


@dataclass(frozen=True)
class ScopeModel:
    """DC-response artifact of a baseband-digitizing oscilloscope (tau in ns)."""

    dc_settle_amp: float = 2e-3
    dc_settle_tau: float = 30e3


# -- synthesis ---------------------------------------------------------------

def trace_rng(master_seed: int | None, index: int = 0) -> np.random.Generator:
    """Generator for trace ``index`` of a run; independent of scheduling order."""
    if master_seed is None:
        return np.random.default_rng()
    return np.random.default_rng([int(master_seed), int(index)])


def _delayed(x: np.ndarray, delay_samples: float) -> np.ndarray:
    """``x`` delayed by a (possibly fractional) number of samples, primed with x[0]."""
    if delay_samples == 0:
        return x
    idx = np.arange(x.size) - delay_samples
    return np.interp(idx, np.arange(x.size), x, left=x[0], right=x[-1])


def angle_schedule(flux_wf: FluxWaveform, params: CircuitParams, rate: float | None = None) -> PhaseTrace:
    """Reflection angle versus time for a flux waveform (ZOH onto ``rate``)."""
    wf = flux_wf if rate is None or rate == flux_wf.sample_rate else zoh_resample(flux_wf, rate)
    ang = np.asarray(circuit.reflection_angle(wf.samples, params), dtype=float)
    return PhaseTrace(wf.sample_rate, circuit.unwrap_deg(ang), wf.t0, wf.samples.copy())


def synthesize_trace(flux_wf: FluxWaveform, params: CircuitParams, noise: NoiseConfig = NOISELESS,
                     scenario: ReflectionScenario | None = None, sample_rate: float = 40e9,
                     rng: np.random.Generator | None = None) -> RFTrace:
    """Digitized reflection of the probe tone for a given flux waveform.

    The flux is zero-order held onto the RF grid; any 220 MHz shaping must
    already be in ``flux_wf``. With a scenario, the phase is delayed by the
    chain delay and passed through :func:`bounce_series`.
    """
    if params.probe_freq >= sample_rate / 2:
        raise SignalChainError("probe frequency violates the Nyquist limit of the digitizer")
    if rng is None:
        rng = trace_rng(noise.seed)
    sched = angle_schedule(flux_wf, params, sample_rate)
    phase = sched.phase
    if scenario is not None:
        phase = _delayed(phase, scenario.chain_delay * 1e-9 * sample_rate)
        phase = bounce_series(sched.with_phase(phase), scenario).phase
    n = phase.size
    t = (flux_wf.t0 * 1e-9) + np.arange(n) / sample_rate
    delta = rng.uniform(-0.5, 0.5) * noise.jitter_pkpk if noise.jitter_pkpk else 0.0
    if noise.phase_noise_rms:
        phase = phase + rng.normal(0.0, noise.phase_noise_rms, n)
    w = 2 * np.pi * params.probe_freq
    sig = np.cos(w * (t + delta) + np.deg2rad(phase))
    if noise.additive_noise_rms:
        sig = sig + rng.normal(0.0, noise.additive_noise_rms, n)
    ref = np.cos(w * t)
    return RFTrace(sample_rate, sig, ref, params.probe_freq, flux_wf.t0)


# -- demodulation ------------------------------------------------------------

def demod_filter(sample_rate: float, cutoff: float) -> np.ndarray:
    """Zero-phase Gaussian FIR with its -3 dB point at ``cutoff``.

    A Gaussian never overshoots a step, so fast flux edges do not ring
    into the calibration inversion. At the default probe/8 cutoff the 2f
    mixing product is suppressed by several hundred dB.
    """
    if not 0 < cutoff < sample_rate / 2:
        raise SignalChainError("demodulation cutoff must lie below Nyquist")
    return np.asarray(gaussian_kernel(float(cutoff), float(sample_rate)))


def _reference_phasor(trace: RFTrace):
    """Least-squares amplitude/phase of the digitized reference at the probe tone."""
    t = np.arange(len(trace)) / trace.sample_rate + trace.t0 * 1e-9
    w = 2 * np.pi * trace.probe_freq
    basis = np.column_stack([np.cos(w * t), np.sin(w * t)])
    (a, b), *_ = np.linalg.lstsq(basis, trace.reference, rcond=None)
    amp = np.hypot(a, b)
    scale = max(np.max(np.abs(trace.signal)), 1e-300)
    if amp < 1e-6 * scale or amp == 0:
        raise DemodulationError("reference amplitude is ~0; cannot demodulate")
    return w * t + np.arctan2(-b, a)


def _seeded_unwrap(phase_deg: np.ndarray) -> np.ndarray:
    p = circuit.unwrap_deg(phase_deg)
    return p - 360.0 * np.round((p[0] - circuit.wrap_deg(p[0])) / 360.0)


def _iq_to_phase(i_bb, q_bb, sample_rate, t0, cutoff, decimate):
    taps = demod_filter(sample_rate, cutoff)
    half = taps.size // 2
    if i_bb.size <= taps.size:
        raise DemodulationError("trace shorter than the demodulation filter")
    i_f = np.convolve(i_bb, taps, mode="valid")[::decimate]
    q_f = np.convolve(q_bb, taps, mode="valid")[::decimate]
    phase = _seeded_unwrap(np.degrees(np.arctan2(q_f, i_f)))
    return PhaseTrace(sample_rate / decimate, phase, t0 + half * 1e9 / sample_rate)


def digital_demodulate(trace: RFTrace, lpf_cutoff: float | None = None, decimate: int = 1) -> PhaseTrace:
    """Phase of the signal relative to the digitized reference.

    The in-phase arm mixes with the reference, the quadrature arm with the
    reference advanced by a quarter period (reconstructed from its fitted
    phase, since a quarter period is not a whole number of samples). The
    output is trimmed to the filter's fully supported region and its time
    axis shifted by the group delay.
    """
    cutoff = trace.probe_freq / 8 if lpf_cutoff is None else lpf_cutoff
    if not cutoff < trace.probe_freq / 2:
        raise SignalChainError("lpf_cutoff must be below probe_freq / 2")
    ref_phase = _reference_phasor(trace)
    i_bb = 2 * trace.signal * np.cos(ref_phase)
    q_bb = 2 * trace.signal * np.cos(ref_phase + np.pi / 2)
    return _iq_to_phase(i_bb, q_bb, trace.sample_rate, trace.t0, cutoff, decimate)


def hardware_demodulate(trace: RFTrace, scope_model: ScopeModel = ScopeModel(),
                        out_rate: float = 1e9, lpf_cutoff: float | None = None) -> PhaseTrace:
    """IQ-mixer demodulation: ideal mixing, decimation, then the scope's DC artifact."""
    decimate = max(int(round(trace.sample_rate / out_rate)), 1)
    cutoff = lpf_cutoff if lpf_cutoff is not None else min(trace.probe_freq / 8, 0.4 * trace.sample_rate / decimate)
    t = np.arange(len(trace)) / trace.sample_rate + trace.t0 * 1e-9
    lo = 2 * np.pi * trace.probe_freq * t
    if np.max(np.abs(trace.reference)) == 0:
        raise DemodulationError("reference amplitude is ~0; cannot demodulate")
    i_bb = 2 * trace.signal * np.cos(lo)
    q_bb = -2 * trace.signal * np.sin(lo)
    out = _iq_to_phase(i_bb, q_bb, trace.sample_rate, trace.t0, cutoff, decimate)
    return apply_scope(out, scope_model)


def apply_scope(trace: PhaseTrace, scope_model: ScopeModel) -> PhaseTrace:
    """The scope's slow DC settling, starting when the acquisition starts.

    Every level change, including the one at the start of the record,
    settles by ``dc_settle_amp`` of its size over ``dc_settle_tau``.
    """
    if scope_model.dc_settle_amp == 0 or len(trace) < 2:
        return trace
    a, tau = scope_model.dc_settle_amp, scope_model.dc_settle_tau
    wf = FluxWaveform(trace.sample_rate, trace.phase, trace.t0)
    primed = apply_settling(wf, ExpSettlingModel(((a, tau),))).samples
    start = trace.phase[0] * a * np.exp(-(trace.times - trace.t0) / tau)
    return trace.with_phase(primed - start, trace.flux)


def baseband_trace(flux_wf: FluxWaveform, params: CircuitParams, noise: NoiseConfig = NOISELESS,
                   rng: np.random.Generator | None = None) -> PhaseTrace:
    """Ideal demodulator output sampled at the waveform's own rate.

    Equivalent to synthesizing and demodulating with an infinitely wide
    filter; used for records far too long to hold at 40 GS/s.
    """
    if rng is None:
        rng = trace_rng(noise.seed)
    sched = angle_schedule(flux_wf, params)
    phase = sched.phase.copy()
    if noise.jitter_pkpk:
        phase += 360.0 * params.probe_freq * rng.uniform(-0.5, 0.5) * noise.jitter_pkpk
    if noise.phase_noise_rms:
        phase += rng.normal(0.0, noise.phase_noise_rms, phase.size)
    return sched.with_phase(phase, sched.flux)


# -- averaging ---------------------------------------------------------------

def average_traces(traces: Sequence[PhaseTrace]) -> PhaseTrace:
    if not traces:
        raise SignalChainError("nothing to average")
    first = traces[0]
    for tr in traces[1:]:
        if len(tr) != len(first) or tr.sample_rate != first.sample_rate or tr.t0 != first.t0:
            raise SignalChainError("traces differ in rate, length or start time")
    if len(traces) == 1:
        return first
    phase = np.mean([tr.phase for tr in traces], axis=0)
    flux = None
    if all(tr.flux is not None for tr in traces):
        flux = np.mean([tr.flux for tr in traces], axis=0)
    return PhaseTrace(first.sample_rate, phase, first.t0, flux)


def averaging_residual(n_traces: int, noise: NoiseConfig, probe_freq: float = 6.4e9,
                       n_samples: int = 16, n_repeats: int = 2000, seed: int = 0) -> float:
    """Monte Carlo RMS error (deg) of an ``n_traces`` average of static phase traces.

    Each trace carries one uniform jitter offset and white phase noise; the
    RMS is taken over samples and ``n_repeats`` independent averages.
    """
    rng = np.random.default_rng(seed)
    err = np.zeros((n_repeats, n_samples))
    batch = max(1, 4_000_000 // (n_repeats * n_samples))
    for start in range(0, n_traces, batch):
        m = min(batch, n_traces - start)
        offs = 360.0 * probe_freq * noise.jitter_pkpk * rng.uniform(-0.5, 0.5, (n_repeats, m, 1))
        x = np.broadcast_to(offs, (n_repeats, m, n_samples)).copy()
        if noise.phase_noise_rms:
            x += rng.normal(0.0, noise.phase_noise_rms, x.shape)
        err += x.sum(axis=1)
    err /= n_traces
    return float(np.sqrt(np.mean(err**2)))


def simulate_average(flux_wf: FluxWaveform, params: CircuitParams, noise: NoiseConfig,
                     scenario: ReflectionScenario | None = None, sample_rate: float = 40e9,
                     lpf_cutoff: float | None = None) -> PhaseTrace:
    """Synthesize, digitally demodulate and average ``noise.n_averages`` traces."""
    traces = []
    for i in range(noise.n_averages):
        rf = synthesize_trace(flux_wf, params, noise, scenario, sample_rate, trace_rng(noise.seed, i))
        traces.append(digital_demodulate(rf, lpf_cutoff))
    return average_traces(traces)


# -- microwave reflections ---------------------------------------------------

def _n_bounces(r: float, tol: float = 1e-10) -> int:
    """Transmitted terms kept: the series stops once r**n drops below ``tol``."""
    if r <= 0:
        return 1
    return int(np.floor(np.log(tol) / np.log(r))) + 1


def bounce_terms(angle_schedule: PhaseTrace, scenario: ReflectionScenario,
                 max_bounces: int | None = None) -> np.ndarray:
    """Phasor contributions to the output, one row per term.

    Row 0 is the direct spurious reflection; row ``n >= 1`` is the wave that
    reflected ``n`` times off the resonator, its k-th reflection evaluated
    ``2 k tau`` in the past.
    """
    r = scenario.r
    phi = np.deg2rad(scenario.reflection_phase)
    theta = np.deg2rad(angle_schedule.phase)
    n_terms = _n_bounces(r) if max_bounces is None else max_bounces
    step = 2 * scenario.one_way_delay * 1e-9 * angle_schedule.sample_rate
    rows = [np.full(theta.size, r * np.exp(1j * phi), dtype=complex)]
    acc = np.zeros_like(theta)
    for n in range(1, n_terms + 1):
        acc = acc + _delayed(theta, (n - 1) * step)
        amp = (1 - r**2) * (-r) ** (n - 1)
        rows.append(amp * np.exp(1j * (acc - (n - 1) * phi)))
    return np.array(rows)


def bounce_series(angle_schedule: PhaseTrace, scenario: ReflectionScenario,
                  max_bounces: int | None = None) -> PhaseTrace:
    """Output phase with a spurious reflector in the chain.

    The phasor sum of the direct reflection and the transmitted bounces;
    for a constant schedule it converges to :func:`steady_state_phase`.
    """
    r = scenario.r
    if not r < 1:
        raise ReflectionModelError("reflection amplitude must be below 0 dB")
    v = bounce_terms(angle_schedule, scenario, max_bounces).sum(axis=0)
    out = circuit.unwrap_deg(np.angle(v, deg=True))
    # continue from the schedule's own branch at the first sample
    out = out + 360.0 * np.round((angle_schedule.phase[0] - out[0]) / 360.0)
    return angle_schedule.with_phase(out, angle_schedule.flux)


def steady_state_phase(angle_deg, scenario: ReflectionScenario):
    """Closed-form phase once the bounces have settled (geometric series summed)."""
    r = scenario.r
    phi = np.deg2rad(scenario.reflection_phase)
    th = np.deg2rad(np.asarray(angle_deg, dtype=float))
    v = r * np.exp(1j * phi) + (1 - r**2) * np.exp(1j * th) / (1 + r * np.exp(1j * (th - phi)))
    out = np.angle(v, deg=True)
    out = out + 360.0 * np.round((np.asarray(angle_deg) - out) / 360.0)
    return out if out.ndim else float(out)


def bounce_phase_error(scenario: ReflectionScenario, bounce: int = 1) -> float:
    """Phase error (deg) when the given bounce adds perpendicular to the main phasor.

    Evaluated from :func:`bounce_terms` on a static schedule whose angle is
    chosen to make that bounce perpendicular.
    """
    if bounce < 1:
        raise ValueError("bounce must be >= 1")
    # term (bounce + 1) relative to term 1 is r**bounce * exp(i*bounce*(theta - phi + pi))
    phi = scenario.reflection_phase
    theta = phi - 180.0 + 90.0 / bounce
    sched = PhaseTrace(1e9, np.full(4, theta))
    rows = bounce_terms(sched, scenario, max_bounces=bounce + 1)
    main, extra = rows[1, -1], rows[bounce + 1, -1]
    return float(abs(np.angle((main + extra) / main, deg=True)))


# -- Theta_err scan ----------------------------------------------------------

@dataclass
class ThetaErrScan:
    """``t_peak_ns`` is the argmax of the spread; ``t_fall_ns`` is the last time
    the spread is at least half its maximum, where the first bounce carrying
    the new angle arrives."""

    times: np.ndarray
    theta_err: np.ndarray
    spread: np.ndarray
    max_spread_deg: float
    t_peak_ns: float
    t_fall_ns: float = float("nan")


def theta_err_scan(family: Sequence[PhaseTrace], window: float = 50.0, t_edge: float = 0.0,
                   references: Sequence[PhaseTrace] | None = None, t_start: float = 0.0) -> ThetaErrScan:
    """Spread of each trace's deviation from the family mean after a flux step.

    Parameters
    ----------
    family : traces measured with a common final flux level
    window : length (ns) of the analysis window after ``t_edge + t_start``
    t_edge : time of the flux step; reported times are relative to it
    references : optional expected phase of each trace from the DC
        calibration. Subtracting it removes the main transition, which
        otherwise dominates the spread during the edge itself.
    """
    if len(family) < 3:
        raise InsufficientDataError("a Theta_err scan needs at least 3 traces")
    first = family[0]
    for tr in family:
        if len(tr) != len(first) or tr.sample_rate != first.sample_rate or tr.t0 != first.t0:
            raise SignalChainError("family traces differ in rate, length or start time")
    ph = np.array([tr.phase for tr in family])
    if references is not None:
        if len(references) != len(family):
            raise SignalChainError("one reference per trace is required")
        ph = ph - np.array([ref.phase for ref in references])
    rel = first.times - t_edge
    sel = (rel >= t_start) & (rel <= t_start + window)
    if not np.any(sel):
        raise InsufficientDataError("analysis window contains no samples")
    err = ph[:, sel] - ph[:, sel].mean(axis=0)
    spread = err.max(axis=0) - err.min(axis=0)
    i = int(np.argmax(spread))
    t = rel[sel]
    fall = t[spread >= 0.5 * spread[i]][-1]
    return ThetaErrScan(t, err, spread, float(spread[i]), float(t[i]), float(fall))


@dataclass(frozen=True)
class ReflectionBound:
    amp_db_range: tuple
    distance_ns: float


def infer_reflection_bound(max_spread_deg: float, t_peak_ns: float) -> ReflectionBound:
    """Reflector amplitude bracket and distance from a Theta_err scan.

    The spread equals ``atan(r)`` if only one extremum of the error was
    sampled and ``2 atan(r)`` if both were, hence the factor-of-two bracket.
    """
    if not max_spread_deg > 0:
        raise ReflectionModelError("max spread must be positive")
    if max_spread_deg >= 90:
        raise ReflectionModelError("spread >= 90 deg is outside the single-reflection model")
    hi = 20 * np.log10(np.tan(np.deg2rad(max_spread_deg)))
    lo = 20 * np.log10(np.tan(np.deg2rad(max_spread_deg / 2)))
    return ReflectionBound((float(lo), float(hi)), t_peak_ns / 2)
