"""AWG waveform model: steps, Gaussian shaping, settling distortion and its inverse.

Times are in ns, sample rates in samples/s, flux in Phi0.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy import optimize, signal

from . import circuit
from .circuit import CircuitParams


class WaveformError(ValueError):
    pass


class ModelError(ValueError):
    """Settling model that is invalid or has no stable inverse."""


@dataclass(frozen=True, eq=False)
class FluxWaveform:
    """Uniformly sampled flux waveform; sample ``i`` sits at ``t0 + i / sample_rate``."""

    sample_rate: float
    samples: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        s = np.array(self.samples, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        if not self.sample_rate > 0:
            raise WaveformError("sample_rate must be positive")
        if s.ndim != 1 or s.size < 2:
            raise WaveformError("a waveform needs at least 2 samples")
        if not np.all(np.isfinite(s)):
            raise WaveformError("waveform samples must be finite")

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        """Sample spacing in ns."""
        return 1e9 / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(self.samples.size) * self.dt

    def replace_samples(self, samples) -> "FluxWaveform":
        return FluxWaveform(self.sample_rate, samples, self.t0)


@dataclass(frozen=True)
class ExpSettlingModel:
    """Step response ``A(t) = 1 - sum(alpha_k exp(-t / tau_k))``; tau in ns.

    Terms are stored sorted by ascending tau. ``sum(|alpha|) < 1`` keeps the
    step response positive.
    """

    terms: tuple = ()

    def __post_init__(self):
        terms = tuple(sorted(((float(a), float(t)) for a, t in self.terms), key=lambda p: p[1]))
        for a, t in terms:
            if not (np.isfinite(a) and np.isfinite(t)) or t <= 0:
                raise ModelError(f"invalid settling term (alpha={a}, tau={t})")
        if sum(abs(a) for a, _ in terms) >= 1:
            raise ModelError("sum of |alpha| must be < 1")
        object.__setattr__(self, "terms", terms)

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for a, _ in self.terms])

    @property
    def taus(self) -> np.ndarray:
        return np.array([t for _, t in self.terms])

    def step_response(self, t):
        """Closed-form ``A(t)``; zero before the edge at ``t = 0``."""
        t = np.asarray(t, dtype=float)
        a = np.ones_like(t)
        for alpha, tau in self.terms:
            a = a - alpha * np.exp(-np.clip(t, 0, None) / tau)
        return np.where(t >= 0, a, 0.0)

    def __add__(self, other: "ExpSettlingModel") -> "ExpSettlingModel":
        return ExpSettlingModel(self.terms + other.terms)


# Step response of the machined-aluminum package (three-exponential fit).
FIG3_MODEL = ExpSettlingModel(((0.48, 0.73), (0.04, 7.9), (0.01, 53.5)))


@dataclass(frozen=True)
class WaveformConfig:
    awg_rate: float = 1e9
    lpf_cutoff: float = 220e6
    mutual_inductance: float | None = None
    full_scale_flux: float = 1.75

    def __post_init__(self):
        if not self.awg_rate > 0:
            raise WaveformError("awg_rate must be positive")
        if not self.lpf_cutoff > 0:
            raise WaveformError("lpf_cutoff must be positive")

    def current_to_flux(self, current):
        """Bias-line current (A) to SQUID flux (Phi0) through the mutual inductance."""
        if self.mutual_inductance is None:
            raise WaveformError("mutual_inductance is not configured")
        return np.asarray(current) * self.mutual_inductance / circuit.PHI0


def make_step(flux_start: float, flux_end: float, t_edge: float, duration: float,
              cfg: WaveformConfig = WaveformConfig(), t0: float = 0.0) -> FluxWaveform:
    """Ideal step sampled at the AWG rate: ``flux_end`` for ``t >= t_edge``."""
    if not duration > t_edge >= t0:
        raise WaveformError("need duration > t_edge >= t0")
    for v in (flux_start, flux_end):
        if abs(v) > 0.5:
            raise WaveformError(f"flux level {v} outside +-0.5 Phi0")
    dt = 1e9 / cfg.awg_rate
    n = int(round((duration - t0) / dt))
    t = t0 + np.arange(n) * dt
    # tolerance keeps an edge that falls on a sample from being rounded away
    x = np.where(t >= t_edge - 1e-9 * dt, flux_end, flux_start)
    return FluxWaveform(cfg.awg_rate, x, t0)


def zoh_resample(wf: FluxWaveform, rate: float) -> FluxWaveform:
    """Zero-order-hold resampling onto a finer uniform grid starting at ``wf.t0``."""
    if rate < wf.sample_rate:
        raise WaveformError("zero-order hold only upsamples")
    n = int(np.floor(len(wf) * rate / wf.sample_rate + 1e-9))
    t = np.arange(n) / rate
    idx = np.minimum(np.floor(t * wf.sample_rate + 1e-9).astype(int), len(wf) - 1)
    return FluxWaveform(rate, wf.samples[idx], wf.t0)


def _gauss_kernel(sigma: float) -> np.ndarray:
    half = max(int(np.ceil(5 * sigma)), 1)
    k = np.arange(-half, half + 1)
    g = np.exp(-0.5 * (k / sigma) ** 2)
    return g / g.sum()


def _kernel_gain(kernel: np.ndarray, fnorm: float) -> float:
    k = np.arange(kernel.size) - kernel.size // 2
    return float(abs(np.sum(kernel * np.exp(-2j * np.pi * fnorm * k))))


@lru_cache(maxsize=64)
def gaussian_kernel(cutoff: float, sample_rate: float) -> np.ndarray:
    """Truncated, unit-sum Gaussian whose -3 dB point is exactly ``cutoff``.

    The continuous-time width ``sqrt(ln 2) / (2 pi fc)`` is only the starting
    point: sampling aliases the Gaussian spectrum, so sigma is re-solved
    against the discrete response.
    """
    if not 0 < cutoff < sample_rate / 2:
        raise WaveformError("cutoff must lie below the Nyquist frequency")
    fnorm = cutoff / sample_rate
    sigma0 = np.sqrt(np.log(2)) / (2 * np.pi * fnorm)
    target = 1 / np.sqrt(2)

    def err(s):
        return _kernel_gain(_gauss_kernel(s), fnorm) - target

    lo, hi = 0.3 * sigma0, 3 * sigma0
    if err(lo) * err(hi) > 0:
        sigma = sigma0
    else:
        sigma = optimize.brentq(err, lo, hi, xtol=1e-12 * sigma0)
    k = _gauss_kernel(sigma)
    k.setflags(write=False)
    return k


def gaussian_lowpass(wf: FluxWaveform, cutoff: float) -> FluxWaveform:
    """Zero-phase Gaussian low-pass; the edges are primed with the end samples."""
    k = gaussian_kernel(float(cutoff), float(wf.sample_rate))
    half = k.size // 2
    x = np.concatenate([np.full(half, wf.samples[0]), wf.samples, np.full(half, wf.samples[-1])])
    return wf.replace_samples(np.convolve(x, k, mode="valid"))


def dac_output(wf: FluxWaveform, rate: float, cutoff: float = 220e6) -> FluxWaveform:
    """DAC staircase followed by the analog Gaussian filter, on a fine grid."""
    return gaussian_lowpass(zoh_resample(wf, rate), cutoff)


def _poles(model: ExpSettlingModel, sample_rate: float) -> np.ndarray:
    dt = 1e9 / sample_rate
    return np.exp(-dt / model.taus)


def settling_filter(model: ExpSettlingModel, sample_rate: float):
    """Rational ``(b, a)`` of the step-invariant discretization of the model.

    Each term contributes ``-alpha (1 - z^-1) / (1 - p z^-1)`` with
    ``p = exp(-dt / tau)``, which reproduces ``A(t)`` exactly at the samples.
    """
    if not model.terms:
        return np.array([1.0]), np.array([1.0])
    p = _poles(model, sample_rate)
    a = np.array([1.0])
    for pk in p:
        a = np.convolve(a, [1.0, -pk])
    b = a.copy()
    for k, alpha in enumerate(model.alphas):
        others = np.array([1.0])
        for j, pj in enumerate(p):
            if j != k:
                others = np.convolve(others, [1.0, -pj])
        term = np.convolve([1.0, -1.0], others)
        b[: term.size] -= alpha * term
    return b, a


def apply_settling(wf: FluxWaveform, model: ExpSettlingModel) -> FluxWaveform:
    """Pass the waveform through the LTI system whose step response is ``A(t)``.

    Implemented as one first-order recursive high-pass per term, starting
    from rest at the first sample value.
    """
    x = wf.samples
    y = x.copy()
    p = _poles(model, wf.sample_rate) if model.terms else []
    dx = np.diff(x, prepend=x[0])
    for (alpha, _), pk in zip(model.terms, p):
        hp = signal.lfilter([1.0], [1.0, -pk], dx)
        y -= alpha * hp
    return wf.replace_samples(y)


def predistort(wf: FluxWaveform, model: ExpSettlingModel) -> FluxWaveform:
    """Exact inverse of :func:`apply_settling` for the same sample rate."""
    if not model.terms:
        return wf.replace_samples(wf.samples.copy())
    b, a = settling_filter(model, wf.sample_rate)
    if np.any(np.abs(np.roots(b)) >= 1.0 - 1e-12):
        raise ModelError("settling model has no stable inverse at this sample rate")
    # the inverse filter a/b has unit DC gain, so a constant input is its steady state
    zi = signal.lfilter_zi(a, b) * wf.samples[0]
    y, _ = signal.lfilter(a, b, wf.samples, zi=zi)
    return wf.replace_samples(y)


def branch_angles(calib: CircuitParams, n: int = 4001):
    """Flux grid and unwrapped reflection angle on the monotone branch [0, clamp]."""
    grid = np.linspace(0.0, calib.flux_clamp, n)
    return grid, circuit.calibration_curve(grid, calib)


def flux_for_angle(angle_deg: float, calib: CircuitParams) -> float:
    """Invert the calibration curve on [0, clamp] by bisection."""
    f = lambda x: float(circuit.reflection_angle(x, calib)) - angle_deg
    lo_val, hi_val = f(0.0), f(calib.flux_clamp)
    if lo_val * hi_val > 0:
        raise WaveformError(f"angle {angle_deg:.3f} deg is outside the calibration branch")
    if lo_val == 0:
        return 0.0
    return float(optimize.bisect(f, 0.0, calib.flux_clamp, xtol=1e-14, maxiter=200))


def angle_sweep_family(calib: CircuitParams, n: int = 16, final_flux: float = 0.08,
                       span_deg: float = 180.0, t_edge: float = 20.0, duration: float = 100.0,
                       cfg: WaveformConfig = WaveformConfig()) -> list[FluxWaveform]:
    """Steps whose initial reflection angles span ``span_deg``, all ending at ``final_flux``.

    The initial angles are spread evenly downward from the angle at zero
    flux; ``n == 1`` gives the single step starting at zero flux.
    """
    if n < 1:
        raise WaveformError("n must be >= 1")
    if span_deg < 180:
        raise WaveformError("span_deg must be at least 180 degrees")
    grid, ang = branch_angles(calib)
    reachable = abs(ang[-1] - ang[0])
    if span_deg > reachable:
        raise WaveformError(
            f"span {span_deg} deg unreachable: the branch covers only {reachable:.1f} deg"
        )
    if n == 1:
        targets = [ang[0]]
    else:
        direction = np.sign(ang[-1] - ang[0])
        targets = ang[0] + direction * np.linspace(0.0, span_deg, n)
    out = []
    for a in targets:
        f0 = 0.0 if a == ang[0] else flux_for_angle(a, calib)
        out.append(make_step(f0, final_flux, t_edge, duration, cfg))
    return out


def check_monotone(x: Sequence[float]) -> bool:
    d = np.diff(np.asarray(x, dtype=float))
    return bool(np.all(d >= 0) or np.all(d <= 0))
