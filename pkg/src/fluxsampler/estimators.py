"""Calibration and settling fits, calibration inversion and package classification."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import circuit
from ._validation import as_1d, paired, positive
from .circuit import DESIGN, CircuitParams
from .lm import NonConvergenceError, levenberg_marquardt
from .signalchain import InsufficientDataError, PhaseTrace
from .waveforms import ExpSettlingModel, FluxWaveform, ModelError, apply_settling, predistort

__all__ = [
    "CalibrationFit", "SettlingFit", "PackageClass", "FitError", "OutOfBranchError",
    "NonConvergenceError", "fit_calibration", "invert_calibration", "fit_settling",
    "select_model_order", "classify_package", "CalibrationEstimator", "SettlingEstimator",
    "SettlingCompensator",
]


class FitError(ValueError):
    """Data that cannot support the requested fit."""


class OutOfBranchError(ValueError):
    """Phase outside the monotone calibration branch."""


# -- calibration -------------------------------------------------------------

@dataclass(frozen=True)
class CalibrationFit:
    params: CircuitParams
    offset_deg: float
    residual_rms: float
    exclude_above: float
    excluded_fluxes: tuple = ()
    n_points: int = 0
    iterations: int = 0

    def predict(self, flux):
        """Fitted phase (deg, wrapped) including the global offset."""
        return circuit.wrap_deg(np.asarray(circuit.reflection_angle(flux, self.params)) + self.offset_deg)

    def report(self) -> dict:
        return {
            "ic_total_A": self.params.ic_total,
            "z0_ohm": self.params.z0,
            "c_shunt_F": self.params.c_shunt,
            "probe_freq_Hz": self.params.probe_freq,
            "offset_deg": self.offset_deg,
            "residual_rms_deg": self.residual_rms,
            "exclude_above_phi0": self.exclude_above,
            "n_points": self.n_points,
            "n_excluded": len(self.excluded_fluxes),
            "iterations": self.iterations,
        }


def _circular_mean_deg(x) -> float:
    return float(np.rad2deg(np.angle(np.mean(np.exp(1j * np.deg2rad(x))))))


def fit_calibration(flux_pts, phase_pts, probe_freq: float | None = None,
                    init: CircuitParams = DESIGN, exclude_above: float = 0.38,
                    fit_z0: bool = False, max_iter: int = 200) -> CalibrationFit:
    """Least-squares fit of the reflection angle plus a free phase offset.

    The angle depends on the parameters only through ``z0 * ic_total`` and
    ``c_shunt / ic_total``, so the three circuit values are not separately
    identifiable from a phase sweep. By default ``z0`` is held at its
    ``init`` value and ``ic_total`` and ``c_shunt`` absorb the rest.
    ``fit_z0=True`` frees it anyway; the damping then settles somewhere
    along the degenerate direction.
    """
    flux, phase = paired(flux_pts, phase_pts, "flux_pts", "phase_pts")
    if not 0 < exclude_above < 0.5:
        raise ValueError("exclude_above must lie in (0, 0.5)")
    if probe_freq is not None:
        init = init.with_(probe_freq=positive(probe_freq, "probe_freq"))
    init = init.with_(flux_clamp=exclude_above)
    keep = np.abs(flux) <= exclude_above
    excluded = tuple(float(f) for f in flux[~keep])
    flux, phase = flux[keep], phase[keep]
    if flux.size < 8:
        raise FitError(f"need at least 8 points within |flux| <= {exclude_above}, got {flux.size}")
    if np.ptp(flux) == 0:
        raise FitError("degenerate data: all flux values are equal")
    if np.ptp(flux) < 0.25:
        raise FitError(f"flux points span {np.ptp(flux):.3g} Phi0; need at least 0.25")

    def unpack(x):
        ic, c = np.exp(x[0]), np.exp(x[1])
        z0 = np.exp(x[3]) if fit_z0 else init.z0
        return init.with_(ic_total=ic, c_shunt=c, z0=z0), x[2]

    def residual(x):
        p, off = unpack(x)
        return circuit.wrap_deg(np.asarray(circuit.reflection_angle(flux, p)) + off - phase)

    off0 = _circular_mean_deg(phase - np.asarray(circuit.reflection_angle(flux, init)))
    x0 = [np.log(init.ic_total), np.log(init.c_shunt), off0]
    if fit_z0:
        x0.append(np.log(init.z0))
    x0 = np.array(x0)
    span = np.log(10.0)
    lo = x0 - span
    hi = x0 + span
    lo[2], hi[2] = -np.inf, np.inf
    res = levenberg_marquardt(residual, x0, bounds=(lo, hi), max_iter=max_iter,
                              ftol=1e-15, xtol=1e-12)
    if not res.converged:
        raise NonConvergenceError(f"calibration fit did not converge in {max_iter} iterations")
    params, off = unpack(res.x)
    r = residual(res.x)
    return CalibrationFit(params, float(circuit.wrap_deg(off)), float(np.sqrt(np.mean(r**2))),
                          exclude_above, excluded, int(flux.size), res.nit)


def _branch_angle(flux, params: CircuitParams):
    # continuous form of the reflection angle; equals reflection_angle on the branch
    lj = circuit.PHI0 / (2 * np.pi * params.ic_total * np.cos(np.pi * flux))
    w = 2 * np.pi * params.probe_freq
    d = 1.0 - w**2 * lj * params.c_shunt
    return 180.0 - 2.0 * np.rad2deg(np.arctan2(w * lj, params.z0 * d))


def invert_calibration(phase, fit: CalibrationFit, iterations: int = 64, clip: bool = False):
    """Flux on the branch [0, clamp] whose fitted phase equals ``phase``.

    Vectorized bisection; 64 halvings of the bracket reach float resolution.
    With ``clip=True`` phases beyond the branch map to its nearest end
    instead of raising (useful for filter ringing around fast edges).
    """
    target = circuit.wrap_deg(np.asarray(phase, dtype=float) - fit.offset_deg)
    target = np.atleast_1d(target)
    p = fit.params
    a_lo = float(_branch_angle(0.0, p))
    a_hi = float(_branch_angle(p.flux_clamp, p))
    top, bottom = max(a_lo, a_hi), min(a_lo, a_hi)
    tol = 1e-9
    bad = (target > top + tol) | (target < bottom - tol)
    if clip:
        target = np.clip(target, bottom, top)
    elif np.any(bad):
        v = float(target[bad][0] + fit.offset_deg)
        raise OutOfBranchError(
            f"phase {v:.4f} deg is outside the calibration branch "
            f"[{bottom + fit.offset_deg:.4f}, {top + fit.offset_deg:.4f}]"
        )
    sign = 1.0 if a_hi > a_lo else -1.0
    lo = np.zeros_like(target)
    hi = np.full_like(target, p.flux_clamp)
    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        above = sign * (_branch_angle(mid, p) - target) > 0
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
    out = 0.5 * (lo + hi)
    return float(out[0]) if np.ndim(phase) == 0 else out


# -- settling ----------------------------------------------------------------

@dataclass(frozen=True)
class SettlingFit:
    model: ExpSettlingModel
    step_amplitude: float
    residual_rms: float
    n_terms: int
    degenerate: bool = False
    baseline: float = 0.0
    iterations: int = 0

    def __post_init__(self):
        if self.n_terms != len(self.model.terms):
            raise ValueError("n_terms must equal the number of model terms")
        if self.residual_rms < 0:
            raise ValueError("residual_rms must be >= 0")

    def report(self) -> dict:
        out = {"n_terms": self.n_terms, "step_amplitude": self.step_amplitude,
               "baseline": self.baseline, "residual_rms": self.residual_rms,
               "degenerate": self.degenerate, "iterations": self.iterations}
        for k, (a, t) in enumerate(self.model.terms):
            out[f"alpha_{k}"] = a
            out[f"tau_{k}_ns"] = t
        return out


def _trace_xy(trace):
    if isinstance(trace, FluxWaveform):
        return trace.times, trace.samples
    if isinstance(trace, PhaseTrace):
        y = trace.flux if trace.flux is not None else trace.phase
        return trace.times, y
    if isinstance(trace, tuple) and len(trace) == 2:
        return paired(trace[0], trace[1], "times", "values", 2)
    raise TypeError("trace must be a FluxWaveform, PhaseTrace or (times, values) tuple")


def normalize_step(times, values, edge_time: float):
    """Baseline, amplitude and post-edge ``(t - edge, A(t))`` of a step record."""
    t, y = np.asarray(times, dtype=float), np.asarray(values, dtype=float)
    pre = t < edge_time
    if not np.any(pre):
        raise FitError("no samples before the edge to define the baseline")
    post = ~pre
    if np.count_nonzero(post) < 8:
        raise FitError("need at least 8 samples after the edge")
    baseline = float(np.mean(y[pre]))
    tail = max(1, int(round(0.1 * y.size)))
    final = float(np.mean(y[-tail:]))
    step = final - baseline
    scale = max(np.max(np.abs(y)), 1e-300)
    if abs(step) <= 1e-12 * scale:
        raise FitError("normalized step amplitude is zero")
    return baseline, step, t[post] - edge_time, (y[post] - baseline) / step


def _tau_grid(n: int, record: float) -> np.ndarray:
    hi = max(record / 3.0, 0.3 * 1.5)
    if n == 1:
        return np.array([np.sqrt(0.3 * hi)])
    return np.geomspace(0.3, hi, n)


def fit_settling(trace, edge_time: float = 0.0, n_terms: int = 3, max_iter: int = 500,
                 fit_start: float = 0.0) -> SettlingFit:
    """Fit ``A(t) = 1 - sum(alpha_k exp(-t / tau_k))`` to a normalized step.

    ``fit_start`` (ns after the edge) drops the first samples from the
    objective, e.g. those inside a demodulation filter's support; the
    time origin of the model stays at the edge.
    """
    if n_terms not in (1, 2, 3):
        raise ValueError("n_terms must be 1, 2 or 3")
    if fit_start < 0:
        raise ValueError("fit_start must be >= 0")
    t, y = _trace_xy(trace)
    baseline, step, tt, a = normalize_step(t, y, edge_time)
    keep = tt >= fit_start
    if np.count_nonzero(keep) < 8:
        raise FitError("fewer than 8 samples after fit_start")
    tt, a = tt[keep], a[keep]
    record = float(tt[-1])
    if record < 5 * 0.3:
        raise FitError("post-edge record is shorter than 5x the shortest time constant")
    dt = float(np.min(np.diff(tt))) if tt.size > 1 else record
    taus0 = _tau_grid(n_terms, record)
    basis = np.exp(-tt[:, None] / taus0[None, :])
    alphas0, *_ = np.linalg.lstsq(basis, 1.0 - a, rcond=None)
    alphas0 = np.clip(alphas0, -0.99, 0.99)
    x0 = np.concatenate([alphas0, np.log(taus0)])
    lo = np.concatenate([np.full(n_terms, -1.0), np.full(n_terms, np.log(dt / 4))])
    hi = np.concatenate([np.full(n_terms, 1.0), np.full(n_terms, np.log(10 * record))])

    def residual(x):
        al, ta = x[:n_terms], np.exp(x[n_terms:])
        return 1.0 - np.exp(-tt[:, None] / ta[None, :]) @ al - a

    def jac(x):
        al, ta = x[:n_terms], np.exp(x[n_terms:])
        e = np.exp(-tt[:, None] / ta[None, :])
        return np.hstack([-e, -e * al[None, :] * tt[:, None] / ta[None, :]])

    res = levenberg_marquardt(residual, x0, jac=jac, bounds=(lo, hi), max_iter=max_iter,
                              ftol=1e-15, xtol=1e-13)
    if not res.converged:
        raise NonConvergenceError(f"settling fit did not converge in {max_iter} iterations")
    terms = tuple(zip(res.x[:n_terms], np.exp(res.x[n_terms:])))
    try:
        model = ExpSettlingModel(terms)
    except ModelError as exc:
        raise FitError(f"fitted {n_terms}-term model is not a valid settling model: {exc}") from None
    r = residual(res.x)
    return SettlingFit(model, step, float(np.sqrt(np.mean(r**2))), n_terms,
                       _min_tau_ratio(model) < 1.5, baseline, res.nit)


def _min_tau_ratio(model: ExpSettlingModel) -> float:
    taus = model.taus
    if taus.size < 2:
        return np.inf
    return float(np.min(taus[1:] / taus[:-1]))


def select_model_order(trace, edge_time: float = 0.0, rel_tol: float = 0.10,
                       min_tau_ratio: float = 1.2, fit_start: float = 0.0) -> SettlingFit:
    """Smallest order whose residual is within ``rel_tol`` of the 3-term residual.

    Fits with two time constants closer than ``min_tau_ratio`` are never
    returned. Orders whose fit fails are skipped; order 1 must succeed.
    """
    fits = {}
    for n in (1, 2, 3):
        try:
            fits[n] = fit_settling(trace, edge_time, n, fit_start=fit_start)
        except (FitError, NonConvergenceError):
            if n == 1:
                raise
    ref = fits[3].residual_rms if 3 in fits else min(f.residual_rms for f in fits.values())
    for n in sorted(fits):
        f = fits[n]
        if _min_tau_ratio(f.model) < min_tau_ratio:
            continue
        if f.residual_rms <= (1 + rel_tol) * ref:
            return f
    return fits[1]


# -- package classification --------------------------------------------------

@dataclass(frozen=True)
class PackageClass:
    label: str
    late_settling_amplitude: float
    thresholds: tuple = field(default=(2e-3, 5e-2))


def classify_package(trace, edge_time: float = 0.0, horizon: float = 500.0,
                     thresholds=(2e-3, 5e-2), probe_time: float = 1.0) -> PackageClass:
    """Grade long-time settling: ``|final - value(probe_time)| / step``.

    ``horizon`` and ``probe_time`` are in microseconds after the edge. The
    value at ``probe_time`` is the mean over +-10% around it; ``final`` is
    the mean of the last 10% of the horizon. Thresholds are heuristics that
    separate good, bad and very bad packages.
    """
    lo_thr, hi_thr = thresholds
    if not 0 < lo_thr < hi_thr:
        raise ValueError("thresholds must satisfy 0 < good/bad < bad/very_bad")
    t, y = _trace_xy(trace)
    h_ns, p_ns = positive(horizon, "horizon") * 1e3, positive(probe_time, "probe_time") * 1e3
    if t[-1] < edge_time + h_ns * (1 - 1e-9):
        raise InsufficientDataError(
            f"record ends {(t[-1] - edge_time) / 1e3:.3g} us after the edge; horizon is {horizon} us"
        )
    pre = t < edge_time
    if not np.any(pre):
        raise InsufficientDataError("no samples before the edge")
    baseline = float(np.mean(y[pre]))
    tail = (t >= edge_time + 0.9 * h_ns) & (t <= edge_time + h_ns)
    probe = (t >= edge_time + 0.9 * p_ns) & (t <= edge_time + 1.1 * p_ns)
    if not np.any(probe) or not np.any(tail):
        raise InsufficientDataError("record too sparse around the probe time or horizon")
    final = float(np.mean(y[tail]))
    step = final - baseline
    if step == 0:
        raise FitError("step amplitude is zero")
    late = abs(final - float(np.mean(y[probe]))) / abs(step)
    label = "good" if late < lo_thr else ("bad" if late < hi_thr else "very_bad")
    return PackageClass(label, late, (lo_thr, hi_thr))


# -- scikit-learn style wrappers ---------------------------------------------

class CalibrationEstimator(RegressorMixin, BaseEstimator):
    """Flux-to-phase calibration as a regressor: ``fit(flux, phase)``, ``predict(flux)``.

    ``inverse(phase)`` maps measured phases back to flux on the fitted branch.
    """

    def __init__(self, probe_freq=6.4e9, init=DESIGN, exclude_above=0.38, fit_z0=False,
                 max_iter=200):
        self.probe_freq = probe_freq
        self.init = init
        self.exclude_above = exclude_above
        self.fit_z0 = fit_z0
        self.max_iter = max_iter

    def fit(self, X, y):
        self.fit_ = fit_calibration(as_1d(X, "X"), as_1d(y, "y"), self.probe_freq, self.init,
                                    self.exclude_above, self.fit_z0, self.max_iter)
        self.params_ = self.fit_.params
        self.offset_deg_ = self.fit_.offset_deg
        return self

    def predict(self, X):
        check_is_fitted(self, "fit_")
        return np.asarray(self.fit_.predict(as_1d(X, "X")))

    def inverse(self, phase):
        check_is_fitted(self, "fit_")
        return invert_calibration(as_1d(phase, "phase"), self.fit_)


class SettlingEstimator(BaseEstimator):
    """Settling-model fit on ``(times_ns, values)``; ``n_terms='auto'`` selects the order."""

    def __init__(self, n_terms=3, edge_time=0.0, fit_start=0.0):
        self.n_terms = n_terms
        self.edge_time = edge_time
        self.fit_start = fit_start

    def fit(self, X, y):
        t, v = paired(X, y, "X", "y", 2)
        if self.n_terms == "auto":
            self.fit_ = select_model_order((t, v), self.edge_time, fit_start=self.fit_start)
        else:
            self.fit_ = fit_settling((t, v), self.edge_time, int(self.n_terms), fit_start=self.fit_start)
        self.model_ = self.fit_.model
        return self

    def predict(self, X):
        """Fitted response in the units of ``y``."""
        check_is_fitted(self, "fit_")
        t = as_1d(X, "X")
        a = self.model_.step_response(t - self.edge_time)
        return self.fit_.baseline + self.fit_.step_amplitude * a


class SettlingCompensator(TransformerMixin, BaseEstimator):
    """Pre-distortion as a transformer over rows of uniformly sampled waveforms.

    ``transform`` pre-distorts each row, ``inverse_transform`` applies the
    settling model. ``fit(X)`` only validates; fit a model with
    :class:`SettlingEstimator` first and pass it in.
    """

    def __init__(self, model=None, sample_rate=1e9):
        self.model = model
        self.sample_rate = sample_rate

    def fit(self, X, y=None):
        self.model_ = self.model if self.model is not None else ExpSettlingModel()
        positive(self.sample_rate, "sample_rate")
        self._rows(X)
        return self

    def _rows(self, X):
        arr = np.asarray(X, dtype=float)
        if arr.ndim == 1:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] < 2:
            raise ValueError("X must have shape (n_waveforms, n_samples) with n_samples >= 2")
        return arr

    def _map(self, X, fn):
        check_is_fitted(self, "model_")
        rows = self._rows(X)
        out = [fn(FluxWaveform(self.sample_rate, r), self.model_).samples for r in rows]
        return np.vstack(out)

    def transform(self, X):
        return self._map(X, predistort)

    def inverse_transform(self, X):
        return self._map(X, apply_settling)
