"""Closed-form model of the flux-tunable SQUID resonator.

Everything here is a pure function of ``(flux, CircuitParams)``. Flux is in
units of the flux quantum, frequencies are in Hz and angles in degrees.
Array inputs are accepted wherever a flux is expected.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import constants, optimize

PHI0 = constants.h / (2 * constants.e)


class CircuitError(ValueError):
    """Base class for circuit-model domain errors."""


class DivergenceError(CircuitError):
    """The Josephson inductance diverges (flux at a half-integer)."""


class OperatingRangeError(CircuitError):
    """Flux outside the linear operating range of the transducer."""


class PoleError(CircuitError):
    """Impedance evaluated exactly at the resonance pole."""


@dataclass(frozen=True)
class CircuitParams:
    """Tunable resonator parameters.

    ``ic_total`` is the *total* SQUID critical current, i.e. twice the
    critical current of each junction.
    """

    ic_total: float = 4e-6
    c_shunt: float = 4e-12
    z0: float = 15.0
    probe_freq: float = 6.4e9
    flux_clamp: float = 0.38

    def __post_init__(self):
        for name in ("ic_total", "c_shunt", "z0", "probe_freq"):
            v = getattr(self, name)
            if not np.isfinite(v) or v <= 0:
                raise ValueError(f"{name} must be positive and finite, got {v!r}")
        if not 0 < self.flux_clamp < 0.5:
            raise ValueError(f"flux_clamp must lie in (0, 0.5), got {self.flux_clamp!r}")

    @classmethod
    def from_junction_current(cls, ic_junction: float, **kwargs) -> "CircuitParams":
        """Build params from the critical current of a single junction."""
        return cls(ic_total=2 * ic_junction, **kwargs)

    def with_(self, **changes) -> "CircuitParams":
        return replace(self, **changes)


DESIGN = CircuitParams()


def fitted_params(per_junction: bool = True) -> CircuitParams:
    """Parameters reported by the DC calibration fit (1.8 uA, 14.8 Ohm, 3.8 pF).

    The reported 1.8 uA is ambiguous between the per-junction and the total
    critical current. ``per_junction=True`` (default) doubles it.
    """
    ic = 1.8e-6
    return CircuitParams(ic_total=2 * ic if per_junction else ic, c_shunt=3.8e-12, z0=14.8)


def wrap_deg(angle):
    """Wrap degrees to (-180, 180]."""
    a = np.asarray(angle, dtype=float)
    w = -((-a + 180.0) % 360.0) + 180.0
    return w if w.ndim else float(w)


def unwrap_deg(angle, axis=-1):
    return np.rad2deg(np.unwrap(np.deg2rad(np.asarray(angle, dtype=float)), axis=axis))


def _check_clamp(flux, params: CircuitParams):
    f = np.asarray(flux, dtype=float)
    if not np.all(np.isfinite(f)):
        raise OperatingRangeError("flux must be finite")
    # the clamp is a distance from the nearest sweet spot, so the model stays Phi0-periodic
    d = np.abs(f - np.round(f))
    if np.any(d > params.flux_clamp + 1e-12):
        worst = float(np.max(d))
        raise OperatingRangeError(
            f"flux lies {worst:.4g} Phi0 from the nearest integer, beyond the operating clamp {params.flux_clamp}"
        )
    return f


def _scalar_or_array(x):
    return float(x) if np.ndim(x) == 0 else x


def josephson_inductance(flux, params: CircuitParams):
    """SQUID inductance ``Phi0 / (2 pi Ic |cos(pi flux)|)`` in henries."""
    f = np.asarray(flux, dtype=float)
    c = np.abs(np.cos(np.pi * f))
    # cos(pi/2) is ~6e-17 in floating point, not 0
    if np.any(c < 1e-12):
        raise DivergenceError("Josephson inductance diverges at half-integer flux")
    return _scalar_or_array(PHI0 / (2 * np.pi * params.ic_total * c))


def resonant_frequency(flux, params: CircuitParams):
    """LC resonance frequency (Hz) at the given flux."""
    f = _check_clamp(flux, params)
    lj = josephson_inductance(f, params)
    return _scalar_or_array(1.0 / (2 * np.pi * np.sqrt(lj * params.c_shunt)))


def resonant_frequency_from_pole(flux, params: CircuitParams, rtol=1e-13) -> float:
    """Resonance located as the zero of the SQUID/capacitor admittance.

    Independent of :func:`resonant_frequency`; used to cross-check it.
    """
    f = float(_check_clamp(flux, params))
    lj = josephson_inductance(f, params)

    def im_admittance(freq):
        w = 2 * np.pi * freq
        return w * params.c_shunt - 1.0 / (w * lj)

    return optimize.bisect(im_admittance, 1e6, 1e14, rtol=rtol, maxiter=500)


def resonator_impedance(omega, flux, params: CircuitParams):
    """Impedance of the SQUID in parallel with the shunt capacitor.

    Parameters
    ----------
    omega : float or array
        Angular frequency in rad/s.
    flux : float or array
        Applied flux in Phi0.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w <= 0):
        raise ValueError("omega must be positive")
    f = _check_clamp(flux, params)
    lj = np.asarray(josephson_inductance(f, params))
    denom = 1.0 - w**2 * lj * params.c_shunt
    if np.any(np.abs(denom) < 1e-12):
        raise PoleError("impedance evaluated at the resonance pole")
    z = 1j * w * lj / denom
    return complex(z) if z.ndim == 0 else z


def _reactance_terms(flux, params: CircuitParams):
    f = _check_clamp(flux, params)
    lj = np.asarray(josephson_inductance(f, params))
    w = 2 * np.pi * params.probe_freq
    d = 1.0 - w**2 * lj * params.c_shunt
    return f, lj, w, d


def reflection_coefficient(flux, params: CircuitParams):
    """Complex reflection coefficient ``(Z_r - Z0) / (Z_r + Z0)`` at the probe tone.

    Written in terms of ``N = i w L`` and ``D = 1 - w^2 L C`` so it stays
    finite at the resonance, where it equals +1.
    """
    _, lj, w, d = _reactance_terms(flux, params)
    num = 1j * w * lj
    g = (num - params.z0 * d) / (num + params.z0 * d)
    return complex(g) if g.ndim == 0 else g


def reflection_angle(flux, params: CircuitParams):
    """Reflection angle in degrees, wrapped to (-180, 180]."""
    g = np.asarray(reflection_coefficient(flux, params))
    return wrap_deg(np.angle(g, deg=True))


def calibration_curve(flux, params: CircuitParams):
    """Reflection angle unwrapped continuously along a monotone flux grid."""
    return unwrap_deg(np.atleast_1d(reflection_angle(flux, params)))


def transducer_gain(flux, params: CircuitParams):
    """Analytic flux-to-phase gain d(angle)/d(flux) in deg/Phi0.

    With ``X = w L / D`` the angle is ``pi - 2 atan(X / Z0)``, which gives
    ``-2 Z0 w L' / (Z0^2 D^2 + w^2 L^2)`` with ``L' = pi L tan(pi flux)``.
    The sign is negative for positive flux: the angle falls as the
    resonance is pulled down toward the probe.
    """
    f, lj, w, d = _reactance_terms(flux, params)
    dl = np.pi * lj * np.tan(np.pi * f)
    g = -2 * params.z0 * w * dl / (params.z0**2 * d**2 + (w * lj) ** 2)
    return _scalar_or_array(np.rad2deg(g))


def transducer_gain_numeric(flux, params: CircuitParams, step: float = 1e-6):
    """Central finite-difference gain, for checking :func:`transducer_gain`."""
    f = np.asarray(flux, dtype=float)
    lo = np.clip(f - step, -params.flux_clamp, params.flux_clamp)
    hi = np.clip(f + step, -params.flux_clamp, params.flux_clamp)
    da = wrap_deg(np.asarray(reflection_angle(hi, params)) - np.asarray(reflection_angle(lo, params)))
    return _scalar_or_array(da / (hi - lo))


def flux_sensitivity(flux, params: CircuitParams, phase_noise: float = 0.25):
    """Flux noise equivalent to ``phase_noise`` degrees: noise / |gain|.

    Where the gain vanishes the result is ``inf`` rather than an error.
    """
    if phase_noise < 0:
        raise ValueError("phase_noise must be non-negative")
    g = np.abs(np.asarray(transducer_gain(flux, params), dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(g > 0, phase_noise / np.where(g > 0, g, 1.0), np.inf)
    if phase_noise == 0:
        s = np.zeros_like(g)
    return _scalar_or_array(s)


def bandwidth(params: CircuitParams) -> float:
    """Flux-independent resonator bandwidth 1 / (2 pi Z0 C) in Hz."""
    return 1.0 / (2 * np.pi * params.z0 * params.c_shunt)


def peak_gain(params: CircuitParams, n: int = 4001):
    """Flux (on [0, clamp]) and value of the largest |gain|."""
    grid = np.linspace(0.0, params.flux_clamp, n)
    g = np.abs(transducer_gain(grid, params))
    i = int(np.argmax(g))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, n - 1)]
    res = optimize.minimize_scalar(
        lambda x: -abs(transducer_gain(x, params)), bounds=(lo, hi), method="bounded",
        options={"xatol": 1e-10},
    )
    return float(res.x), float(abs(transducer_gain(res.x, params)))
