"""Deterministic SVG figures (no timestamps, fixed element ids)."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

KINDS = ("calibration", "gain", "sensitivity", "step", "theta_scan")


class PlotDataError(ValueError):
    pass


def _vec(data: dict, key: str, kind: str) -> np.ndarray:
    if key not in data:
        raise PlotDataError(f"{kind} plot needs a {key!r} array")
    v = np.asarray(data[key], dtype=float)
    if v.ndim != 1 or v.size < 2:
        raise PlotDataError(f"{kind} plot: {key!r} must be 1-D with at least 2 points")
    return v


def _same(kind, x, *ys):
    for name, y in ys:
        if y.shape != x.shape:
            raise PlotDataError(f"{kind} plot: {name!r} has {y.size} points, expected {x.size}")


def _as_dict(data) -> dict:
    if isinstance(data, dict):
        return data
    # ThetaErrScan and similar result objects
    if hasattr(data, "__dataclass_fields__"):
        return {k: getattr(data, k) for k in data.__dataclass_fields__}
    raise PlotDataError(f"cannot plot object of type {type(data).__name__}")


def emit_plot(data, kind: str, path) -> Path:
    """Render ``data`` as an SVG.

    ``data`` keys per kind: calibration ``flux, phase[, fit]``; gain
    ``flux, gain``; sensitivity ``flux, sensitivity``; step ``time,
    value[, fit]``; theta_scan ``times, spread[, theta_err]`` (a
    ``ThetaErrScan`` also works).
    """
    if kind not in KINDS:
        raise PlotDataError(f"unknown plot kind {kind!r}; choose from {', '.join(KINDS)}")
    d = _as_dict(data)
    path = Path(path)
    with plt.rc_context({"svg.hashsalt": "fluxsampler", "svg.fonttype": "path"}):
        if kind == "theta_scan":
            fig, axes = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
        else:
            fig, ax = plt.subplots(figsize=(6, 4))
        try:
            if kind == "calibration":
                x, y = _vec(d, "flux", kind), _vec(d, "phase", kind)
                _same(kind, x, ("phase", y))
                ax.plot(x, y, "o", ms=3, label="data")
                if d.get("fit") is not None:
                    f = _vec(d, "fit", kind)
                    _same(kind, x, ("fit", f))
                    ax.plot(x, f, "-", label="fit")
                ax.set_xlabel("flux (Phi0)")
                ax.set_ylabel("reflection angle (deg)")
                ax.legend()
            elif kind in ("gain", "sensitivity"):
                x, y = _vec(d, "flux", kind), _vec(d, kind, kind)
                _same(kind, x, (kind, y))
                if kind == "sensitivity":
                    ax.semilogy(x, np.where(np.isfinite(y), y, np.nan))
                    ax.set_ylabel("flux sensitivity (Phi0)")
                else:
                    ax.plot(x, y)
                    ax.set_ylabel("gain (deg/Phi0)")
                ax.set_xlabel("flux (Phi0)")
            elif kind == "step":
                t, v = _vec(d, "time", kind), _vec(d, "value", kind)
                _same(kind, t, ("value", v))
                ax.plot(t, v, lw=0.8, label="data")
                if d.get("fit") is not None:
                    f = _vec(d, "fit", kind)
                    _same(kind, t, ("fit", f))
                    ax.plot(t, f, "--", label="fit")
                ax.set_xlabel("time (ns)")
                ax.set_ylabel("A(t)")
                ax.legend()
            else:
                t, s = _vec(d, "times", kind), _vec(d, "spread", kind)
                _same(kind, t, ("spread", s))
                err = d.get("theta_err")
                if err is not None:
                    err = np.asarray(err, dtype=float)
                    if err.ndim != 2 or err.shape[1] != t.size:
                        raise PlotDataError("theta_scan plot: 'theta_err' must have shape (n_traces, n_times)")
                    axes[0].plot(t, err.T, lw=0.7)
                axes[0].set_ylabel("theta_err (deg)")
                axes[1].plot(t, s)
                axes[1].set_ylabel("spread (deg)")
                axes[1].set_xlabel("time after edge (ns)")
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
        finally:
            plt.close(fig)
    return path
