"""CSV trace files with a ``#``-prefixed header.

Layout::

    # fluxsampler-trace: 1
    # kind: phase
    # columns: time,phase,flux
    # units: ns,deg,Phi0
    # sample_rate: 40 GHz
    # seed: 7
    # scenario: machined-aluminum
    0,129.51,0
    ...

Values are written with 17 significant digits so a save/load round trip
is exact. Paths ending in ``.gz`` are gzip-compressed transparently.
"""
from __future__ import annotations

import gzip
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signalchain import PhaseTrace, RFTrace
from .waveforms import FluxWaveform

FORMAT_VERSION = "1"

UNITS = {
    "time": "ns", "flux": "Phi0", "phase": "deg", "signal": "V", "reference": "V",
    "gain": "deg/Phi0", "sensitivity": "Phi0", "fit": "deg", "spread": "deg", "a": "1",
}

# required leading columns and optional trailing ones per kind
KINDS = {
    "flux": (("time", "flux"), ()),
    "phase": (("time", "phase"), ("flux",)),
    "rf": (("time", "signal", "reference"), ()),
    "sweep": (("flux",), ("phase", "fit", "gain", "sensitivity")),
    "scan": (("time", "spread"), ()),
}

RATE_RTOL = 1e-9


class TraceFormatError(ValueError):
    pass


@dataclass
class Sweep:
    """Values tabulated against flux (calibration, gain or sensitivity)."""

    flux: np.ndarray
    values: dict = field(default_factory=dict)

    def __post_init__(self):
        self.flux = np.asarray(self.flux, dtype=float)
        for k, v in list(self.values.items()):
            if k not in KINDS["sweep"][1]:
                raise TraceFormatError(f"unknown sweep column {k!r}")
            v = np.asarray(v, dtype=float)
            if v.shape != self.flux.shape:
                raise TraceFormatError(f"sweep column {k!r} length differs from flux")
            self.values[k] = v


@dataclass
class ScanTrace:
    """Theta_err spread versus time after the edge."""

    sample_rate: float
    times: np.ndarray
    spread: np.ndarray


@dataclass
class TraceFile:
    kind: str
    columns: list
    data: np.ndarray
    sample_rate: float | None = None
    probe_freq: float | None = None
    seed: int | None = None
    scenario: str | None = None

    def column(self, name: str) -> np.ndarray:
        return self.data[:, self.columns.index(name)]

    def to_trace(self):
        if self.kind == "sweep":
            return Sweep(self.column("flux"), {c: self.column(c) for c in self.columns[1:]})
        t0 = float(self.data[0, 0])
        if self.kind == "scan":
            return ScanTrace(self.sample_rate, self.column("time"), self.column("spread"))
        if self.kind == "flux":
            return FluxWaveform(self.sample_rate, self.column("flux"), t0)
        if self.kind == "phase":
            flux = self.column("flux") if "flux" in self.columns else None
            return PhaseTrace(self.sample_rate, self.column("phase"), t0, flux)
        return RFTrace(self.sample_rate, self.column("signal"), self.column("reference"),
                       self.probe_freq, t0)


def _open(path: Path, mode: str):
    if path.suffix == ".gz":
        if "w" in mode:
            # mtime=0 keeps compressed output byte-identical across runs
            raw = open(path, "wb")
            return io.TextIOWrapper(gzip.GzipFile(filename="", mode="wb", fileobj=raw, mtime=0),
                                    encoding="utf-8", newline="\n"), raw
        return io.TextIOWrapper(gzip.open(path, "rb"), encoding="utf-8"), None
    return open(path, mode, encoding="utf-8", newline="\n" if "w" in mode else None), None


def trace_file_from(trace, seed=None, scenario=None) -> TraceFile:
    if isinstance(trace, FluxWaveform):
        cols, arrays, kind = ["time", "flux"], [trace.times, trace.samples], "flux"
        rate, probe = trace.sample_rate, None
    elif isinstance(trace, PhaseTrace):
        cols, arrays, kind = ["time", "phase"], [trace.times, trace.phase], "phase"
        if trace.flux is not None:
            cols.append("flux")
            arrays.append(trace.flux)
        rate, probe = trace.sample_rate, None
    elif isinstance(trace, RFTrace):
        cols, arrays, kind = ["time", "signal", "reference"], [trace.times, trace.signal, trace.reference], "rf"
        rate, probe = trace.sample_rate, trace.probe_freq
    elif isinstance(trace, ScanTrace):
        cols, arrays, kind = ["time", "spread"], [trace.times, trace.spread], "scan"
        rate, probe = trace.sample_rate, None
    elif isinstance(trace, Sweep):
        cols = ["flux"] + list(trace.values)
        arrays, kind, rate, probe = [trace.flux] + list(trace.values.values()), "sweep", None, None
    else:
        raise TypeError(f"cannot save object of type {type(trace).__name__}")
    return TraceFile(kind, cols, np.column_stack(arrays), rate, probe, seed, scenario)


def save_trace(trace, path, seed: int | None = None, scenario: str | None = None) -> Path:
    tf = trace if isinstance(trace, TraceFile) else trace_file_from(trace, seed, scenario)
    path = Path(path)
    header = [
        f"fluxsampler-trace: {FORMAT_VERSION}",
        f"kind: {tf.kind}",
        "columns: " + ",".join(tf.columns),
        "units: " + ",".join(UNITS[c] for c in tf.columns),
    ]
    if tf.sample_rate is not None:
        header.append(f"sample_rate: {tf.sample_rate / 1e9:.17g} GHz")
    if tf.probe_freq is not None:
        header.append(f"probe_freq: {tf.probe_freq / 1e9:.17g} GHz")
    header.append(f"seed: {'none' if tf.seed is None else int(tf.seed)}")
    header.append(f"scenario: {tf.scenario or 'none'}")
    fh, raw = _open(path, "w")
    try:
        for line in header:
            fh.write(f"# {line}\n")
        np.savetxt(fh, tf.data, fmt="%.17g", delimiter=",")
    finally:
        fh.close()
        if raw is not None:
            raw.close()
    return path


def _parse_freq(value: str, key: str, lineno: int) -> float:
    parts = value.split()
    if len(parts) != 2 or parts[1] != "GHz":
        raise TraceFormatError(f"line {lineno}: {key} must be '<value> GHz', got {value!r}")
    try:
        v = float(parts[0]) * 1e9
    except ValueError:
        raise TraceFormatError(f"line {lineno}: {key} is not a number: {parts[0]!r}") from None
    if not np.isfinite(v) or v <= 0:
        raise TraceFormatError(f"line {lineno}: {key} must be positive")
    return v


def _locate_bad_row(lines, first_lineno, ncols):
    for k, line in enumerate(lines):
        cells = line.split(",")
        if len(cells) != ncols:
            raise TraceFormatError(
                f"line {first_lineno + k}: expected {ncols} columns, found {len(cells)}")
        for c in cells:
            try:
                float(c)
            except ValueError:
                raise TraceFormatError(f"line {first_lineno + k}: not a number: {c.strip()!r}") from None
    raise TraceFormatError("unparseable data block")


def read_trace_file(path) -> TraceFile:
    path = Path(path)
    fh, _ = _open(path, "r")
    with fh:
        text = fh.read().splitlines()
    meta, lineno = {}, 0
    for lineno, line in enumerate(text, start=1):
        if not line.startswith("#"):
            lineno -= 1
            break
        body = line[1:].strip()
        if ":" not in body:
            raise TraceFormatError(f"line {lineno}: malformed header line {line!r}")
        key, value = (s.strip() for s in body.split(":", 1))
        meta[key] = (value, lineno)
    for key in ("kind", "columns", "units"):
        if key not in meta:
            raise TraceFormatError(f"missing '{key}' header")
    kind = meta["kind"][0]
    if kind not in KINDS:
        raise TraceFormatError(f"line {meta['kind'][1]}: unknown kind {kind!r}")
    columns = [c.strip() for c in meta["columns"][0].split(",")]
    units = [u.strip() for u in meta["units"][0].split(",")]
    if len(units) != len(columns):
        raise TraceFormatError(f"line {meta['units'][1]}: {len(units)} units for {len(columns)} columns")
    required, optional = KINDS[kind]
    if tuple(columns[: len(required)]) != required or any(c not in optional for c in columns[len(required):]):
        raise TraceFormatError(f"line {meta['columns'][1]}: columns {columns} do not match kind {kind!r}")
    for c, u in zip(columns, units):
        if UNITS[c] != u:
            raise TraceFormatError(f"line {meta['units'][1]}: column {c!r} must be in {UNITS[c]}, got {u!r}")
    sample_rate = probe = None
    if kind != "sweep":
        if "sample_rate" not in meta:
            raise TraceFormatError("missing 'sample_rate' header")
        sample_rate = _parse_freq(meta["sample_rate"][0], "sample_rate", meta["sample_rate"][1])
    if kind == "rf":
        if "probe_freq" not in meta:
            raise TraceFormatError("missing 'probe_freq' header for an rf trace")
        probe = _parse_freq(meta["probe_freq"][0], "probe_freq", meta["probe_freq"][1])
    seed = None
    if "seed" in meta and meta["seed"][0] != "none":
        try:
            seed = int(meta["seed"][0])
        except ValueError:
            raise TraceFormatError(f"line {meta['seed'][1]}: seed must be an integer or 'none'") from None
    scenario = meta.get("scenario", ("none",))[0]
    scenario = None if scenario == "none" else scenario

    first = lineno + 1
    body = text[lineno:]
    while body and not body[-1].strip():
        body.pop()
    if not body:
        raise TraceFormatError("no data rows")
    try:
        data = np.loadtxt(body, delimiter=",", ndmin=2, dtype=float)
    except ValueError:
        _locate_bad_row(body, first, len(columns))
    if data.shape[1] != len(columns):
        raise TraceFormatError(f"line {first}: expected {len(columns)} columns, found {data.shape[1]}")
    bad = ~np.all(np.isfinite(data), axis=1)
    if np.any(bad):
        raise TraceFormatError(f"line {first + int(np.argmax(bad))}: non-finite value")
    tf = TraceFile(kind, columns, data, sample_rate, probe, seed, scenario)
    _check_axis(tf, first)
    return tf


def _check_axis(tf: TraceFile, first: int):
    x = tf.data[:, 0]
    step = np.diff(x)
    if np.any(step <= 0):
        raise TraceFormatError(
            f"line {first + 1 + int(np.argmax(step <= 0))}: {tf.columns[0]} is not strictly increasing")
    if tf.sample_rate is None or x.size < 2:
        return
    dt = 1e9 / tf.sample_rate
    implied = (x[-1] - x[0]) / (x.size - 1)
    if abs(implied / dt - 1) > RATE_RTOL:
        raise TraceFormatError(
            f"timestamps imply {1e9 / implied:.12g} S/s but the header declares {tf.sample_rate:.12g}")
    # guards against gaps that keep the mean spacing right
    dev = np.abs(x - (x[0] + np.arange(x.size) * dt))
    if np.max(dev) > 1e-3 * dt:
        raise TraceFormatError(f"line {first + int(np.argmax(dev))}: timestamp off the uniform grid")


def load_trace(path):
    """Typed object for a trace file: FluxWaveform, PhaseTrace, RFTrace, Sweep or ScanTrace."""
    return read_trace_file(path).to_trace()
