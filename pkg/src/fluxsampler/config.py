"""JSON run configuration: defaults, overrides and validation into domain objects.

Frequencies are given in GHz and times in ns, matching the trace-file
headers. Every validation failure names the offending ``section.key``.
"""
from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .circuit import CircuitParams
from .signalchain import NoiseConfig, ReflectionScenario, ScopeModel
from .waveforms import ExpSettlingModel, WaveformConfig

ENV_CONFIG_DIR = "FLUXSAMPLER_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "fluxsampler.json"


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "circuit": {"ic_total_uA": 4.0, "c_shunt_pF": 4.0, "z0": 15.0, "probe_freq_GHz": 6.4,
                "flux_clamp": 0.38},
    "waveform": {"awg_rate_GHz": 1.0, "lpf_cutoff_GHz": 0.22, "full_scale_flux": 1.75,
                 "mutual_inductance_pH": None},
    "step": {"flux_start": 0.08, "flux_end": 0.31, "t_edge": 20.0, "duration": 1020.0},
    "settling": {"terms": [[0.48, 0.73], [0.04, 7.9], [0.01, 53.5]]},
    "noise": {"jitter_ps": 0.0, "additive_noise_rms": 0.0, "phase_noise_deg": 0.0,
              "n_averages": 1},
    "reflection": None,
    "demod": {"mode": "digital", "sample_rate_GHz": 40.0, "lpf_cutoff_GHz": None,
              "out_rate_GHz": 1.0},
    "scope": {"dc_settle_amp": 2e-3, "dc_settle_tau": 30e3},
    "fit": {"n_terms": 3, "edge_time": 20.0, "exclude_above": 0.38, "fit_z0": False},
    "classify": {"horizon_us": 500.0, "thresholds": [2e-3, 5e-2]},
}

REFLECTION_KEYS = {"amplitude_db", "one_way_delay", "reflection_phase", "chain_delay"}


def _merge(base: dict, over: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        name = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"{name}: unknown config key")
        if k == "reflection" and v is not None:
            if not isinstance(v, dict):
                raise ConfigError("reflection: must be an object or null")
            extra = set(v) - REFLECTION_KEYS
            if extra:
                raise ConfigError(f"reflection.{sorted(extra)[0]}: unknown config key")
            out[k] = {**(base[k] or {}), **v}
        elif isinstance(base[k], dict) and isinstance(v, dict):
            out[k] = _merge(base[k], v, name + ".")
        else:
            out[k] = v
    return out


def resolve_config_path(name: str | None) -> Path | None:
    """Explicit path, else a name inside ``$FLUXSAMPLER_CONFIG_DIR``, else that dir's default file."""
    cdir = os.environ.get(ENV_CONFIG_DIR)
    if name:
        p = Path(name)
        if p.exists() or not cdir:
            return p
        return Path(cdir) / name
    if cdir and (Path(cdir) / DEFAULT_CONFIG_NAME).exists():
        return Path(cdir) / DEFAULT_CONFIG_NAME
    return None


def load_config(path=None, overrides: dict | None = None) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    p = resolve_config_path(str(path) if path else None)
    if p is not None:
        try:
            user = json.loads(Path(p).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(user, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = _merge(cfg, user)
    for key, value in (overrides or {}).items():
        cfg = set_key(cfg, key, value)
    validate(cfg)
    return cfg


def set_key(cfg: dict, dotted: str, value) -> dict:
    """Return a copy of ``cfg`` with ``section.key`` replaced."""
    parts = dotted.split(".")
    nested = value
    for p in reversed(parts):
        nested = {p: nested}
    return _merge(cfg, nested)


def parse_assignment(text: str):
    """``key=value`` with the value parsed as JSON when possible."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} must look like section.key=value")
    key, raw = text.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def _build(name: str, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name}: {exc}") from None


def circuit_params(cfg: dict) -> CircuitParams:
    c = cfg["circuit"]
    for key in c:
        v = c[key]
        if not isinstance(v, (int, float)) or isinstance(v, bool):
            raise ConfigError(f"circuit.{key}: must be a number")
    for key in ("ic_total_uA", "c_shunt_pF", "z0", "probe_freq_GHz"):
        if not c[key] > 0:
            raise ConfigError(f"circuit.{key}: must be positive, got {c[key]!r}")
    if not 0 < c["flux_clamp"] < 0.5:
        raise ConfigError(f"circuit.flux_clamp: must lie in (0, 0.5), got {c['flux_clamp']!r}")
    return CircuitParams(c["ic_total_uA"] * 1e-6, c["c_shunt_pF"] * 1e-12, c["z0"],
                         c["probe_freq_GHz"] * 1e9, c["flux_clamp"])


def waveform_config(cfg: dict) -> WaveformConfig:
    w = cfg["waveform"]
    m = w["mutual_inductance_pH"]
    for key in ("awg_rate_GHz", "lpf_cutoff_GHz"):
        if not isinstance(w[key], (int, float)) or not w[key] > 0:
            raise ConfigError(f"waveform.{key}: must be positive, got {w[key]!r}")
    return _build("waveform", lambda: WaveformConfig(
        w["awg_rate_GHz"] * 1e9, w["lpf_cutoff_GHz"] * 1e9, None if m is None else m * 1e-12,
        w["full_scale_flux"]))


def settling_model(cfg: dict) -> ExpSettlingModel:
    terms = cfg["settling"]["terms"]
    if not isinstance(terms, list) or any(not isinstance(t, (list, tuple)) or len(t) != 2 for t in terms):
        raise ConfigError("settling.terms: must be a list of [alpha, tau_ns] pairs")
    return _build("settling.terms", lambda: ExpSettlingModel(tuple(map(tuple, terms))))


def noise_config(cfg: dict, seed=None) -> NoiseConfig:
    n = cfg["noise"]
    for key in ("jitter_ps", "additive_noise_rms", "phase_noise_deg"):
        if not isinstance(n[key], (int, float)) or n[key] < 0:
            raise ConfigError(f"noise.{key}: must be a number >= 0, got {n[key]!r}")
    if not isinstance(n["n_averages"], int) or n["n_averages"] < 1:
        raise ConfigError(f"noise.n_averages: must be an integer >= 1, got {n['n_averages']!r}")
    return NoiseConfig(n["jitter_ps"] * 1e-12, n["additive_noise_rms"], n["phase_noise_deg"],
                       n["n_averages"], cfg["seed"] if seed is None else seed)


def reflection_scenario(cfg: dict) -> ReflectionScenario | None:
    r = cfg["reflection"]
    if r is None:
        return None
    missing = {"amplitude_db", "one_way_delay"} - set(r)
    if missing:
        raise ConfigError(f"reflection.{sorted(missing)[0]}: required")
    if not r["amplitude_db"] < 0:
        raise ConfigError(f"reflection.amplitude_db: must be < 0, got {r['amplitude_db']!r}")
    for key in ("one_way_delay", "chain_delay"):
        if key in r and not r[key] >= 0:
            raise ConfigError(f"reflection.{key}: must be >= 0, got {r[key]!r}")
    return _build("reflection", lambda: ReflectionScenario(**r))


def scope_model(cfg: dict) -> ScopeModel:
    s = cfg["scope"]
    if not s["dc_settle_amp"] >= 0:
        raise ConfigError("scope.dc_settle_amp: must be >= 0")
    if not s["dc_settle_tau"] > 0:
        raise ConfigError("scope.dc_settle_tau: must be positive")
    return ScopeModel(s["dc_settle_amp"], s["dc_settle_tau"])


def validate(cfg: dict) -> None:
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError(f"seed: must be a non-negative integer, got {cfg['seed']!r}")
    params = circuit_params(cfg)
    waveform_config(cfg)
    settling_model(cfg)
    noise_config(cfg)
    reflection_scenario(cfg)
    scope_model(cfg)
    d = cfg["demod"]
    if d["mode"] not in ("digital", "hardware"):
        raise ConfigError(f"demod.mode: must be 'digital' or 'hardware', got {d['mode']!r}")
    if not isinstance(d["sample_rate_GHz"], (int, float)) or not d["sample_rate_GHz"] * 1e9 > 2 * params.probe_freq:
        raise ConfigError("demod.sample_rate_GHz: must exceed twice the probe frequency")
    if d["lpf_cutoff_GHz"] is not None and not 0 < d["lpf_cutoff_GHz"] * 1e9 < params.probe_freq / 2:
        raise ConfigError("demod.lpf_cutoff_GHz: must lie in (0, probe_freq / 2)")
    f = cfg["fit"]
    if f["n_terms"] not in (1, 2, 3, "auto"):
        raise ConfigError(f"fit.n_terms: must be 1, 2, 3 or 'auto', got {f['n_terms']!r}")
    if not 0 < f["exclude_above"] < 0.5:
        raise ConfigError("fit.exclude_above: must lie in (0, 0.5)")
    s = cfg["step"]
    for key in ("flux_start", "flux_end"):
        if not abs(s[key]) <= params.flux_clamp:
            raise ConfigError(f"step.{key}: |flux| must not exceed circuit.flux_clamp")
    if not s["duration"] > s["t_edge"] >= 0:
        raise ConfigError("step.duration: must exceed step.t_edge >= 0")
    c = cfg["classify"]
    thr = c["thresholds"]
    if not (isinstance(thr, list) and len(thr) == 2 and 0 < thr[0] < thr[1]):
        raise ConfigError("classify.thresholds: must be [good_bad, bad_very_bad] with 0 < a < b")
    if not c["horizon_us"] > 0:
        raise ConfigError("classify.horizon_us: must be positive")
