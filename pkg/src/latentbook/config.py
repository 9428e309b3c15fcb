"""Experiment configuration: JSON schema, validation and object builders.

A configuration is a JSON object whose sections and keys are exactly those
of :data:`DEFAULTS`; missing keys take the default value and unknown keys
are rejected.  Rate functions are objects with a ``type`` field:

* ``{"type": "constant", "level": x}``
* ``{"type": "step", "omega_plus": a, "omega_minus": b}``
* ``{"type": "exponential", "omega_plus": a, "omega_minus": b, "mu": m}``
* ``{"type": "tabulated", "y": [...], "buy": [...], "sell": [...]}``

A bare number for ``model.nu`` means a constant cancellation rate.
"""
from __future__ import annotations

import copy
import json
import math

from .agents import Distribution, SimConfig
from .errors import ConfigurationError
from .evolution import EvolutionConfig
from .msd import Constant, ExponentialPair, ModelParams, PriceGrid, StepPair, Tabulated

DEFAULTS = {
    "model": {
        "D": 1.0,
        "nu": 1.0,
        "omega": {"type": "step", "omega_plus": 1.0, "omega_minus": 1.0},
        "sigma": 0.0,
    },
    "grid": {"y_min": -8.0, "y_max": 8.0, "n": 1600},
    "evolution": {"dt": 0.001, "scheme": "crank_nicolson", "boundary": "auto",
                  "damping_steps": 4, "t": 1.0, "initial": "truncated_stationary"},
    "auction": {
        "tau": 0.001,
        "n_auctions": 0,
        "q_extra": 0.0,
        "tau_list": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4],
        "q_list": [0.01, 0.1, 1.0, 10.0, 100.0, 300.0],
        "dq_fraction": 1e-3,
        "cells_per_scale": 10,
        "steps_per_period": 20,
    },
    "wiener_hopf": {"u_max": 24.0, "du": 0.05, "tol": 1e-10, "max_iter": 20000,
                    "compare_tau": []},
    "agent_sim": {
        "epsilon": 0.25,
        "dt": 0.01,
        "beta_var": 0.0,
        "beta_kind": "normal",
        "sigma_i": 1.0,
        "sigma_i_var": 0.0,
        "reaction_var": None,
        "seed": 0,
        "horizon": 10.0,
        "tau": 0.1,
        "window": [-5.0, 5.0],
        "burn_in": 0.0,
        "bin_width": 0.1,
        "n_paths": 0,
    },
    "ingest": {"input": None, "bin_width": 0.01, "max_offset": 5.0, "window": None,
               "weighting": "equal"},
    "impact": {"tau": 0.001, "q_list": [0.001, 0.01, 0.1, 1.0, 10.0, 100.0, 1000.0, 10000.0]},
    "output": {"directory": "out", "formats": ["csv"]},
}

_NULLABLE = {("agent_sim", "reaction_var"), ("ingest", "input"), ("ingest", "window")}


def _merge(defaults: dict, given: dict, path: str) -> dict:
    if not isinstance(given, dict):
        raise ConfigurationError(f"{path or 'config'} must be an object")
    unknown = sorted(set(given) - set(defaults))
    if unknown:
        raise ConfigurationError(f"unknown key(s) in {path or 'config'}: {', '.join(unknown)}")
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        where = f"{path}.{key}" if path else key
        if isinstance(defaults[key], dict) and path == "":
            out[key] = _merge(defaults[key], value, where)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _number(cfg, section, key, positive=False, nonneg=False, integer=False):
    v = cfg[section][key]
    name = f"{section}.{key}"
    if v is None and (section, key) in _NULLABLE:
        return
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigurationError(f"{name} must be a number")
    if integer and int(v) != v:
        raise ConfigurationError(f"{name} must be an integer")
    if not math.isfinite(v):
        raise ConfigurationError(f"{name} must be finite")
    if positive and not v > 0:
        raise ConfigurationError(f"{name} must be > 0")
    if nonneg and v < 0:
        raise ConfigurationError(f"{name} must be >= 0")


def _number_list(cfg, section, key, positive=True):
    v = cfg[section][key]
    if not isinstance(v, list) or any(isinstance(x, bool) or not isinstance(x, (int, float))
                                      or not math.isfinite(x) for x in v):
        raise ConfigurationError(f"{section}.{key} must be a list of numbers")
    if positive and any(x <= 0 for x in v):
        raise ConfigurationError(f"{section}.{key} entries must be > 0")


def validate(raw: dict) -> dict:
    """Merge ``raw`` into the defaults and check every value."""
    cfg = _merge(DEFAULTS, raw, "")
    for key in ("D",):
        _number(cfg, "model", key, positive=True)
    _number(cfg, "model", "sigma", nonneg=True)
    for key in ("y_min", "y_max"):
        _number(cfg, "grid", key)
    _number(cfg, "grid", "n", positive=True, integer=True)
    for key in ("dt", "t"):
        _number(cfg, "evolution", key, positive=True)
    _number(cfg, "evolution", "damping_steps", nonneg=True, integer=True)
    if cfg["evolution"]["initial"] not in ("zero", "stationary", "truncated_stationary"):
        raise ConfigurationError(
            "evolution.initial must be zero, stationary or truncated_stationary")
    a = "auction"
    _number(cfg, a, "tau", nonneg=True)
    _number(cfg, a, "n_auctions", nonneg=True, integer=True)
    _number(cfg, a, "q_extra")
    _number(cfg, a, "dq_fraction", positive=True)
    _number(cfg, a, "cells_per_scale", positive=True, integer=True)
    _number(cfg, a, "steps_per_period", positive=True, integer=True)
    _number_list(cfg, a, "tau_list")
    _number_list(cfg, a, "q_list")
    w = "wiener_hopf"
    for key in ("u_max", "du", "tol"):
        _number(cfg, w, key, positive=True)
    _number(cfg, w, "max_iter", positive=True, integer=True)
    _number_list(cfg, w, "compare_tau")
    s = "agent_sim"
    for key in ("epsilon", "dt", "bin_width"):
        _number(cfg, s, key, positive=True)
    for key in ("beta_var", "sigma_i", "sigma_i_var", "horizon", "tau", "burn_in",
                "reaction_var"):
        _number(cfg, s, key, nonneg=True)
    _number(cfg, s, "seed", nonneg=True, integer=True)
    _number(cfg, s, "n_paths", nonneg=True, integer=True)
    if not 0 <= cfg[s]["seed"] < 2 ** 64:
        raise ConfigurationError("agent_sim.seed must fit in 64 bits")
    _number_list(cfg, s, "window", positive=False)
    if len(cfg[s]["window"]) != 2:
        raise ConfigurationError("agent_sim.window must be [lo, hi]")
    if cfg[s]["beta_kind"] not in ("normal", "uniform", "gamma"):
        raise ConfigurationError("agent_sim.beta_kind must be normal, uniform or gamma")
    i = "ingest"
    _number(cfg, i, "bin_width", positive=True)
    _number(cfg, i, "max_offset", positive=True)
    if cfg[i]["window"] is not None:
        _number_list(cfg, i, "window", positive=False)
        if len(cfg[i]["window"]) != 2:
            raise ConfigurationError("ingest.window must be [lo, hi]")
    if cfg[i]["weighting"] not in ("equal", "volume"):
        raise ConfigurationError("ingest.weighting must be equal or volume")
    if cfg[i]["input"] is not None and not isinstance(cfg[i]["input"], str):
        raise ConfigurationError("ingest.input must be a path string")
    _number(cfg, "impact", "tau", positive=True)
    _number_list(cfg, "impact", "q_list", positive=False)
    if not isinstance(cfg["output"]["directory"], str):
        raise ConfigurationError("output.directory must be a string")
    if cfg["output"]["formats"] != ["csv"]:
        raise ConfigurationError("output.formats supports only [\"csv\"]")
    # build once so that every structural problem surfaces before any run
    build_params(cfg)
    build_grid(cfg)
    build_evolution(cfg)
    return cfg


def load(path) -> dict:
    """Read and validate a JSON configuration file."""
    with open(path) as fh:
        text = fh.read()
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"invalid JSON in {path}: {exc}") from None
    return validate(raw)


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"


# --- builders ------------------------------------------------------------------

def build_rate(spec, name: str):
    if isinstance(spec, (int, float)) and not isinstance(spec, bool):
        return Constant(float(spec))
    if not isinstance(spec, dict) or "type" not in spec:
        raise ConfigurationError(f"{name} must be a number or an object with a type")
    kind = spec["type"]
    fields = {"constant": {"level"},
              "step": {"omega_plus", "omega_minus"},
              "exponential": {"omega_plus", "omega_minus", "mu"},
              "tabulated": {"y", "buy", "sell"}}
    if kind not in fields:
        raise ConfigurationError(f"{name}.type must be one of {sorted(fields)}")
    extra = set(spec) - fields[kind] - {"type"}
    if extra:
        raise ConfigurationError(f"unknown key(s) in {name}: {', '.join(sorted(extra))}")
    need = fields[kind] - ({"sell"} if kind == "tabulated" else set())
    missing = need - set(spec)
    if missing:
        raise ConfigurationError(f"missing key(s) in {name}: {', '.join(sorted(missing))}")
    try:
        if kind == "constant":
            return Constant(float(spec["level"]))
        if kind == "step":
            return StepPair(float(spec["omega_plus"]), float(spec["omega_minus"]))
        if kind == "exponential":
            return ExponentialPair(float(spec["omega_plus"]), float(spec["omega_minus"]),
                                   float(spec["mu"]))
        return Tabulated(spec["y"], spec["buy"], spec.get("sell"))
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


def build_params(cfg: dict, tau: float | None = None) -> ModelParams:
    m = cfg["model"]
    return ModelParams(float(m["D"]), build_rate(m["nu"], "model.nu"),
                       build_rate(m["omega"], "model.omega"),
                       tau=float(cfg["auction"]["tau"] if tau is None else tau),
                       sigma=float(m["sigma"]))


def build_grid(cfg: dict) -> PriceGrid:
    g = cfg["grid"]
    return PriceGrid(float(g["y_min"]), float(g["y_max"]), int(g["n"]))


def build_evolution(cfg: dict, dt: float | None = None) -> EvolutionConfig:
    e = cfg["evolution"]
    return EvolutionConfig(float(e["dt"] if dt is None else dt), e["scheme"], e["boundary"],
                           int(e["damping_steps"]))


def build_sim(cfg: dict) -> SimConfig:
    s = cfg["agent_sim"]
    params = build_params(cfg, tau=s["tau"])
    if s["beta_var"] > 0:
        beta = Distribution(s["beta_kind"], 1.0, float(s["beta_var"]))
    else:
        beta = Distribution.constant(1.0)
    if s["sigma_i_var"] > 0:
        sig = Distribution("gamma", float(s["sigma_i"]), float(s["sigma_i_var"]))
    else:
        sig = Distribution.constant(float(s["sigma_i"]))
    lo, hi = s["window"]
    half = int(round(max(-lo, hi) / s["bin_width"]))
    grid = PriceGrid(-half * s["bin_width"], half * s["bin_width"], 2 * half)
    return SimConfig(params, float(s["epsilon"]), float(s["dt"]), float(s["horizon"]),
                     beta, sig, int(s["seed"]), window=(float(lo), float(hi)),
                     reaction_var=s["reaction_var"], snapshot_grid=grid,
                     burn_in=float(s["burn_in"]))
