"""Flat dotted-key experiment configuration.

One JSON object, no nesting, no includes: every key is a dotted path with a
scalar or list value, so configs diff cleanly and the resolved echo re-parses
to the identical run.  Validation is total: the grid, the generator, every
weight, and every cross-field admissibility constraint are checked before any
compute starts, and violations name the constraint they break.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass

import numpy as np

from .adjoint import ramp_profile, smoothed_indicator, tanh_profile, tapered_linear
from .forward import gaussian, gaussian_difference, smooth_bump
from .generators import DriftSpec, GeneratorSpec, LevyMeasureSpec, LocalDiffusionSpec
from .grids import Grid
from .weights import WeightFunction

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "EXPERIMENTS",
    "canonical_json",
    "config_hash",
    "load_config",
    "parse_config",
]

EXPERIMENTS = (
    "forward-decay",
    "adjoint-oscillation",
    "duality-check",
    "particles",
    "coupling",
    "lyapunov-report",
    "rate-ode",
    "stationary",
)


class ConfigError(ValueError):
    """A config failed parse-time validation; message names the constraint."""


# key -> (type tag, default).  "float?" admits null.  A None default with a
# plain tag marks the key as required.
_SCHEMA = {
    "experiment": ("str", None),
    "grid.d": ("int", 1),
    "grid.n": ("int", 1024),
    "grid.half_width": ("float", 16.0),
    "diffusion.kind": ("str", "constant"),
    "diffusion.lambda0": ("float", 1.0),
    "diffusion.amplitude": ("float", 0.0),
    "levy.kind": ("str", "none"),
    "levy.sigma": ("float", 1.5),
    "levy.scale": ("float", 1.0),
    "drift.kind": ("str", "ou"),
    "drift.alpha": ("float", 1.0),
    "drift.gamma": ("float", 2.0),
    "drift.R": ("float", 1.0),
    "drift.amplitude": ("float", 0.3),
    "initial.kind": ("str", "gaussian"),
    "initial.center": ("float", 0.0),
    "initial.std": ("float", 1.0),
    "initial.center2": ("float", 0.0),
    "initial.std2": ("float", 2.0),
    "terminal.kind": ("str", "tanh"),
    "weights": ("str-list", ["pow0.5"]),
    "time.dt": ("float", 1e-3),
    "time.t_final": ("float", 10.0),
    "time.stride": ("int", 10),
    "solver.limiter": ("str", "mc"),
    "solver.eps_boundary": ("float?", None),
    "fit.model": ("str", "exponential"),
    "fit.t_lo": ("float?", None),
    "fit.t_hi": ("float?", None),
    "fit.transient_frac": ("float", 0.2),
    "particles.n": ("int", 20000),
    "particles.source": ("str", "initial"),
    "particles.x0": ("float", 0.0),
    "coupling.x0": ("float", -1.0),
    "coupling.y0": ("float", 1.0),
    "coupling.eps": ("float", 0.05),
    "coupling.n_pairs": ("int", 2000),
    "lyapunov.beta": ("float?", None),
    "lyapunov.eps": ("float", 0.5),
    "rate_ode.form": ("str", "constant"),
    "rate_ode.c": ("float", 1.0),
    "rate_ode.p": ("float", 0.5),
    "rate_ode.q": ("float", 1.0),
    "rate_ode.L": ("float", float(np.e)),
    "rate_ode.theta": ("float", 0.5),
    "rate_ode.t_final": ("float", 40.0),
    "rate_ode.n_points": ("int", 201),
    "seed": ("int", 0),
    "output.dir": ("str", "out"),
    "sweep.gamma": ("float-list", []),
    "sweep.sigma": ("float-list", []),
    "sweep.k": ("float-list", []),
    "sweep.kbar": ("float-list", []),
}

_CHOICES = {
    "experiment": EXPERIMENTS,
    "diffusion.kind": ("constant", "tanh"),
    "levy.kind": ("none", "fractional", "tempered"),
    "drift.kind": ("none", "ou", "power", "perturbed-power"),
    "initial.kind": ("gaussian", "gaussian-difference", "bump"),
    "terminal.kind": ("tanh", "ramp", "indicator", "tapered"),
    "fit.model": ("none", "exponential", "power", "stretched"),
    "particles.source": ("initial", "point"),
    "rate_ode.form": ("constant", "power", "inverse-log"),
    "solver.limiter": ("mc", "minmod", "fromm", "off"),
}

_WEIGHT_POW = re.compile(r"^pow([0-9.eE+-]+)$")
_WEIGHT_EXP = re.compile(r"^exp([0-9.eE+-]+)_([0-9.eE+-]+)$")


def _coerce(key, tag, value):
    if tag == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{key}: expected a string, got {value!r}")
        return value
    if tag == "int":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        if isinstance(value, float) and not value.is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if tag in ("float", "float?"):
        if value is None and tag == "float?":
            return None
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if tag == "str-list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{key}: expected a list of strings, got {value!r}")
        return list(value)
    if tag == "float-list":
        if not isinstance(value, list) or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) for v in value
        ):
            raise ConfigError(f"{key}: expected a list of numbers, got {value!r}")
        return [float(v) for v in value]
    raise AssertionError(tag)


def parse_weight(label: str) -> WeightFunction:
    """Weight descriptor in label form: pow<k> or exp<mu>_<k>."""
    m = _WEIGHT_POW.match(label)
    if m:
        return WeightFunction.power(float(m.group(1)))
    m = _WEIGHT_EXP.match(label)
    if m:
        return WeightFunction.exponential(float(m.group(1)), float(m.group(2)))
    raise ConfigError(f"weights: cannot parse {label!r}; use pow<k> or exp<mu>_<k>")


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully resolved, validated configuration plus the objects it names."""

    data: dict
    grid: Grid
    generator: GeneratorSpec
    weights: dict

    def __getitem__(self, key):
        return self.data[key]

    @property
    def experiment(self) -> str:
        return self.data["experiment"]

    def initial_density(self):
        kind = self.data["initial.kind"]
        if kind == "gaussian":
            return gaussian(self.grid, self.data["initial.center"], self.data["initial.std"])
        if kind == "gaussian-difference":
            return gaussian_difference(
                self.grid,
                self.data["initial.center"],
                self.data["initial.std"],
                self.data["initial.center2"],
                self.data["initial.std2"],
            )
        return smooth_bump(self.grid, self.data["initial.center"], self.data["initial.std"])

    def terminal_profile(self):
        kind = self.data["terminal.kind"]
        if kind == "tanh":
            return tanh_profile(self.grid)
        if kind == "ramp":
            return ramp_profile(self.grid)
        if kind == "indicator":
            return smoothed_indicator(self.grid)
        return tapered_linear(self.grid)

    def rate_h(self):
        form = self.data["rate_ode.form"]
        c = self.data["rate_ode.c"]
        if form == "constant":
            return lambda r: c * np.ones_like(np.asarray(r, dtype=float))
        if form == "power":
            p = self.data["rate_ode.p"]
            return lambda r: c * np.asarray(r, dtype=float) ** (-p)
        q = self.data["rate_ode.q"]
        return lambda r: c / np.log(np.asarray(r, dtype=float)) ** q


def _build_generator(data) -> GeneratorSpec:
    if data["diffusion.kind"] == "constant":
        diffusion = LocalDiffusionSpec.constant(data["diffusion.lambda0"])
    else:
        diffusion = LocalDiffusionSpec.tanh_variable(data["diffusion.lambda0"], data["diffusion.amplitude"])

    kind = data["levy.kind"]
    if kind == "none":
        levy = LevyMeasureSpec.none()
    elif kind == "fractional":
        levy = LevyMeasureSpec.fractional(data["levy.sigma"], data["levy.scale"])
    else:
        levy = LevyMeasureSpec.tempered(data["levy.sigma"], data["levy.scale"])

    kind = data["drift.kind"]
    if kind == "none":
        drift = DriftSpec.none()
    elif kind == "ou":
        drift = DriftSpec.ou(data["drift.alpha"])
    elif kind == "power":
        drift = DriftSpec.power(data["drift.alpha"], data["drift.gamma"], data["drift.R"])
    else:
        drift = DriftSpec.perturbed_power(
            data["drift.alpha"], data["drift.gamma"], data["drift.amplitude"], data["drift.R"]
        )
    return GeneratorSpec(diffusion, levy, drift)


def _check_admissibility(data, weights):
    jumps = data["levy.kind"] != "none"
    if jumps:
        sigma = data["levy.sigma"]
        for label, w in weights.items():
            if w.kind == "power" and not 0.0 < w.k < sigma:
                raise ConfigError(
                    f"weights: {label} violates the moment constraint k in (0, sigma) "
                    f"required when a jump part is present: k={w.k:g}, sigma={sigma:g}"
                )
            if w.kind == "exponential":
                raise ConfigError(
                    f"weights: {label} is not integrable against a jump measure with "
                    f"polynomial tails; exponential weights need levy.kind=none"
                )
        beta = data["lyapunov.beta"]
        if beta is not None:
            if beta >= sigma:
                raise ConfigError(
                    f"lyapunov.beta: the super-solution inequality needs beta < sigma "
                    f"with a jump part, got beta={beta:g}, sigma={sigma:g}"
                )
            if beta > 1.0 and data["drift.gamma"] <= 1.0:
                raise ConfigError(
                    "lyapunov.beta: beta > 1 with a jump part needs drift growth "
                    "gamma > 1 to dominate the jump transport"
                )
    if not 0.0 < data["rate_ode.theta"] < 1.0:
        raise ConfigError(f"rate_ode.theta: must lie in (0, 1), got {data['rate_ode.theta']:g}")
    if data["rate_ode.L"] <= 0 or data["rate_ode.c"] <= 0:
        raise ConfigError("rate_ode.L and rate_ode.c must be positive")
    if data["rate_ode.t_final"] <= 0 or data["rate_ode.n_points"] < 2:
        raise ConfigError("rate_ode.t_final must be positive and rate_ode.n_points >= 2")
    if data["time.dt"] <= 0 or data["time.t_final"] <= 0:
        raise ConfigError("time.dt and time.t_final must be positive")
    if data["time.stride"] < 1:
        raise ConfigError(f"time.stride: must be >= 1, got {data['time.stride']}")
    if data["fit.transient_frac"] < 0 or data["fit.transient_frac"] >= 1:
        raise ConfigError("fit.transient_frac must lie in [0, 1)")
    t_lo, t_hi = data["fit.t_lo"], data["fit.t_hi"]
    if t_lo is not None and t_hi is not None and not t_lo < t_hi:
        raise ConfigError(f"fit window [{t_lo:g}, {t_hi:g}] is empty")
    if (t_lo is None) != (t_hi is None):
        raise ConfigError("fit.t_lo and fit.t_hi must be given together")
    if data["particles.n"] < 1 or data["coupling.n_pairs"] < 1:
        raise ConfigError("particles.n and coupling.n_pairs must be >= 1")
    if data["coupling.eps"] <= 0:
        raise ConfigError("coupling.eps must be positive")
    if data["lyapunov.eps"] <= 0:
        raise ConfigError("lyapunov.eps must be positive")
    eps_b = data["solver.eps_boundary"]
    if eps_b is not None and eps_b <= 0:
        raise ConfigError("solver.eps_boundary must be positive when given")
    if data["seed"] < 0:
        raise ConfigError("seed must be nonnegative")


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a flat dict against the schema and build the named objects."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(raw) - set(_SCHEMA))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")

    data = {}
    for key, (tag, default) in _SCHEMA.items():
        if key in raw:
            data[key] = _coerce(key, tag, raw[key])
        elif default is None and tag != "float?":
            raise ConfigError(f"missing required config key: {key}")
        else:
            data[key] = default if not isinstance(default, list) else list(default)

    for key, choices in _CHOICES.items():
        if data[key] not in choices:
            raise ConfigError(f"{key}: must be one of {', '.join(choices)}, got {data[key]!r}")

    # constructors carry the per-object admissibility checks; surface their
    # refusals as validation errors before any compute starts
    try:
        grid = Grid(data["grid.d"], data["grid.n"], data["grid.half_width"])
        generator = _build_generator(data)
        weights = {label: parse_weight(label) for label in data["weights"]}
    except ConfigError:
        raise
    except (ValueError, NotImplementedError) as exc:
        raise ConfigError(str(exc)) from exc
    if grid.dim != 1:
        raise ConfigError(f"grid.d: solvers are implemented for d=1 only, got {grid.dim}")

    _check_admissibility(data, weights)
    return ExperimentConfig(data=data, grid=grid, generator=generator, weights=weights)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# deterministic serialization: sorted keys, floats at 17 significant digits


def format_float(x: float) -> str:
    if x != x:
        raise ValueError("cannot serialize NaN into a config or table")
    if x in (float("inf"), float("-inf")):
        raise ValueError("cannot serialize infinities into a config or table")
    s = f"{x:.17g}"
    # keep the value recognizably a float so the echo re-parses to the same type
    if re.fullmatch(r"-?[0-9]+", s):
        s += ".0"
    return s


def canonical_json(obj, indent="") -> str:
    """JSON with sorted keys, \\n endings, and 17-significant-digit floats."""
    pad = indent + "  "
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return format_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, (list, tuple)):
        items = [canonical_json(v, pad) for v in obj]
        if not items:
            return "[]"
        return "[\n" + ",\n".join(pad + it for it in items) + "\n" + indent + "]"
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        parts = [
            f"{json.dumps(str(k))}: {canonical_json(obj[k], pad)}" for k in sorted(obj, key=str)
        ]
        return "{\n" + ",\n".join(pad + p for p in parts) + "\n" + indent + "}"
    raise TypeError(f"cannot serialize {type(obj).__name__} deterministically")


def config_hash(cfg: ExperimentConfig) -> str:
    return hashlib.sha256(canonical_json(cfg.data).encode("utf-8")).hexdigest()
