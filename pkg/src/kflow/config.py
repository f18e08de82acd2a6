"""Experiment configuration: TOML schema, dotted overrides and built-in presets.

Schema (every key optional; missing keys take the defaults below)::

    seed = 0
    out = "kflow-runs/..."          # output directory

    [system]
    name = "bernoulli"               # bernoulli | logistic | henon | henon_scalar | lorenz
    x0 = "pi/3"                      # number, list, or expression string
    h = 0.01                         # Lorenz step
    params = {}                      # e.g. {a = 1.4, b = 0.3}

    [data]
    n_train = 200                    # number of (X, Y) training pairs
    tau = 1                          # window length
    inputs = [0]                     # observed components (default: all)
    targets = [0]                    # predicted components (default: all)
    file = "series.csv"              # use a stored trajectory instead of simulating

    [kernel]
    family = "triangular+gaussian"
    mode = "raw"                     # raw | squared
    theta = [0.0, 1.0, 1.0, 1.0]     # shared by all target components unless
    thetas = [[...], [...]]          # ... one vector per component is given
    flags = {"0" = {power = 1}}      # per-primitive flags

    [train]
    metric = "rho"                   # rho | rho_l | rho_mmd
    iterations = 100
    step_size = 0.1
    batch_size = 100
    mmd_sample_size = 50
    fd_step = 1e-4
    clamps = {"2" = [1.0, 1.0]}      # slot -> [lo, hi], applied to every component
    fit_on = "all"                   # all | last_batch
    nugget = 1e-10
    lyapunov = {rollout_len = 2000, transient_skip = 100, fit_len = 20, min_tsep = 10}

    [eval]
    x0 = ["pi/10", "0.1"]            # one test trajectory per entry
    n_test = 5000
    rollout_steps = 0
    rollout_x0 = [0.5, 1.5, 2.5]

    [tau]
    tau_max = 6
    n_series = 100
    component = 0                    # scalar series used by the sweep
    kmd_components = [0, 1]
    family = "power_rational"
    theta = [1.0, 1.0, 2.0, -0.5]
    iterations = 100
    clamps = {"2" = [2.0, 2.0]}      # replaces train.clamps for the sweep

    [uncertainty]
    x0 = "pi/4"
    n = 200
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import tomli_w

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "seed": 0,
    "system": {"name": "bernoulli", "params": {}},
    "data": {"n_train": 200, "tau": 1},
    "kernel": {"family": "gaussian", "mode": "raw"},
    "train": {"metric": "rho", "iterations": 100, "step_size": 0.1, "fd_step": 1e-4, "fit_on": "all"},
    "eval": {"n_test": 5000, "rollout_steps": 0},
    "tau": {"tau_max": 6, "n_series": 100, "component": 0, "iterations": 100},
    "uncertainty": {"n": 200},
}

# initial conditions used when the config names a system but no x0
DEFAULT_X0 = {
    "bernoulli": "pi/3",
    "logistic": 0.1,
    "henon": [0.9, -0.9],
    "henon_scalar": [0.8, -0.9],
    "lorenz": [0.0, 1.0, 1.05],
}

PRESETS = {
    "bernoulli-3.1": {
        "system": {"name": "bernoulli", "x0": "pi/3"},
        "data": {"n_train": 200, "tau": 1},
        "kernel": {"family": "triangular+gaussian", "mode": "raw", "theta": [0.0, 1.0, 1.0, 1.0]},
        # both amplitudes kept nonnegative so the family stays positive definite
        "train": {"metric": "rho", "iterations": 100, "clamps": {"0": [0.0, math.inf], "2": [0.0, math.inf]}},
        "eval": {"x0": ["pi/10", "0.1"], "n_test": 5000},
    },
    "logistic-3.2": {
        "system": {"name": "logistic", "x0": 0.1},
        "data": {"n_train": 200, "tau": 1},
        "kernel": {"family": "locally_periodic", "mode": "raw", "theta": [1.0, 1.0, 1.0, 1.0]},
        "train": {
            "metric": "rho",
            "iterations": 100,
            "lyapunov": {"rollout_len": 500, "transient_skip": 100, "fit_len": 20, "min_tsep": 10},
        },
        "eval": {"x0": [0.4, 0.97], "n_test": 5000},
        "uncertainty": {"x0": "pi/4", "n": 200},
    },
    "henon-3.3": {
        "system": {"name": "henon", "x0": [0.9, -0.9]},
        "data": {"n_train": 100, "tau": 1},
        "kernel": {"family": "power_rational+gaussian", "mode": "raw", "theta": [0.0, 0.0, 0.0, 0.0, 1.0, 1.0]},
        "train": {"metric": "rho", "iterations": 1000},
        "eval": {"x0": [[-0.1, 0.1]], "n_test": 5000},
        "tau": {
            "tau_max": 6,
            "n_series": 100,
            "component": 0,
            "kmd_components": [0, 1],
            "x0": [0.8, -0.9],
            "test_x0": [0.1, -0.1],
            "n_test": 5000,
            "family": "power_rational",
            "theta": [1.0, 1.0, 2.0, -0.5],
            # inverse multiquadric (b + r^2)^e with b > 0, e < 0: positive definite
            "clamps": {"1": [1e-3, math.inf], "2": [2.0, 2.0], "3": [-10.0, -1e-3]},
            "iterations": 100,
        },
    },
    "henon-partial-3.3.2": {
        "system": {"name": "henon", "x0": [0.9, -0.9]},
        "data": {"n_train": 50, "tau": 2, "inputs": [0], "targets": [0, 1]},
        "kernel": {
            "family": "triangular+gaussian+quadratic+laplace",
            "mode": "squared",
            "theta": [0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0],
        },
        "train": {"metric": "rho", "iterations": 5000},
        # (x(0), x(1)) = (-0.83, 0.57) corresponds to y(0) = 0.57 - 1 + 1.4 * 0.83**2
        "eval": {"x0": [[-0.83, 0.53446]], "n_test": 5000},
    },
    "lorenz-3.4": {
        "system": {"name": "lorenz", "x0": [0.0, 1.0, 1.05], "h": 0.01},
        "data": {"n_train": 10000, "tau": 1},
        "kernel": {"family": "power_rational+gaussian", "mode": "raw", "theta": [0.0, 0.0, 1.0, 0.0, 1.0, 1.0]},
        # the distance enters with power one: freeze the exponent slot
        "train": {"metric": "rho", "iterations": 1000, "batch_size": 100, "clamps": {"2": [1.0, 1.0]}, "fit_on": "last_batch"},
        "eval": {"x0": [[0.5, 1.5, 2.5]], "n_test": 50000, "rollout_steps": 10000, "rollout_x0": [0.5, 1.5, 2.5]},
    },
}


def _merge(base, over):
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_value(text: str):
    """Interpret a command-line value as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


@dataclass
class ExperimentConfig:
    data: dict = field(default_factory=dict)

    @classmethod
    def build(cls, preset=None, path=None, overrides=()):
        """Defaults, then a preset, then a TOML file, then dotted overrides."""
        cfg = copy.deepcopy(DEFAULTS)
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
            cfg = _merge(cfg, PRESETS[preset])
            cfg["preset"] = preset
        if path is not None:
            try:
                with open(path, "rb") as fh:
                    cfg = _merge(cfg, tomllib.load(fh))
            except (OSError, tomllib.TOMLDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from exc
        out = cls(cfg)
        for key, value in overrides:
            out.set(key, value)
        if out.get("system.x0") is None and out.get("system.name") in DEFAULT_X0:
            out.set("system.x0", DEFAULT_X0[out.get("system.name")])
        out.validate()
        return out

    def get(self, dotted, default=None):
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def set(self, dotted, value):
        parts = dotted.split(".")
        node = self.data
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"{dotted}: {part} is not a table")
        node[parts[-1]] = value

    def validate(self):
        for key, low in (("data.n_train", 0), ("eval.n_test", 1), ("data.tau", 1)):
            v = self.get(key)
            if not isinstance(v, int) or isinstance(v, bool) or v < low:
                raise ConfigError(f"{key} must be an integer >= {low}, got {v!r}")
        if self.get("system.name") not in ("bernoulli", "logistic", "henon", "henon_scalar", "lorenz"):
            raise ConfigError(f"unknown system {self.get('system.name')!r}")
        f = self.get("data.file")
        if f is not None:
            import os

            if not os.path.exists(f):
                raise ConfigError(f"data.file {f} does not exist")

    def to_toml(self) -> str:
        return tomli_w.dumps(self.data)

    @classmethod
    def from_toml(cls, text) -> "ExperimentConfig":
        return cls(tomllib.loads(text))

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.data == other.data
