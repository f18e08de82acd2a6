"""Benchmark systems: three maps and the Lorenz flow, plus trajectory records."""

from __future__ import annotations

import csv
import io
import re
from dataclasses import dataclass, field
from enum import Enum

import mpmath
import numpy as np

from .errors import DimensionMismatch, NonFinite


class MapKind(str, Enum):
    BERNOULLI = "bernoulli"
    LOGISTIC = "logistic"
    HENON = "henon"
    HENON_SCALAR = "henon_scalar"


_MAP_DIMS = {MapKind.BERNOULLI: 1, MapKind.LOGISTIC: 1, MapKind.HENON: 2, MapKind.HENON_SCALAR: 2}
_MAP_DEFAULTS = {
    MapKind.BERNOULLI: {},
    MapKind.LOGISTIC: {"r": 4.0},
    MapKind.HENON: {"a": 1.4, "b": 0.3},
    MapKind.HENON_SCALAR: {"a": 1.4, "b": 0.3},
}


@dataclass(frozen=True)
class MapSystem:
    kind: MapKind
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "kind", MapKind(self.kind))
        object.__setattr__(self, "params", {**_MAP_DEFAULTS[self.kind], **self.params})

    @property
    def dim(self) -> int:
        return _MAP_DIMS[self.kind]

    @property
    def name(self) -> str:
        return self.kind.value


@dataclass(frozen=True)
class OdeSystem:
    kind: str = "lorenz"
    params: dict = field(default_factory=dict)
    h: float = 0.01

    def __post_init__(self):
        if self.kind != "lorenz":
            raise ValueError(f"unknown ODE system {self.kind!r}")
        if not self.h > 0:
            raise ValueError("step h must be positive")
        # b = 10/3 as used for the benchmark; the classic attractor uses 8/3
        object.__setattr__(self, "params", {"s": 10.0, "r": 28.0, "b": 10.0 / 3.0, **self.params})

    @property
    def dim(self) -> int:
        return 3

    @property
    def name(self) -> str:
        return self.kind


@dataclass
class TrajectoryRecord:
    """An ordered list of d-dimensional states sampled every ``dt``."""

    states: np.ndarray
    dt: float = 1.0
    origin: dict = field(default_factory=dict)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if states.ndim != 2 or states.shape[0] < 1:
            raise ValueError("a trajectory needs at least one state")
        self.states = states

    def __len__(self):
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self)) * self.dt

    def component(self, i) -> "TrajectoryRecord":
        return TrajectoryRecord(self.states[:, [i]], self.dt, {**self.origin, "component": i})

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i}" for i in range(self.dim)])
        for t, row in zip(self.times, self.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, path) -> "TrajectoryRecord":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise ValueError(f"{path}: no states")
        data = np.array([[float(v) for v in row] for row in rows[1:]])
        dt = float(data[1, 0] - data[0, 0]) if len(data) > 1 else 1.0
        return cls(data[:, 1:], dt, {"source": str(path)})


def map_step(system: MapSystem, state):
    """Apply the map once. Hénon-scalar states are ``(x(k), x(k-1))``, newest first."""
    state = np.atleast_1d(np.asarray(state, dtype=float))
    if state.shape != (system.dim,):
        raise DimensionMismatch(f"{system.name} expects a {system.dim}-dim state, got {state.shape}")
    p = system.params
    if system.kind is MapKind.BERNOULLI:
        return np.array([(2.0 * state[0]) % 1.0])
    if system.kind is MapKind.LOGISTIC:
        return np.array([p["r"] * state[0] * (1.0 - state[0])])
    if system.kind is MapKind.HENON:
        x, y = state
        return np.array([1.0 - p["a"] * x * x + y, p["b"] * x])
    x, x_prev = state
    return np.array([1.0 - p["a"] * x * x + p["b"] * x_prev, x])


def lorenz_rhs(params, state):
    x, y, z = np.asarray(state, dtype=float)
    s, r, b = params["s"], params["r"], params["b"]
    return np.array([s * (y - x), r * x - y - x * z, x * y - b * z])


def rk4_step(rhs, state, h):
    if not h > 0:
        raise ValueError("step h must be positive")
    state = np.asarray(state, dtype=float)
    k1 = rhs(state)
    k2 = rhs(state + 0.5 * h * k1)
    k3 = rhs(state + 0.5 * h * k2)
    k4 = rhs(state + h * k3)
    out = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(out)):
        raise NonFinite("RK4 stage produced a non-finite value")
    return out


def parse_initial_condition(value, precision_bits=53):
    """Turn ``"pi/3"``-style strings into mpmath numbers at the given precision.

    Numbers (and lists of numbers) pass through unchanged. The expression
    language is arithmetic over decimal literals, ``pi`` and ``e``.
    """
    if not isinstance(value, str):
        return value
    with mpmath.workprec(precision_bits):
        env = {"__builtins__": {}, "pi": mpmath.pi, "e": mpmath.e, "sqrt": mpmath.sqrt}
        # decimal literals must be exact, so route them through mpf strings
        expr = re.sub(r"(?<![\w.])(\d+\.?\d*(?:[eE][-+]?\d+)?)", r"mpf('\1')", value)
        env["mpf"] = mpmath.mpf
        return +eval(expr, env)  # noqa: S307 -- restricted namespace, numeric grammar only


def _bernoulli_orbit(x0, n_steps):
    # 2x mod 1 is a bit shift; a float orbit collapses to 0 within 53 steps,
    # so iterate in binary multiprecision with enough bits for every step.
    prec = n_steps + 80
    with mpmath.workprec(prec):
        x = parse_initial_condition(x0, prec) if isinstance(x0, str) else mpmath.mpf(float(np.ravel(x0)[0]))
        # the map acts on the circle, so an initial condition like pi/3 is read mod 1
        x = x - mpmath.floor(x)
        out = np.empty(n_steps + 1)
        for k in range(n_steps + 1):
            out[k] = float(x)
            x = 2 * x
            x = x - mpmath.floor(x)
    return out[:, None]


def simulate(system, x0, n_steps: int, h=None) -> TrajectoryRecord:
    """Generate ``n_steps + 1`` states starting at ``x0``.

    ``x0`` may be a string expression such as ``"pi/3"``; for the Bernoulli map
    the orbit of that exact number is followed (see ``_bernoulli_orbit``).
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    origin = {"system": system.name, "x0": x0 if isinstance(x0, str) else np.ravel(x0).tolist(), "n_steps": n_steps}
    if isinstance(system, OdeSystem):
        h = system.h if h is None else h
        rhs = lambda s: lorenz_rhs(system.params, s)  # noqa: E731
        out = np.empty((n_steps + 1, 3))
        out[0] = _float_state(x0, 3)
        for k in range(n_steps):
            try:
                out[k + 1] = rk4_step(rhs, out[k], h)
            except NonFinite as exc:
                raise NonFinite("Lorenz trajectory blew up", step=k + 1) from exc
        return TrajectoryRecord(out, h, {**origin, "h": h, **system.params})

    if system.kind is MapKind.BERNOULLI:
        return TrajectoryRecord(_bernoulli_orbit(x0, n_steps), 1.0, origin)
    out = np.empty((n_steps + 1, system.dim))
    out[0] = _float_state(x0, system.dim)
    for k in range(n_steps):
        with np.errstate(over="ignore", invalid="ignore"):
            out[k + 1] = map_step(system, out[k])
        if not np.all(np.isfinite(out[k + 1])):
            raise NonFinite(f"{system.name} trajectory blew up", step=k + 1)
    return TrajectoryRecord(out, 1.0, {**origin, **system.params})


def _float_state(x0, dim):
    if isinstance(x0, str):
        x0 = [x0]
    vals = [float(parse_initial_condition(v)) if isinstance(v, str) else float(v) for v in np.ravel(np.asarray(x0, dtype=object))]
    if len(vals) != dim:
        raise DimensionMismatch(f"initial condition has {len(vals)} entries, system needs {dim}")
    return np.array(vals)


def make_system(name: str, params=None, h=None):
    params = dict(params or {})
    if name == "lorenz":
        return OdeSystem("lorenz", params, 0.01 if h is None else h)
    return MapSystem(MapKind(name), params)
