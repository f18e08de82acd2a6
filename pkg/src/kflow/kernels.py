"""
Parameterized radial kernel families.

A kernel is an ordered sum of radial primitives, each a function of the
Euclidean distance ``r = ||x - y||`` and a handful of slots in a flat
parameter vector ``theta``:

==================  =====  =============================================
kind                slots  contribution
==================  =====  =============================================
constant            1      a
triangular          2      a * max(0, 1 - r^2 / s)
gaussian            2      a * exp(-r^2 / s^2)
laplace             2      a * exp(-r / s^2)
locally_periodic    4      a * exp(-p * sin^2(w * pi * r^q)) * exp(-r^2 / s^2)
quadratic           1      a * r^2
power_rational      4      a + (b + r^g)^e
==================  =====  =============================================

``q`` in the locally periodic term is a per-primitive flag (``"power"``,
default 2). In ``"squared"`` mode the amplitude slot ``a`` (always the first
slot of a primitive) enters as ``a**2``.

Examples
--------
>>> spec = KernelSpec.parse("gaussian", theta=[1.0, 1.0])
>>> round(float(evaluate(spec, spec.theta, [0.0], [1.0])), 6)
0.367879
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from .errors import DimensionMismatch, NonFinite, ParameterArity

SCALE_FLOOR = 1e-8


class Kind(str, Enum):
    CONSTANT = "constant"
    TRIANGULAR = "triangular"
    GAUSSIAN = "gaussian"
    LAPLACE = "laplace"
    LOCALLY_PERIODIC = "locally_periodic"
    QUADRATIC = "quadratic"
    POWER_RATIONAL = "power_rational"


SLOT_NAMES = {
    Kind.CONSTANT: ("amplitude",),
    Kind.TRIANGULAR: ("amplitude", "scale"),
    Kind.GAUSSIAN: ("amplitude", "scale"),
    Kind.LAPLACE: ("amplitude", "scale"),
    Kind.LOCALLY_PERIODIC: ("amplitude", "period_weight", "frequency", "scale"),
    Kind.QUADRATIC: ("amplitude",),
    Kind.POWER_RATIONAL: ("offset", "shift", "exponent", "power"),
}

# slots that divide r and get clamped away from zero
_SCALE_SLOTS = {
    Kind.TRIANGULAR: (1,),
    Kind.GAUSSIAN: (1,),
    Kind.LAPLACE: (1,),
    Kind.LOCALLY_PERIODIC: (3,),
}

# triangular in r^2 and the r^2-periodic factor are not positive definite in general
PD_KINDS = frozenset({Kind.CONSTANT, Kind.GAUSSIAN, Kind.LAPLACE})


class _Diagnostics:
    """Process-wide counters; incremented under a lock."""

    def __init__(self):
        self._lock = threading.Lock()
        self.scale_clamps = 0

    def bump(self, n):
        if n:
            with self._lock:
                self.scale_clamps += int(n)

    def reset(self):
        with self._lock:
            self.scale_clamps = 0


diagnostics = _Diagnostics()


@dataclass(frozen=True)
class Primitive:
    kind: Kind
    flags: dict = field(default_factory=dict)

    @property
    def n_slots(self) -> int:
        return len(SLOT_NAMES[self.kind])

    def to_dict(self):
        return {"kind": self.kind.value, "flags": dict(self.flags)}

    @classmethod
    def from_dict(cls, d):
        return cls(Kind(d["kind"]), dict(d.get("flags", {})))


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """A kernel family plus a parameter vector.

    ``theta`` is carried along for convenience; every evaluation function also
    accepts an explicit ``theta`` so the same family can be probed at many
    parameter values without rebuilding the spec.
    """

    primitives: tuple
    mode: str = "raw"
    theta: np.ndarray = None

    def __post_init__(self):
        if self.mode not in ("raw", "squared"):
            raise ValueError(f"unknown parameterization mode {self.mode!r}")
        object.__setattr__(self, "primitives", tuple(self.primitives))
        if self.theta is None:
            object.__setattr__(self, "theta", np.ones(self.n_params))
        else:
            theta = np.array(self.theta, dtype=float)
            theta.setflags(write=False)
            object.__setattr__(self, "theta", theta)
            _check_arity(self, theta)

    @property
    def n_params(self) -> int:
        return sum(p.n_slots for p in self.primitives)

    @classmethod
    def parse(cls, description, theta=None, mode="raw", flags=None):
        """Build a spec from ``"kind+kind+..."``; flags map primitive index to a dict."""
        flags = flags or {}
        kinds = [k.strip() for k in description.split("+") if k.strip()]
        prims = [Primitive(Kind(k), dict(flags.get(i, {}))) for i, k in enumerate(kinds)]
        return cls(prims, mode, theta)

    def with_theta(self, theta) -> "KernelSpec":
        return KernelSpec(self.primitives, self.mode, theta)

    def slot_labels(self):
        labels = []
        for i, p in enumerate(self.primitives):
            labels.extend(f"{p.kind.value}[{i}].{name}" for name in SLOT_NAMES[p.kind])
        return labels

    def amplitude_slots(self):
        """Indices of the first slot of every primitive (the amplitude-like slot)."""
        out, offset = [], 0
        for p in self.primitives:
            out.append(offset)
            offset += p.n_slots
        return out

    def is_pd_family(self, theta=None) -> bool:
        theta = self.theta if theta is None else np.asarray(theta, dtype=float)
        if any(p.kind not in PD_KINDS for p in self.primitives):
            return False
        amps = theta[self.amplitude_slots()]
        return self.mode == "squared" or bool(np.all(amps >= 0))

    def to_dict(self, theta=None):
        theta = self.theta if theta is None else theta
        return {
            "mode": self.mode,
            "primitives": [p.to_dict() for p in self.primitives],
            "theta": [float(t) for t in theta],
        }

    @classmethod
    def from_dict(cls, d):
        return cls([Primitive.from_dict(p) for p in d["primitives"]], d.get("mode", "raw"), d["theta"])

    def to_json(self, theta=None) -> str:
        return json.dumps(self.to_dict(theta), indent=2)

    @classmethod
    def from_json(cls, text) -> "KernelSpec":
        return cls.from_dict(json.loads(text))

    def __eq__(self, other):
        if not isinstance(other, KernelSpec):
            return NotImplemented
        return (
            self.primitives == other.primitives
            and self.mode == other.mode
            and np.array_equal(self.theta, other.theta)
        )

    def __repr__(self):
        kinds = "+".join(p.kind.value for p in self.primitives)
        return f"KernelSpec({kinds!r}, mode={self.mode!r}, theta={list(np.round(self.theta, 6))})"


def _check_arity(spec, theta):
    if theta.ndim != 1 or theta.shape[0] != spec.n_params:
        raise ParameterArity(f"kernel expects {spec.n_params} parameters, got shape {theta.shape}")


def _scale(value):
    if abs(value) < SCALE_FLOOR:
        diagnostics.bump(1)
        return SCALE_FLOOR if value >= 0 else -SCALE_FLOOR
    return value


def radial(spec: KernelSpec, theta, r, r2=None):
    """Evaluate the kernel on an array of distances ``r`` (``r2`` = ``r**2`` if precomputed)."""
    theta = np.asarray(theta, dtype=float)
    _check_arity(spec, theta)
    r = np.asarray(r, dtype=float)
    if r2 is None:
        r2 = r * r
    squared = spec.mode == "squared"
    out = np.zeros_like(r)
    i = 0
    with np.errstate(all="ignore"):
        for prim in spec.primitives:
            slots = theta[i : i + prim.n_slots]
            i += prim.n_slots
            a = slots[0] ** 2 if squared else slots[0]
            kind = prim.kind
            if kind is Kind.CONSTANT:
                term = np.full_like(r, a)
            elif kind is Kind.TRIANGULAR:
                term = a * np.maximum(0.0, 1.0 - r2 / _scale(slots[1]))
            elif kind is Kind.GAUSSIAN:
                term = a * np.exp(-r2 / _scale(slots[1]) ** 2)
            elif kind is Kind.LAPLACE:
                term = a * np.exp(-r / _scale(slots[1]) ** 2)
            elif kind is Kind.LOCALLY_PERIODIC:
                q = prim.flags.get("power", 2)
                rq = r2 if q == 2 else r**q
                term = (
                    a
                    * np.exp(-slots[1] * np.sin(slots[2] * np.pi * rq) ** 2)
                    * np.exp(-r2 / _scale(slots[3]) ** 2)
                )
            elif kind is Kind.QUADRATIC:
                term = a * r2
            elif kind is Kind.POWER_RATIONAL:
                g, e = slots[2], slots[3]
                if g < 0 and np.any(r == 0):
                    raise NonFinite(f"0 ** {g} in power_rational term")
                term = a + (slots[1] + r**g) ** e
            else:  # pragma: no cover
                raise ValueError(kind)
            out = out + term
    if not np.all(np.isfinite(out)):
        raise NonFinite(f"non-finite kernel value for theta={theta.tolist()}")
    return out


def _as_points(X):
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    return X


def _as_point(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(1) if x.ndim == 0 else x.ravel()


def evaluate(spec: KernelSpec, theta, x, y) -> float:
    x, y = _as_point(x), _as_point(y)
    if x.shape != y.shape:
        raise DimensionMismatch(f"points of dimension {x.shape[0]} and {y.shape[0]}")
    d = x - y
    r2 = float(d @ d)
    return float(radial(spec, theta, np.array([np.sqrt(r2)]), np.array([r2]))[0])


def gram(spec: KernelSpec, theta, X) -> np.ndarray:
    """Symmetric N x N matrix of kernel values; each unordered pair is evaluated once."""
    X = _as_points(X)
    n = X.shape[0]
    if n == 1:
        return radial(spec, theta, np.zeros((1, 1)))
    r2 = pdist(X, "sqeuclidean")
    vals = radial(spec, theta, np.sqrt(r2), r2)
    K = squareform(vals, checks=False)
    np.fill_diagonal(K, radial(spec, theta, np.zeros(1))[0])
    return K


def cross_matrix(spec: KernelSpec, theta, A, B) -> np.ndarray:
    """``K[i, j] = k(A_i, B_j)`` for two point sets."""
    A, B = _as_points(A), _as_points(B)
    if B.shape[0] == 0 or A.shape[0] == 0:
        return np.zeros((A.shape[0], B.shape[0]))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"points of dimension {A.shape[1]} and {B.shape[1]}")
    r2 = cdist(A, B, "sqeuclidean")
    return radial(spec, theta, np.sqrt(r2), r2)


def cross_gram(spec: KernelSpec, theta, x, X) -> np.ndarray:
    x = _as_point(x)
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        return np.zeros(0)
    return cross_matrix(spec, theta, x[None, :], _as_points(X))[0]


def specs_to_json(specs: Sequence[KernelSpec]) -> str:
    return json.dumps([s.to_dict() for s in specs], indent=2)
