"""Kernel interpolation of the one-step map, predictive variance and rollouts."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field

import numpy as np

from ._jit import rollout_states
from .dynamics import TrajectoryRecord
from .embedding import DelayDataset, delay_embed
from .errors import (
    ChecksumMismatch,
    DimensionMismatch,
    NegativeVariance,
    NonFinite,
    ParameterArity,
    SeriesTooShort,
    SingularGram,
)
from .kernels import KernelSpec, cross_matrix, gram, radial
from .linalg import GramFactor, factorize

log = logging.getLogger("kflow.regress")

VARIANCE_FLOOR = -1e-10


@dataclass
class SurrogateModel:
    """One fitted interpolant per predicted component.

    Immutable after :func:`fit`; ``coef[:, i]`` solves
    ``(K_i(X, X) + nugget_i I) c = Y[:, i]``.
    """

    kernels: list
    X: np.ndarray
    Y: np.ndarray
    nuggets: list
    coef: np.ndarray
    factors: list = field(repr=False)
    tau: int = 1
    source_dim: int = 1
    inputs: tuple = ()
    targets: tuple = ()

    @property
    def n_outputs(self) -> int:
        return self.Y.shape[1]

    @property
    def input_dim(self) -> int:
        return self.X.shape[1]

    def residual(self) -> float:
        return max(f.residual(self.coef[:, i], self.Y[:, i]) for i, f in enumerate(self.factors))

    # persistence -----------------------------------------------------------
    def to_dict(self):
        return {
            "kernels": [k.to_dict() for k in self.kernels],
            "tau": self.tau,
            "source_dim": self.source_dim,
            "inputs": list(self.inputs),
            "targets": list(self.targets),
            "nuggets": [float(v) for v in self.nuggets],
            "X": self.X.tolist(),
            "Y": self.Y.tolist(),
            "checksum": {"coef_l1": [float(v) for v in np.abs(self.coef).sum(axis=0)], "residual": self.residual()},
        }

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def from_dict(cls, d) -> "SurrogateModel":
        ds = DelayDataset(
            np.array(d["X"], dtype=float),
            np.array(d["Y"], dtype=float),
            int(d["tau"]),
            int(d["source_dim"]),
            tuple(d["inputs"]),
            tuple(d["targets"]),
        )
        kernels = [KernelSpec.from_dict(k) for k in d["kernels"]]
        try:
            model = fit(ds, kernels, nugget=d["nuggets"], escalate=False)
        except SingularGram as exc:
            raise ChecksumMismatch(f"stored model no longer solves at its nugget: {exc}") from exc
        stored = np.array(d["checksum"]["coef_l1"])
        got = np.abs(model.coef).sum(axis=0)
        if not np.allclose(got, stored, rtol=1e-9, atol=0.0):
            raise ChecksumMismatch(f"coefficient checksum {got.tolist()} != stored {stored.tolist()}")
        return model

    @classmethod
    def load(cls, path) -> "SurrogateModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit(dataset: DelayDataset, kernels, nugget=None, escalate=True) -> SurrogateModel:
    """Fit one interpolant per target component.

    ``kernels`` is a list of :class:`KernelSpec` (their ``theta`` is used) or a
    single spec shared by all components. ``nugget`` is a starting value (or
    one per component); ``None`` means 1e-10 times the mean Gram diagonal.
    """
    if isinstance(kernels, KernelSpec):
        kernels = [kernels] * dataset.n_targets
    kernels = list(kernels)
    if len(kernels) != dataset.n_targets:
        raise ParameterArity(f"{len(kernels)} kernels for {dataset.n_targets} target components")
    if len(dataset) < 1:
        raise SeriesTooShort("empty dataset")
    nuggets = nugget if isinstance(nugget, (list, tuple, np.ndarray)) else [nugget] * len(kernels)
    coef = np.empty_like(dataset.Y, dtype=float)
    factors, used = [], []
    for i, spec in enumerate(kernels):
        K = gram(spec, spec.theta, dataset.X)
        factor, c = factorize(K, nuggets[i], rhs=dataset.Y[:, i], escalate=escalate)
        factors.append(factor)
        used.append(factor.nugget)
        coef[:, i] = c
    return SurrogateModel(
        kernels,
        dataset.X.copy(),
        dataset.Y.copy(),
        used,
        coef,
        factors,
        dataset.tau,
        dataset.source_dim,
        tuple(dataset.inputs),
        tuple(dataset.targets),
    )


def _points(model, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim <= 1
    P = x.reshape(1, -1) if single else x
    if P.shape[1] != model.input_dim:
        raise DimensionMismatch(f"model expects {model.input_dim}-dim inputs, got {P.shape[1]}")
    return P, single


def predict_mean(model: SurrogateModel, x):
    """Posterior mean; ``x`` is one delay vector or an (M, p) batch."""
    P, single = _points(model, x)
    out = np.empty((P.shape[0], model.n_outputs))
    for i, spec in enumerate(model.kernels):
        out[:, i] = cross_matrix(spec, spec.theta, P, model.X) @ model.coef[:, i]
    return out[0] if single else out


def _variance(spec, factor: GramFactor, P, X):
    Kx = cross_matrix(spec, spec.theta, P, X)
    prior = radial(spec, spec.theta, np.zeros(P.shape[0]))
    sol = factor.solve(Kx.T)
    return prior - np.einsum("ij,ji->i", Kx, sol)


def predict_variance(model: SurrogateModel, x):
    """Conditional variance ``k(x,x) - k(x,X) (K + nugget I)^-1 k(X,x)``, per component."""
    P, single = _points(model, x)
    out = np.empty((P.shape[0], model.n_outputs))
    for i, (spec, factor) in enumerate(zip(model.kernels, model.factors)):
        out[:, i] = _variance(spec, factor, P, model.X)
    if np.any(out < VARIANCE_FLOOR):
        raise NegativeVariance(f"variance {out.min():.3g} below {VARIANCE_FLOOR}; kernel is not positive definite here")
    out = np.maximum(out, 0.0)
    return out[0] if single else out


def rkhs_norms(model: SurrogateModel, reference: DelayDataset):
    """``sqrt(Y^T K(Xf, Xf)^-1 Y)`` per component over a reference dataset."""
    norms = np.empty(model.n_outputs)
    for i, spec in enumerate(model.kernels):
        K = gram(spec, spec.theta, reference.X)
        _, c = factorize(K, model.nuggets[i], rhs=reference.Y[:, i])
        q = float(reference.Y[:, i] @ c)
        if q < VARIANCE_FLOOR:
            raise NegativeVariance(f"negative squared RKHS norm {q:.3g}; kernel is not positive definite here")
        norms[i] = np.sqrt(max(q, 0.0))
    return norms


def error_interval(model: SurrogateModel, x, reference_data: DelayDataset):
    """Half-widths ``sigma_i(x) * |Y^f|_{K_i}`` of the error interval around the mean.

    ``reference_data`` should hold the training points followed by the
    testing points.
    """
    sigma = np.sqrt(predict_variance(model, x))
    return sigma * rkhs_norms(model, reference_data)


def rollout(model: SurrogateModel, seed_window, n_steps: int, dt: float = 1.0) -> TrajectoryRecord:
    """Free-running iteration of the surrogate.

    ``seed_window`` holds ``tau`` consecutive states, oldest first. Each
    prediction becomes the newest entry of the window. Returns the
    ``n_steps`` predicted states.
    """
    if n_steps < 1:
        raise ValueError("rollout needs n_steps >= 1")
    if tuple(model.inputs) != tuple(model.targets):
        raise DimensionMismatch("rollout needs a model whose targets are its input components")
    d = len(model.targets)
    seed = np.asarray(seed_window, dtype=float).reshape(model.tau, d)
    window = seed[::-1].ravel().copy()  # newest first
    out, failed = rollout_states(model, window, n_steps)
    if failed >= 0:
        raise NonFinite("surrogate rollout diverged", step=failed)
    return TrajectoryRecord(out, dt, {"rollout_of": "surrogate", "seed_window": seed.tolist()})


def one_step_predictions(model: SurrogateModel, eval_series: TrajectoryRecord):
    """Teacher-forced predictions: returns ``(truth, prediction)`` for every embedded pair."""
    if len(eval_series) <= model.tau:
        raise SeriesTooShort(f"evaluation series of length {len(eval_series)} with tau={model.tau}")
    ds = delay_embed(eval_series, model.tau, model.targets, model.inputs)
    return ds.Y, predict_mean(model, ds.X)


def one_step_errors(model: SurrogateModel, eval_series: TrajectoryRecord) -> np.ndarray:
    truth, pred = one_step_predictions(model, eval_series)
    return np.sqrt(np.mean((pred - truth) ** 2, axis=0))
