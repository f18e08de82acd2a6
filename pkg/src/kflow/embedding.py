"""
Delay embedding of time series and embedding-delay selection.

Two conventions for "tau" appear here:

* ``delay_embed(series, tau)`` uses the *window length*: ``X_k`` stacks the
  ``tau`` states ``x_{k+tau-1}, ..., x_k`` (newest first) and ``Y_k = x_{k+tau}``.
* The delay-selection tools (``kmd_energies``, ``rmse_tau_sweep``) index by
  *delay* ``i``: a window of ``i + 1`` states, so delay 0 means "current state
  only".
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field

import numpy as np

from .dynamics import TrajectoryRecord
from .errors import KflowError, SeriesTooShort
from .kernels import KernelSpec, gram
from .linalg import default_nugget, factorize

log = logging.getLogger("kflow.embedding")


@dataclass
class DelayDataset:
    X: np.ndarray
    Y: np.ndarray
    tau: int
    source_dim: int
    inputs: tuple = ()
    targets: tuple = ()
    origin: dict = field(default_factory=dict)

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_targets(self) -> int:
        return self.Y.shape[1]

    def subset(self, idx) -> "DelayDataset":
        idx = np.asarray(idx)
        return DelayDataset(self.X[idx], self.Y[idx], self.tau, self.source_dim, self.inputs, self.targets, self.origin)

    def concat(self, other: "DelayDataset") -> "DelayDataset":
        return DelayDataset(
            np.vstack([self.X, other.X]),
            np.vstack([self.Y, other.Y]),
            self.tau,
            self.source_dim,
            self.inputs,
            self.targets,
            self.origin,
        )


def delay_embed(series: TrajectoryRecord, tau: int, targets=None, inputs=None) -> DelayDataset:
    """Pair delay windows with next states.

    ``inputs`` picks which state components form the window (default: all),
    ``targets`` which components are predicted (default: all).
    """
    states = series.states if isinstance(series, TrajectoryRecord) else np.atleast_2d(np.asarray(series, dtype=float).T).T
    n, d = states.shape
    if tau < 1:
        raise ValueError("window length tau must be >= 1")
    if n <= tau:
        raise SeriesTooShort(f"series of length {n} cannot be embedded with tau={tau}")
    targets = tuple(range(d)) if targets is None else tuple(int(t) for t in targets)
    inputs = tuple(range(d)) if inputs is None else tuple(int(t) for t in inputs)
    for idx in targets + inputs:
        if not 0 <= idx < d:
            raise ValueError(f"component index {idx} out of range for a {d}-dim series")
    N = n - tau
    src = states[:, list(inputs)]
    # column block j holds x_{k+tau-1-j}
    X = np.hstack([src[tau - 1 - j : tau - 1 - j + N] for j in range(tau)])
    Y = states[tau:, list(targets)].copy()
    origin = series.origin if isinstance(series, TrajectoryRecord) else {}
    return DelayDataset(X, Y, tau, d, inputs, targets, dict(origin))


def truncate_window(window, i):
    """Keep the ``i + 1`` most recent entries of a newest-first window."""
    return np.asarray(window)[..., : i + 1]


@dataclass
class KmdEnergyProfile:
    energies: np.ndarray
    tau_max: int
    base_kernel: KernelSpec
    total: float = float("nan")
    nugget: float = 0.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["tau", "energy"])
        for i, e in enumerate(self.energies):
            w.writerow([i, repr(float(e))])
        return buf.getvalue()


def default_kmd_kernel() -> KernelSpec:
    return KernelSpec.parse("constant+gaussian", theta=[1.0, 1.0, 1.0])


def kmd_windows(values, tau_max):
    """Newest-first windows ``[v(t), ..., v(t - tau_max)]`` and targets ``v(t + 1)``."""
    v = np.asarray(values, dtype=float).ravel()
    n = v.shape[0]
    if n < tau_max + 2:
        raise SeriesTooShort(f"series of length {n} too short for tau_max={tau_max}")
    T = np.arange(tau_max, n - 1)
    W = np.stack([v[T - j] for j in range(tau_max + 1)], axis=1)
    return W, v[T + 1]


KMD_NUGGET_REL = 1e-6


def kmd_energies(series, tau_max: int, base_kernel: KernelSpec | None = None, nugget=None) -> KmdEnergyProfile:
    """Alignment energies ``E_i = v^T K^-1 K_i K^-1 v`` for delays ``0..tau_max``.

    ``K_i`` is the base kernel applied to windows truncated to their ``i + 1``
    newest entries and ``K = sum_i K_i``. The nugget is split evenly across
    the ``K_i`` so that the energies add up to ``v^T K^-1 v`` exactly. The
    default nugget is ``1e-6`` times the mean diagonal of ``K``; smaller values
    leave ``K`` so ill-conditioned that rounding breaks the sum at the 1e-8 level.
    """
    base_kernel = base_kernel or default_kmd_kernel()
    values = series.states[:, 0] if isinstance(series, TrajectoryRecord) else series
    W, v = kmd_windows(values, tau_max)
    Ks = [gram(base_kernel, base_kernel.theta, truncate_window(W, i)) for i in range(tau_max + 1)]
    K = np.sum(Ks, axis=0)
    if nugget is None:
        nugget = KMD_NUGGET_REL * float(np.mean(np.diag(K)))
    factor, alpha = factorize(K, nugget, rhs=v)
    share = factor.nugget / (tau_max + 1)
    energies = np.array([alpha @ (Ki @ alpha) + share * (alpha @ alpha) for Ki in Ks])
    return KmdEnergyProfile(energies, tau_max, base_kernel, float(v @ alpha), factor.nugget)


def select_tau_kmd(profile) -> int:
    energies = profile.energies if isinstance(profile, KmdEnergyProfile) else np.asarray(profile, dtype=float)
    if len(energies) == 0:
        raise ValueError("empty energy profile")
    # argmax returns the first maximum, i.e. the smallest delay on ties
    return int(np.argmax(energies))


def rmse_tau_sweep(series, tau_range, kernel_spec, train_config, eval_series, nugget=None):
    """One-step RMSE against delay for each delay in ``tau_range``.

    Each delay ``i`` embeds with a window of ``i + 1`` states, trains a copy of
    ``kernel_spec`` (one per target component) and evaluates on
    ``eval_series``. Failures are logged and reported as ``nan``.
    """
    from .regress import fit, one_step_errors
    from .train import kernel_flow

    out = []
    for delay in tau_range:
        try:
            ds = delay_embed(series, delay + 1)
            kernels = [kernel_spec] * ds.n_targets
            thetas, _ = kernel_flow(ds, kernels, train_config)
            model = fit(ds, thetas, nugget)
            rmse = float(np.sqrt(np.mean(one_step_errors(model, eval_series) ** 2)))
        except KflowError as exc:
            log.warning("tau sweep: delay %d failed: %s", delay, exc)
            rmse = float("nan")
        out.append((int(delay), rmse))
    return out


def sweep_to_csv(sweep) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tau", "rmse"])
    for tau, rmse in sweep:
        w.writerow([tau, repr(float(rmse))])
    return buf.getvalue()


__all__ = [
    "DelayDataset",
    "KmdEnergyProfile",
    "default_kmd_kernel",
    "default_nugget",
    "delay_embed",
    "kmd_energies",
    "kmd_windows",
    "rmse_tau_sweep",
    "select_tau_kmd",
    "sweep_to_csv",
    "truncate_window",
]
