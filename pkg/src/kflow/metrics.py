"""
Cross-validation losses for kernel learning and their ingredients.

* :func:`rho` -- relative RKHS-norm gap between the interpolants of a batch
  and of a random half of it.
* :func:`rho_mmd` -- squared MMD between two disjoint samples of delay vectors.
* :func:`rho_L` -- gap between the maximal Lyapunov exponents of surrogates
  fitted on all data and on a random half.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.spatial import cKDTree

from .dynamics import TrajectoryRecord
from .embedding import DelayDataset
from .errors import (
    BatchTooLarge,
    NoValidNeighbors,
    SampleTooLarge,
    SeriesTooShort,
    ZeroDenominator,
)
from .kernels import KernelSpec, cross_matrix, gram
from .linalg import factorize


@dataclass(frozen=True)
class BatchSample:
    indices_b: np.ndarray
    indices_c: np.ndarray
    rng_seed: int


def sample_batch(N: int, N_b: int, seed) -> BatchSample:
    """Draw ``N_b`` of ``N`` indices, then half of those, uniformly without replacement."""
    if N_b < 2:
        raise BatchTooLarge(f"batch size must be at least 2, got {N_b}")
    if N_b > N:
        raise BatchTooLarge(f"batch of {N_b} from a dataset of {N}")
    rng = np.random.default_rng(seed)
    b = np.sort(rng.choice(N, size=N_b, replace=False))
    c = np.sort(rng.choice(b, size=N_b // 2, replace=False))
    return BatchSample(b, c, seed)


def _quad_forms(spec, theta, Xb, Yb, Xc, Yc, nugget):
    Kb = gram(spec, theta, Xb)
    Kc = gram(spec, theta, Xc)
    fb, ab = factorize(Kb, nugget, rhs=Yb)
    # the half batch starts from the full batch's nugget so both forms share it
    fc, ac = factorize(Kc, fb.nugget, rhs=Yc)
    if fc.nugget > fb.nugget:
        fb, ab = factorize(Kb, fc.nugget, rhs=Yb, escalate=False)
    return float(np.sum(Yc * ac)), float(np.sum(Yb * ab))


def rho(kernel: KernelSpec, theta, Xb, Yb, Xc, Yc, nugget=None) -> float:
    """``1 - Yc^T Kc^-1 Yc / Yb^T Kb^-1 Yb``; multi-column ``Y`` sums both forms over columns."""
    theta = kernel.theta if theta is None else theta
    num, den = _quad_forms(kernel, theta, np.asarray(Xb), np.asarray(Yb, float), np.asarray(Xc), np.asarray(Yc, float), nugget)
    if den <= 1e-14:
        raise ZeroDenominator(f"Yb^T Kb^-1 Yb = {den:.3g}")
    return 1.0 - num / den


def rho_batch(kernel: KernelSpec, theta, dataset: DelayDataset, batch: BatchSample, component=None, nugget=None) -> float:
    Y = dataset.Y if component is None else dataset.Y[:, component]
    b, c = batch.indices_b, batch.indices_c
    return rho(kernel, theta, dataset.X[b], Y[b], dataset.X[c], Y[c], nugget)


def mmd2(kernel: KernelSpec, theta, S1, S2) -> float:
    """Squared MMD between two empirical measures, diagonal terms included."""
    theta = kernel.theta if theta is None else theta
    S1 = np.asarray(S1, dtype=float)
    S2 = np.asarray(S2, dtype=float)
    if len(S1) < 1 or len(S2) < 1:
        raise SampleTooLarge("both samples need at least one point")
    # fixed argument order makes the result bit-for-bit symmetric
    if (len(S2), S2.tobytes()) < (len(S1), S1.tobytes()):
        S1, S2 = S2, S1
    kxx = gram(kernel, theta, S1).mean()
    kyy = gram(kernel, theta, S2).mean()
    kxy = cross_matrix(kernel, theta, S1, S2).mean()
    return float(kxx + kyy - 2.0 * kxy)


def mmd_samples(n_points: int, m: int, seed, half=False):
    """Index sets for two disjoint samples of size ``m`` (or ``m`` and a half-subsample)."""
    rng = np.random.default_rng(seed)
    if half:
        if m > n_points:
            raise SampleTooLarge(f"sample of {m} from {n_points} points")
        s1 = rng.choice(n_points, size=m, replace=False)
        return s1, rng.choice(s1, size=max(1, m // 2), replace=False)
    if 2 * m > n_points:
        raise SampleTooLarge(f"two disjoint samples of {m} need {2 * m} points, have {n_points}")
    idx = rng.choice(n_points, size=2 * m, replace=False)
    return idx[:m], idx[m:]


def rho_mmd(kernel: KernelSpec, theta, dataset: DelayDataset, sample_size: int, seed, half=False) -> float:
    """MMD loss over two random samples of delay vectors.

    With ``half=True`` the second sample is a random half of the first.
    """
    s1, s2 = mmd_samples(len(dataset), sample_size, seed, half)
    return mmd2(kernel, theta, dataset.X[s1], dataset.X[s2])


# --------------------------------------------------------------------------
# Lyapunov exponents


class Estimator(str, Enum):
    DIVERGENCE_FIT = "divergence_fit"
    MEAN_LOG_DERIVATIVE = "mean_log_derivative"


@dataclass(frozen=True)
class LyapunovConfig:
    """Settings for the maximal-exponent estimate.

    ``min_tsep`` excludes temporal neighbours; neighbours closer than
    ``min_separation`` (default: a millionth of the attractor extent) are
    skipped as duplicates. The divergence curve is fitted over at most
    ``fit_len`` steps and stops early once the mean separation reaches
    ``saturation`` times the attractor extent.
    """

    rollout_len: int = 2000
    transient_skip: int = 100
    min_tsep: int = 10
    min_separation: float | None = None
    fit_len: int = 20
    saturation: float = 0.05
    estimator: Estimator = Estimator.DIVERGENCE_FIT

    def __post_init__(self):
        if not self.rollout_len > self.transient_skip >= 0:
            raise ValueError("need rollout_len > transient_skip >= 0")
        object.__setattr__(self, "estimator", Estimator(self.estimator))


def _divergence_curve(X, cfg: LyapunovConfig):
    n = X.shape[0]
    L = cfg.fit_len
    n_ref = n - L
    if n_ref < 2 * cfg.min_tsep + 2:
        raise SeriesTooShort(f"series of length {n} too short for fit_len={L}, min_tsep={cfg.min_tsep}")
    extent = float(np.max(np.ptp(X, axis=0)))
    if extent == 0.0:
        raise NoValidNeighbors("trajectory is constant")
    floor = cfg.min_separation if cfg.min_separation is not None else 1e-6 * extent
    Xr = X[:n_ref]
    tree = cKDTree(Xr)
    k = min(n_ref, 2 * cfg.min_tsep + 8)
    neighbor = np.full(n_ref, -1)
    pending = np.arange(n_ref)
    while pending.size:
        dist, idx = tree.query(Xr[pending], k=k)
        dist, idx = np.atleast_2d(dist), np.atleast_2d(idx)
        ok = (np.abs(idx - pending[:, None]) > cfg.min_tsep) & (dist > floor) & (idx < n_ref)
        has = ok.any(axis=1)
        first = np.argmax(ok, axis=1)
        neighbor[pending[has]] = idx[has, first[has]]
        if k >= n_ref:
            break
        pending = pending[~has]
        k = min(n_ref, 4 * k)
    valid = np.nonzero(neighbor >= 0)[0]
    if valid.size == 0:
        raise NoValidNeighbors("no neighbour pair satisfies the separation constraints")
    steps = np.arange(L + 1)
    a = X[valid[:, None] + steps]
    b = X[neighbor[valid][:, None] + steps]
    with np.errstate(divide="ignore"):
        logd = np.log(np.linalg.norm(a - b, axis=2))
    logd[~np.isfinite(logd)] = np.nan
    curve = np.nanmean(logd, axis=0)
    return curve, extent


def lyapunov_max(series, config: LyapunovConfig | None = None, derivative=None) -> float:
    """Largest Lyapunov exponent per step.

    ``divergence_fit`` follows nearest-neighbour pairs and returns the slope of
    the mean log-separation; ``mean_log_derivative`` (scalar series with a
    known map derivative) averages ``log|f'(x_k)|`` along the orbit.
    """
    cfg = config or LyapunovConfig()
    X = series.states if isinstance(series, TrajectoryRecord) else np.asarray(series, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if cfg.estimator is Estimator.MEAN_LOG_DERIVATIVE:
        if derivative is None:
            raise ValueError("mean_log_derivative needs the map derivative")
        if X.shape[1] != 1:
            raise ValueError("mean_log_derivative is defined for scalar series only")
        with np.errstate(divide="ignore"):
            vals = np.log(np.abs(derivative(X[:, 0])))
        vals = vals[np.isfinite(vals)]
        if vals.size == 0:
            raise NoValidNeighbors("derivative vanishes along the whole orbit")
        return float(np.mean(vals))
    curve, extent = _divergence_curve(X, cfg)
    good = np.isfinite(curve)
    if good.sum() < 2:
        raise NoValidNeighbors("divergence curve has fewer than two finite points")
    # fit the exponential-growth stretch: up to saturation of the separation
    limit = np.log(cfg.saturation * extent)
    stop = np.nonzero(good & (curve > limit))[0]
    end = max(int(stop[0]), 2) if stop.size else len(curve)
    steps = np.arange(len(curve))[:end]
    sel = good[:end]
    if sel.sum() < 2:
        raise NoValidNeighbors("too few finite points before saturation")
    slope = np.polyfit(steps[sel], curve[:end][sel], 1)[0]
    return float(slope)


def _window_series(traj: TrajectoryRecord, tau: int):
    X = traj.states
    if tau == 1:
        return X
    d = X.shape[1]
    n = X.shape[0] - tau + 1
    return np.hstack([X[tau - 1 - j : tau - 1 - j + n] for j in range(tau)]).reshape(n, tau * d)


def surrogate_lyapunov(model, seed_window, config: LyapunovConfig) -> float:
    from .regress import rollout

    traj = rollout(model, seed_window, config.rollout_len)
    states = _window_series(traj, model.tau)[config.transient_skip :]
    return lyapunov_max(states, config)


def rho_L(kernels, dataset: DelayDataset, lyap_config: LyapunovConfig, seed_window, seed, nugget=None, half_indices=None) -> float:
    """``|lambda_N - lambda_{N/2}|`` for surrogates fitted on all data and on a seeded half.

    ``half_indices`` overrides the random half (used to check degenerate cases).
    """
    from .regress import fit

    N = len(dataset)
    if N < 4:
        raise SeriesTooShort(f"rho_L needs at least 4 samples, got {N}")
    if half_indices is None:
        rng = np.random.default_rng(seed)
        half_indices = np.sort(rng.choice(N, size=N // 2, replace=False))
    full = fit(dataset, kernels, nugget)
    half = fit(dataset.subset(half_indices), kernels, nugget)
    lam_full = surrogate_lyapunov(full, seed_window, lyap_config)
    lam_half = surrogate_lyapunov(half, seed_window, lyap_config)
    return abs(lam_full - lam_half)
