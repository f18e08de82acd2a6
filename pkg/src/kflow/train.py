"""Kernel Flows: gradient descent on a cross-validation loss over kernel parameters."""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .embedding import DelayDataset
from .errors import AllProbesFailed, KflowError, TrainingStalled
from .kernels import KernelSpec
from .metrics import LyapunovConfig, rho_batch, rho_L, rho_mmd, sample_batch

log = logging.getLogger("kflow.train")


class Metric(str, Enum):
    RHO = "rho"
    RHO_L = "rho_l"
    RHO_MMD = "rho_mmd"


@dataclass(frozen=True)
class TrainConfig:
    """Settings of the descent loop.

    ``batch_size`` applies to ``rho`` (``None``: the whole dataset); ``rho_l``
    and ``rho_mmd`` use the full dataset unless ``batch_losses`` is set.
    ``theta_clamps`` holds one ``{slot: (lo, hi)}`` dict per kernel; a slot
    with ``lo == hi`` is frozen and never probed.
    """

    metric: Metric = Metric.RHO
    iterations: int = 100
    step_size: float = 0.1
    batch_size: int | None = None
    mmd_sample_size: int | None = None
    mmd_half: bool = False
    rng_seed: int = 0
    fd_step: float = 1e-4
    clip_norm: float = 1.0
    theta_clamps: tuple = ()
    snapshot_every: int = 10
    nugget: float | None = None
    batch_losses: bool = False
    normalize_amplitudes: bool | None = None
    lyapunov: LyapunovConfig = field(default_factory=LyapunovConfig)

    def __post_init__(self):
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if not 0 < self.fd_step <= 1e-2:
            raise ValueError("fd_step must lie in (0, 1e-2]")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        clamps = tuple({int(k): (float(v[0]), float(v[1])) for k, v in dict(c).items()} for c in self.theta_clamps)
        object.__setattr__(self, "theta_clamps", clamps)

    @property
    def amplitudes_normalized(self) -> bool:
        if self.normalize_amplitudes is None:
            return self.metric is Metric.RHO_MMD
        return self.normalize_amplitudes

    def replace(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


@dataclass
class IterationRecord:
    iteration: int
    loss: float
    seed: int
    skipped: bool = False
    flagged_slots: int = 0


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    last_batch: object = None
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iter", "loss"])
        for r in self.records:
            w.writerow([r.iteration, repr(float(r.loss))])
        return buf.getvalue()

    def snapshots_json(self, kernels) -> str:
        doc = {
            str(it): [k.to_dict(th) for k, th in zip(kernels, thetas)]
            for it, thetas in sorted(self.snapshots.items())
        }
        return json.dumps(doc, indent=2)


def numerical_gradient(loss, theta, fd_step=1e-4, frozen=(), return_flags=False):
    """Central-difference gradient with per-slot step ``fd_step * max(1, |theta_i|)``.

    A slot whose probe raises a :class:`KflowError` (or returns a non-finite
    value) gets gradient 0 and is flagged. Frozen slots are skipped.
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    failed = np.zeros(theta.shape, dtype=bool)
    frozen = set(int(i) for i in frozen)
    active = [i for i in range(theta.size) if i not in frozen]
    for i in active:
        h = fd_step * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        try:
            g = (loss(up) - loss(dn)) / (2.0 * h)
        except KflowError as exc:
            log.debug("probe on slot %d failed: %s", i, exc)
            g = np.nan
        if np.isfinite(g):
            grad[i] = g
        else:
            failed[i] = True
    if active and failed[active].all():
        raise AllProbesFailed(f"all {len(active)} finite-difference probes failed")
    return (grad, failed) if return_flags else grad


def _apply_clamps(thetas, clamps):
    out = [t.copy() for t in thetas]
    for t, c in zip(out, clamps):
        for slot, (lo, hi) in c.items():
            t[slot] = min(max(t[slot], lo), hi)
    return out


def _normalize(thetas, kernels):
    out = []
    for t, k in zip(thetas, kernels):
        t = t.copy()
        amp = k.amplitude_slots()
        norm = np.linalg.norm(t[amp])
        if norm > 0:
            t[amp] /= norm
        out.append(t)
    return out


def _default_seed_window(dataset: DelayDataset):
    d = len(dataset.inputs) or dataset.source_dim
    return dataset.X[0].reshape(dataset.tau, d)[::-1]


class _Objective:
    """Loss of one iteration, as a function of the flattened parameter vector."""

    def __init__(self, dataset, kernels, config, seed, seed_window):
        self.dataset = dataset
        self.kernels = kernels
        self.config = config
        self.seed = seed
        self.sizes = [k.n_params for k in kernels]
        self.offsets = np.cumsum([0] + self.sizes)
        self.batch = None
        cfg = config
        N = len(dataset)
        if cfg.metric is Metric.RHO:
            self.batch = sample_batch(N, cfg.batch_size or N, seed)
        elif cfg.batch_losses and cfg.batch_size:
            self.batch = sample_batch(N, cfg.batch_size, seed)
        self.data = dataset.subset(self.batch.indices_b) if (self.batch is not None and cfg.metric is not Metric.RHO) else dataset
        self.seed_window = seed_window

    @property
    def separable(self) -> bool:
        # rho and rho_mmd are sums of per-kernel terms; rho_l couples all kernels
        return self.config.metric is not Metric.RHO_L

    def split(self, flat):
        return [flat[a:b] for a, b in zip(self.offsets[:-1], self.offsets[1:])]

    def component(self, i, theta_i) -> float:
        cfg = self.config
        k = self.kernels[i]
        if cfg.metric is Metric.RHO:
            return rho_batch(k, theta_i, self.dataset, self.batch, component=i, nugget=cfg.nugget)
        m = cfg.mmd_sample_size or len(self.data) // 2
        return rho_mmd(k, theta_i, self.data, m, self.seed, half=cfg.mmd_half)

    def joint(self, flat) -> float:
        specs = [k.with_theta(t) for k, t in zip(self.kernels, self.split(flat))]
        return rho_L(specs, self.data, self.config.lyapunov, self.seed_window, self.seed, self.config.nugget)

    def value(self, flat) -> float:
        if self.separable:
            return float(sum(self.component(i, t) for i, t in enumerate(self.split(flat))))
        return self.joint(flat)

    def gradient(self, flat, frozen):
        cfg = self.config
        if not self.separable:
            return numerical_gradient(self.joint, flat, cfg.fd_step, frozen, return_flags=True)
        grads, flags = [], []
        for i, t in enumerate(self.split(flat)):
            lo = self.offsets[i]
            fz = [s - lo for s in frozen if lo <= s < self.offsets[i + 1]]
            g, f = numerical_gradient(lambda th, i=i: self.component(i, th), t, cfg.fd_step, fz, return_flags=True)
            grads.append(g)
            flags.append(f)
        g, f = np.concatenate(grads), np.concatenate(flags)
        active = np.setdiff1d(np.arange(flat.size), frozen)
        if active.size and f[active].all():
            raise AllProbesFailed("every finite-difference probe failed")
        return g, f


def kernel_flow(dataset: DelayDataset, kernels, config: TrainConfig, seed_window=None):
    """Run the descent loop and return ``(trained kernels, history)``.

    Every iteration draws a fresh seed from a stream rooted at
    ``config.rng_seed``; the base loss and all finite-difference probes of that
    iteration share it. An iteration whose loss or gradient fails is skipped;
    more than ``iterations / 2`` consecutive skips raise :class:`TrainingStalled`.
    """
    if isinstance(kernels, KernelSpec):
        kernels = [kernels] * dataset.n_targets
    kernels = list(kernels)
    cfg = config
    clamps = list(cfg.theta_clamps) + [{}] * (len(kernels) - len(cfg.theta_clamps))
    thetas = _apply_clamps([np.array(k.theta, dtype=float) for k in kernels], clamps)
    if cfg.amplitudes_normalized:
        thetas = _normalize(thetas, kernels)
    frozen, offset = [], 0
    for k, c in zip(kernels, clamps):
        frozen.extend(offset + s for s, (lo, hi) in c.items() if lo == hi)
        offset += k.n_params
    if seed_window is None and cfg.metric is Metric.RHO_L:
        seed_window = _default_seed_window(dataset)

    history = TrainHistory(metadata={"metric": cfg.metric.value, "amplitudes_normalized": cfg.amplitudes_normalized})
    history.snapshots[0] = [t.copy() for t in thetas]
    seeds = np.random.default_rng(cfg.rng_seed)
    consecutive = 0
    for it in range(cfg.iterations):
        seed = int(seeds.integers(2**63))
        obj = _Objective(dataset, kernels, cfg, seed, seed_window)
        history.last_batch = obj.batch
        flat = np.concatenate(thetas)
        try:
            loss = obj.value(flat)
            grad, flags = obj.gradient(flat, frozen)
        except KflowError as exc:
            consecutive += 1
            log.warning("iteration %d skipped: %s", it, exc)
            history.records.append(IterationRecord(it, float("nan"), seed, skipped=True))
            if consecutive > cfg.iterations / 2:
                raise TrainingStalled(f"{consecutive} consecutive iterations failed (last: {exc})") from exc
            continue
        consecutive = 0
        norm = np.linalg.norm(grad)
        if norm > cfg.clip_norm:
            grad = grad * (cfg.clip_norm / norm)
        thetas = _apply_clamps(obj.split(flat - cfg.step_size * grad), clamps)
        if cfg.amplitudes_normalized:
            thetas = _normalize(thetas, kernels)
        history.records.append(IterationRecord(it, loss, seed, flagged_slots=int(flags.sum())))
        if cfg.snapshot_every and (it + 1) % cfg.snapshot_every == 0:
            history.snapshots[it + 1] = [t.copy() for t in thetas]
        log.debug("iter %d loss %.6g |grad| %.3g", it, loss, norm)
    history.snapshots[cfg.iterations] = [t.copy() for t in thetas]
    return [k.with_theta(t) for k, t in zip(kernels, thetas)], history
