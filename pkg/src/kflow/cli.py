"""Command-line entry point: ``kflow simulate|train|eval|tau|uncertainty``.

Every command takes ``--preset``, ``--config``, ``--seed`` and ``--out``;
any config key can be overridden with a flag of the same dotted name, e.g.
``--train.iterations 0`` or ``--eval.x0 '[0.4]'``. Short aliases:
``--system``, ``--x0``, ``--h``, ``--steps``, ``--metric``, ``--iterations``.

Exit codes: 0 success, 1 other failure, 2 configuration error, 3 non-finite
values, 4 training stalled, 5 model checksum mismatch.
"""

from __future__ import annotations

import functools
import json
import logging
import os
import sys
from pathlib import Path

import click
import numpy as np

from .config import ConfigError, ExperimentConfig, parse_value
from .dynamics import TrajectoryRecord, make_system, simulate
from .embedding import DelayDataset, delay_embed, kmd_energies, rmse_tau_sweep, select_tau_kmd, sweep_to_csv
from .errors import ChecksumMismatch, KflowError, NonFinite, TrainingStalled
from .kernels import KernelSpec
from .metrics import LyapunovConfig, sample_batch
from .regress import (
    SurrogateModel,
    error_interval,
    fit,
    one_step_errors,
    one_step_predictions,
    predict_mean,
    rollout,
)
from .train import TrainConfig, kernel_flow

log = logging.getLogger("kflow")

ALIASES = {
    "system": "system.name",
    "x0": "system.x0",
    "h": "system.h",
    "steps": "data.n_train",
    "metric": "train.metric",
    "iterations": "train.iterations",
}

EXIT_CONFIG, EXIT_NONFINITE, EXIT_STALLED, EXIT_CHECKSUM = 2, 3, 4, 5


def _setup_logging():
    level = os.environ.get("KFLOW_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def _parse_overrides(args):
    out, i = [], 0
    while i < len(args):
        tok = args[i]
        if not tok.startswith("--"):
            raise ConfigError(f"unexpected argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, raw = key.split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"flag {tok} needs a value")
            raw = args[i + 1]
            i += 2
        out.append((ALIASES.get(key, key), parse_value(raw)))
    return out


def _fmt(x):
    return repr(float(x))


def _write(path: Path, text: str):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def experiment_command(fn):
    """Shared flags, config assembly and exit-code mapping."""

    @click.option("--preset", default=None, help="Built-in experiment preset.")
    @click.option("--config", "config_path", default=None, help="TOML config file.")
    @click.option("--seed", default=None, type=click.IntRange(0, 2**64 - 1), help="RNG seed.")
    @click.option("--out", default=None, help="Output directory.")
    @click.pass_context
    @functools.wraps(fn)
    def wrapper(ctx, preset, config_path, seed, out, **kwargs):
        _setup_logging()
        try:
            cfg = ExperimentConfig.build(preset, config_path, _parse_overrides(ctx.args))
            if seed is not None:
                cfg.set("seed", seed)
            if out is not None:
                cfg.set("out", out)
            if cfg.get("out") is None:
                name = cfg.get("preset") or cfg.get("system.name")
                cfg.set("out", f"kflow-runs/{name}-s{cfg.get('seed')}")
            outdir = Path(cfg.get("out"))
            outdir.mkdir(parents=True, exist_ok=True)
            fn(cfg, outdir, **kwargs)
        except ConfigError as exc:
            click.echo(f"config error: {exc}", err=True)
            ctx.exit(EXIT_CONFIG)
        except NonFinite as exc:
            click.echo(f"non-finite values: {exc}", err=True)
            ctx.exit(EXIT_NONFINITE)
        except TrainingStalled as exc:
            click.echo(f"training stalled: {exc}", err=True)
            ctx.exit(EXIT_STALLED)
        except ChecksumMismatch as exc:
            click.echo(f"model checksum mismatch: {exc}", err=True)
            ctx.exit(EXIT_CHECKSUM)
        except KflowError as exc:
            click.echo(f"error: {exc}", err=True)
            ctx.exit(1)

    return wrapper


_EXTRA = {"ignore_unknown_options": True, "allow_extra_args": True}


# --------------------------------------------------------------------------
# config -> objects


def system_of(cfg):
    try:
        return make_system(cfg.get("system.name"), cfg.get("system.params"), cfg.get("system.h"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def trajectory(cfg, x0, n_pairs):
    """Simulate enough states for ``n_pairs`` embedded pairs."""
    if n_pairs < 1:
        raise ConfigError(f"need at least one point, got {n_pairs}")
    steps = n_pairs + int(cfg.get("data.tau")) - 1
    try:
        return simulate(system_of(cfg), x0, steps)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def training_series(cfg):
    if cfg.get("data.file"):
        return TrajectoryRecord.from_csv(cfg.get("data.file"))
    return trajectory(cfg, cfg.get("system.x0"), cfg.get("data.n_train"))


def embed(cfg, series):
    return delay_embed(series, cfg.get("data.tau"), cfg.get("data.targets"), cfg.get("data.inputs"))


def kernels_of(cfg, n_targets, family=None, theta=None):
    flags = {int(k): dict(v) for k, v in (cfg.get("kernel.flags") or {}).items()}
    family = family or cfg.get("kernel.family")
    mode = cfg.get("kernel.mode", "raw")
    try:
        if theta is not None:
            return [KernelSpec.parse(family, theta, mode, flags)] * n_targets
        thetas = cfg.get("kernel.thetas")
        if thetas is not None:
            if len(thetas) != n_targets:
                raise ConfigError(f"kernel.thetas has {len(thetas)} rows for {n_targets} targets")
            return [KernelSpec.parse(family, t, mode, flags) for t in thetas]
        return [KernelSpec.parse(family, cfg.get("kernel.theta"), mode, flags)] * n_targets
    except ValueError as exc:
        raise ConfigError(f"kernel: {exc}") from exc


def train_config(cfg, n_kernels, iterations=None, clamps=None):
    t = cfg.get("train")
    if clamps is None:
        clamps = t.get("clamps")
    clamps = {k: tuple(v) for k, v in (clamps or {}).items()}
    try:
        return TrainConfig(
            metric=t.get("metric", "rho"),
            iterations=int(t.get("iterations", 100) if iterations is None else iterations),
            step_size=float(t.get("step_size", 0.1)),
            batch_size=t.get("batch_size"),
            mmd_sample_size=t.get("mmd_sample_size"),
            rng_seed=int(cfg.get("seed", 0)),
            fd_step=float(t.get("fd_step", 1e-4)),
            theta_clamps=(clamps,) * n_kernels,
            nugget=t.get("nugget"),
            lyapunov=LyapunovConfig(**(t.get("lyapunov") or {})),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"train: {exc}") from exc


def eval_series(cfg):
    x0s = cfg.get("eval.x0")
    if x0s is None:
        x0s = [cfg.get("system.x0")]
    return [(x0, trajectory(cfg, x0, cfg.get("eval.n_test"))) for x0 in x0s]


def _load_model(cfg, model_path):
    path = Path(model_path) if model_path else Path(cfg.get("out")) / "model.json"
    if not path.exists():
        raise ConfigError(f"model file {path} not found; run `kflow train` first or pass --model")
    return SurrogateModel.load(path)


def _rmse_table(rows, n_comp):
    head = "x0".ljust(24) + "".join(f"rmse[{i}]".rjust(14) for i in range(n_comp))
    lines = [head]
    for x0, rmse in rows:
        lines.append(str(x0).ljust(24) + "".join(f"{v:14.6g}" for v in rmse))
    return "\n".join(lines)


# --------------------------------------------------------------------------
# commands


@click.group()
def main():
    """Kernel learning for surrogate models of dynamical systems."""


@main.command("simulate", context_settings=_EXTRA)
@experiment_command
def simulate_cmd(cfg, outdir):
    """Simulate the configured system and write trajectory.csv."""
    n = cfg.get("data.n_train")
    if n < 0:
        raise ConfigError("steps must be nonnegative")
    try:
        traj = simulate(system_of(cfg), cfg.get("system.x0"), n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    traj.to_csv(outdir / "trajectory.csv")
    click.echo(f"system={traj.origin['system']} n={len(traj)} dt={traj.dt}")


def _fit_subset(cfg, ds, history):
    if cfg.get("train.fit_on", "all") != "last_batch":
        return ds
    batch = history.last_batch
    if batch is None:
        bs = cfg.get("train.batch_size") or len(ds)
        batch = sample_batch(len(ds), min(bs, len(ds)), int(cfg.get("seed", 0)))
    return ds.subset(batch.indices_b)


@main.command(context_settings=_EXTRA)
@experiment_command
def train(cfg, outdir):
    """Learn kernel parameters, fit the surrogate, report test RMSE."""
    ds = embed(cfg, training_series(cfg))
    k0 = kernels_of(cfg, ds.n_targets)
    tc = train_config(cfg, len(k0))
    trained, history = kernel_flow(ds, k0, tc)
    data = _fit_subset(cfg, ds, history)
    nugget = tc.nugget
    model = fit(data, trained, nugget)
    baseline = fit(data, k0, nugget)
    model.save(outdir / "model.json")
    baseline.save(outdir / "model_theta0.json")
    _write(outdir / "history.csv", history.to_csv())
    _write(outdir / "theta.json", history.snapshots_json(trained))
    _write(outdir / "config.toml", cfg.to_toml())

    rows, report = [], {"metric": tc.metric.value, "iterations": tc.iterations, "tests": []}
    for x0, series in eval_series(cfg):
        rmse = one_step_errors(model, series)
        rmse0 = one_step_errors(baseline, series)
        rows.append((x0, rmse))
        report["tests"].append({"x0": x0, "rmse": rmse.tolist(), "rmse_theta0": rmse0.tolist()})
    losses = history.losses
    final = float(losses[-1]) if len(losses) else float("nan")
    report.update(
        final_loss=final,
        theta=[k.theta.tolist() for k in trained],
        theta0=[k.theta.tolist() for k in k0],
        metadata=history.metadata,
        skipped=sum(r.skipped for r in history.records),
    )
    _write(outdir / "report.json", json.dumps(report, indent=2))
    click.echo(f"final loss: {final:.6g}")
    for i, k in enumerate(trained):
        click.echo(f"theta[{i}]: " + " ".join(f"{v:.6g}" for v in k.theta))
    click.echo(_rmse_table(rows, ds.n_targets))


@main.command("eval", context_settings=_EXTRA)
@click.option("--model", "model_path", default=None, help="Model JSON (default: <out>/model.json).")
@experiment_command
def eval_cmd(cfg, outdir, model_path):
    """One-step RMSE per test trajectory, difference CSVs and an optional rollout."""
    model = _load_model(cfg, model_path)
    rows, report = [], {"tests": []}
    for i, (x0, series) in enumerate(eval_series(cfg)):
        truth, pred = one_step_predictions(model, series)
        rmse = np.sqrt(np.mean((pred - truth) ** 2, axis=0))
        rows.append((x0, rmse))
        report["tests"].append({"x0": x0, "rmse": rmse.tolist()})
        lines = ["t," + ",".join(f"d{j}" for j in range(truth.shape[1]))]
        t0 = model.tau
        for k, (a, b) in enumerate(zip(truth, pred)):
            lines.append(",".join([_fmt((t0 + k) * series.dt)] + [_fmt(v) for v in b - a]))
        _write(outdir / f"difference_{i}.csv", "\n".join(lines) + "\n")
    steps = int(cfg.get("eval.rollout_steps", 0))
    if steps > 0:
        x0 = cfg.get("eval.rollout_x0", cfg.get("system.x0"))
        true = simulate(system_of(cfg), x0, steps + model.tau - 1)
        seed = true.states[: model.tau][:, list(model.inputs)]
        roll = rollout(model, seed, steps, true.dt)
        roll.to_csv(outdir / "rollout.csv")
        lo, hi = true.states.min(axis=0), true.states.max(axis=0)
        margin = 0.2 * (hi - lo)
        inside = bool(np.all((roll.states >= lo - margin) & (roll.states <= hi + margin)))
        report["rollout"] = {"steps": steps, "within_box": inside, "min": roll.states.min(0).tolist(), "max": roll.states.max(0).tolist()}
        click.echo(f"rollout: {steps} steps, within true bounding box +-20%: {inside}")
    _write(outdir / "eval.json", json.dumps(report, indent=2))
    click.echo(_rmse_table(rows, model.n_outputs))


@main.command(context_settings=_EXTRA)
@experiment_command
def tau(cfg, outdir):
    """RMSE-vs-delay sweep and KMD alignment energies; recommends a delay."""
    t = cfg.get("tau")
    x0 = t.get("x0", cfg.get("system.x0"))
    n = int(t.get("n_series", 100))
    try:
        full = simulate(system_of(cfg), x0, n)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    comp = int(t.get("component", 0))
    tau_range = t.get("tau_range") or list(range(int(t.get("tau_max", 6)) + 1))
    tau_max = max(tau_range)

    family = t.get("family", cfg.get("kernel.family"))
    theta = t.get("theta", cfg.get("kernel.theta"))
    kernel = kernels_of(cfg, 1, family, theta)[0]
    tc = train_config(cfg, 1, t.get("iterations"), t.get("clamps"))
    series = full.component(comp)
    test_x0 = t.get("test_x0", x0)
    test = simulate(system_of(cfg), test_x0, int(t.get("n_test", 5000))).component(comp)
    sweep = rmse_tau_sweep(series, tau_range, kernel, tc, test)
    _write(outdir / "tau_sweep.csv", sweep_to_csv(sweep))

    recommended = None
    for c in t.get("kmd_components", [comp]):
        profile = kmd_energies(full.component(c), tau_max)
        _write(outdir / f"kmd_energies_{c}.csv", profile.to_csv())
        # restrict the argmax to the requested delays
        sub = np.array([profile.energies[i] for i in tau_range])
        best = tau_range[select_tau_kmd(sub)]
        click.echo(f"component {c}: KMD energies " + " ".join(f"{e:.4g}" for e in profile.energies) + f" -> tau {best}")
        if c == comp:
            recommended = best
    if recommended is None:
        profile = kmd_energies(series, tau_max)
        recommended = tau_range[select_tau_kmd(np.array([profile.energies[i] for i in tau_range]))]
    click.echo("tau,rmse")
    for d, r in sweep:
        click.echo(f"{d},{r:.6g}")
    click.echo(f"recommended tau: {recommended}")
    if all(np.isnan(r) for _, r in sweep):
        click.echo("every delay of the sweep failed", err=True)
        sys.exit(1)


@main.command(context_settings=_EXTRA)
@click.option("--model", "model_path", default=None, help="Model JSON (default: <out>/model.json).")
@experiment_command
def uncertainty(cfg, outdir, model_path):
    """Predictions with error-interval half-widths along a test trajectory."""
    model = _load_model(cfg, model_path)
    n = int(cfg.get("uncertainty.n", 0))
    if n < 1:
        raise ConfigError("uncertainty.n must be at least 1 (empty test series)")
    x0 = cfg.get("uncertainty.x0", cfg.get("system.x0"))
    test = embed(cfg, trajectory(cfg, x0, n))
    train_part = DelayDataset(model.X, model.Y, model.tau, model.source_dim, model.inputs, model.targets)
    reference = train_part.concat(test)
    pred = predict_mean(model, test.X)
    delta = error_interval(model, test.X, reference)
    m = model.n_outputs
    header = ["t"] + [f"truth{i}" for i in range(m)] + [f"pred{i}" for i in range(m)] + [f"delta{i}" for i in range(m)]
    lines = [",".join(header)]
    for k in range(len(test)):
        vals = [(k + model.tau) * 1.0] + list(test.Y[k]) + list(pred[k]) + list(delta[k])
        lines.append(",".join(_fmt(v) for v in vals))
    _write(outdir / "uncertainty.csv", "\n".join(lines) + "\n")
    covered = float(np.mean(np.all(np.abs(pred - test.Y) <= delta, axis=1)))
    click.echo(f"points={len(test)} mean_delta={np.mean(delta):.6g} coverage={covered:.3f}")


if __name__ == "__main__":  # pragma: no cover
    main()
