"""Compiled free-running rollout; the Lyapunov loss runs thousands of these."""

from __future__ import annotations

import numba
import numpy as np

from .kernels import _SCALE_SLOTS, Kind, _scale

_CODES = {kind: i for i, kind in enumerate(Kind)}


def encode(spec, theta):
    """Flatten a spec into arrays the compiled kernel understands."""
    theta = np.array(theta, dtype=float)
    codes, offsets, powers = [], [], []
    i = 0
    for prim in spec.primitives:
        for s in _SCALE_SLOTS.get(prim.kind, ()):
            theta[i + s] = _scale(theta[i + s])
        codes.append(_CODES[prim.kind])
        offsets.append(i)
        powers.append(float(prim.flags.get("power", 2)))
        i += prim.n_slots
    return np.array(codes, np.int64), np.array(offsets, np.int64), np.array(powers), theta, spec.mode == "squared"


@numba.njit(cache=True)
def _radial(codes, offsets, powers, theta, squared, r, r2):
    out = 0.0
    for p in range(codes.shape[0]):
        o = offsets[p]
        a = theta[o] * theta[o] if squared else theta[o]
        c = codes[p]
        if c == 0:  # constant
            out += a
        elif c == 1:  # triangular
            out += a * max(0.0, 1.0 - r2 / theta[o + 1])
        elif c == 2:  # gaussian
            out += a * np.exp(-r2 / (theta[o + 1] * theta[o + 1]))
        elif c == 3:  # laplace
            out += a * np.exp(-r / (theta[o + 1] * theta[o + 1]))
        elif c == 4:  # locally periodic
            rq = r2 if powers[p] == 2.0 else r ** powers[p]
            s = np.sin(theta[o + 2] * np.pi * rq)
            out += a * np.exp(-theta[o + 1] * s * s) * np.exp(-r2 / (theta[o + 3] * theta[o + 3]))
        elif c == 5:  # quadratic
            out += a * r2
        else:  # power rational
            g = theta[o + 2]
            if r == 0.0 and g < 0.0:
                return np.nan
            out += a + (theta[o + 1] + r**g) ** theta[o + 3]
    return out


@numba.njit(cache=True)
def _rollout(codes, offsets, powers, thetas, squared, X, coef, window, n_steps, d):
    """Returns (states, failed_step); failed_step is -1 on success."""
    n, p = X.shape
    m = coef.shape[1]
    out = np.empty((n_steps, m))
    w = window.copy()
    for k in range(n_steps):
        for j in range(m):
            acc = 0.0
            for i in range(n):
                r2 = 0.0
                for q in range(p):
                    diff = w[q] - X[i, q]
                    r2 += diff * diff
                acc += coef[i, j] * _radial(
                    codes[j], offsets[j], powers[j], thetas[j], squared[j], np.sqrt(r2), r2
                )
            if not np.isfinite(acc):
                return out, k
            out[k, j] = acc
        for q in range(p - 1, d - 1, -1):
            w[q] = w[q - d]
        for q in range(d):
            w[q] = out[k, q]
    return out, -1


def rollout_states(model, window, n_steps):
    """Iterate ``model`` from a newest-first ``window``; returns (states, failed_step)."""
    enc = [encode(k, k.theta) for k in model.kernels]
    width = max(len(e[0]) for e in enc)
    # pad primitive lists to a common length with zero-amplitude constants
    codes = np.zeros((len(enc), width), np.int64)
    offsets = np.zeros((len(enc), width), np.int64)
    powers = np.full((len(enc), width), 2.0)
    slots = max(len(e[3]) for e in enc) + 1
    thetas = np.zeros((len(enc), slots))
    squared = np.zeros(len(enc), np.bool_)
    for j, (c, o, pw, th, sq) in enumerate(enc):
        codes[j, : len(c)] = c
        offsets[j, : len(c)] = o
        offsets[j, len(c) :] = slots - 1
        powers[j, : len(c)] = pw
        thetas[j, : len(th)] = th
        squared[j] = sq
    d = len(model.targets)
    return _rollout(codes, offsets, powers, thetas, squared, model.X, model.coef, np.asarray(window, float), int(n_steps), d)
