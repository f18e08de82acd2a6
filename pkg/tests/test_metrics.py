import math

import numpy as np
import pytest

from kflow.dynamics import TrajectoryRecord, make_system, simulate
from kflow.embedding import DelayDataset, delay_embed
from kflow.errors import BatchTooLarge, SampleTooLarge, ZeroDenominator
from kflow.kernels import KernelSpec
from kflow.metrics import (
    Estimator,
    LyapunovConfig,
    lyapunov_max,
    mmd2,
    rho,
    rho_L,
    rho_mmd,
    sample_batch,
    surrogate_lyapunov,
)
from kflow.regress import fit


def henon_jacobian_exponent(n=100_000, a=1.4, b=0.3):
    """Reference exponent from QR re-orthonormalisation of Jacobian products."""
    x, y = 0.1, 0.1
    for _ in range(1000):
        x, y = 1 - a * x * x + y, b * x
    Q = np.eye(2)
    acc = 0.0
    for _ in range(n):
        J = np.array([[-2 * a * x, 1.0], [b, 0.0]])
        Q, R = np.linalg.qr(J @ Q)
        acc += math.log(abs(R[0, 0]))
        x, y = 1 - a * x * x + y, b * x
    return acc / n


# --- batches ---------------------------------------------------------------


def test_batch_of_two():
    s = sample_batch(2, 2, 0)
    assert sorted(s.indices_b) == [0, 1]
    assert len(s.indices_c) == 1


def test_batch_is_seeded():
    a, b = sample_batch(100, 30, 7), sample_batch(100, 30, 7)
    assert np.array_equal(a.indices_b, b.indices_b) and np.array_equal(a.indices_c, b.indices_c)


def test_batch_nesting_and_sizes():
    s = sample_batch(50, 11, 3)
    assert len(set(s.indices_b)) == 11 and len(s.indices_c) == 5
    assert set(s.indices_c) <= set(s.indices_b)


def test_batch_too_large():
    with pytest.raises(BatchTooLarge):
        sample_batch(5, 6, 0)
    with pytest.raises(BatchTooLarge):
        sample_batch(5, 1, 0)


def test_batch_frequencies_uniform():
    counts = np.zeros(1000)
    for seed in range(10_000):
        counts[sample_batch(1000, 100, seed).indices_b] += 1
    freq = counts / 10_000
    sd = math.sqrt(0.1 * 0.9 / 10_000)
    # 3 sigma per index, with a little slack for the maximum over 1000 indices
    assert np.mean(np.abs(freq - 0.1) <= 3 * sd) > 0.99
    assert np.all(np.abs(freq - 0.1) <= 4.5 * sd)


# --- rho -------------------------------------------------------------------


def test_rho_identical_subsets(gauss, rng):
    X = rng.normal(size=(8, 1))
    Y = rng.normal(size=8)
    assert rho(gauss, gauss.theta, X, Y, X, Y) == pytest.approx(0.0, abs=1e-12)


def test_rho_two_point_closed_form(gauss):
    val = rho(gauss, gauss.theta, [[0.0], [1.0]], [1.0, 0.0], [[0.0]], [1.0], nugget=0.0)
    assert val == pytest.approx(math.exp(-2), abs=1e-12)


def test_rho_zero_when_interpolants_agree(gauss, rng):
    Xc = rng.uniform(-1, 1, size=(4, 1))
    c = rng.normal(size=4)
    Xb = np.vstack([Xc, rng.uniform(-1, 1, size=(4, 1))])
    # targets generated by a function in the span of the c-points
    from kflow.kernels import cross_matrix

    Yb = cross_matrix(gauss, gauss.theta, Xb, Xc) @ c
    assert rho(gauss, gauss.theta, Xb, Yb, Xc, Yb[:4], nugget=0.0) == pytest.approx(0.0, abs=1e-8)


def test_rho_zero_denominator(gauss):
    with pytest.raises(ZeroDenominator):
        rho(gauss, gauss.theta, [[0.0], [1.0]], [0.0, 0.0], [[0.0]], [0.0])


def test_rho_vector_targets_sum_forms(gauss, rng):
    X = rng.normal(size=(6, 1))
    Y = rng.normal(size=(6, 2))
    got = rho(gauss, gauss.theta, X, Y, X[:3], Y[:3])
    assert -1e-8 <= got <= 1


# --- mmd -------------------------------------------------------------------


def test_mmd_self_is_zero(gauss, rng):
    S = rng.normal(size=(10, 2))
    assert abs(mmd2(gauss, gauss.theta, S, S)) <= 1e-12


def test_mmd_symmetric(gauss, rng):
    S1, S2 = rng.normal(size=(7, 1)), rng.normal(size=(5, 1))
    assert mmd2(gauss, gauss.theta, S1, S2) == mmd2(gauss, gauss.theta, S2, S1)


def test_mmd_two_singletons(gauss):
    assert mmd2(gauss, gauss.theta, [[0.0]], [[1.0]]) == pytest.approx(2 - 2 * math.exp(-1), abs=1e-14)


def _dataset(X):
    X = np.asarray(X, dtype=float).reshape(len(X), -1)
    return DelayDataset(X, X.copy(), 1, X.shape[1], (0,), (0,))


def test_rho_mmd_identical_points(gauss):
    assert rho_mmd(gauss, gauss.theta, _dataset(np.full(20, 0.3)), 5, 0) == 0.0


def test_rho_mmd_seeded(gauss, rng):
    ds = _dataset(rng.normal(size=40))
    assert rho_mmd(gauss, gauss.theta, ds, 10, 4) == rho_mmd(gauss, gauss.theta, ds, 10, 4)


def test_rho_mmd_constant_kernel(rng):
    k = KernelSpec.parse("constant", [2.5])
    assert rho_mmd(k, k.theta, _dataset(rng.normal(size=40)), 10, 1) == pytest.approx(0.0, abs=1e-14)


def test_rho_mmd_sample_too_large(gauss, rng):
    with pytest.raises(SampleTooLarge):
        rho_mmd(gauss, gauss.theta, _dataset(rng.normal(size=10)), 6, 0)


# --- Lyapunov --------------------------------------------------------------


def test_lyapunov_bernoulli():
    traj = simulate(make_system("bernoulli"), "pi/3", 2000)
    assert abs(lyapunov_max(traj) - math.log(2)) <= 0.05


def test_lyapunov_logistic():
    traj = simulate(make_system("logistic"), 0.1, 2000)
    assert abs(lyapunov_max(traj) - math.log(2)) <= 0.1


def test_lyapunov_logistic_mean_log_derivative():
    traj = simulate(make_system("logistic"), 0.1, 20_000)
    cfg = LyapunovConfig(estimator=Estimator.MEAN_LOG_DERIVATIVE)
    est = lyapunov_max(traj, cfg, derivative=lambda x: 4 - 8 * x)
    assert abs(est - math.log(2)) <= 0.02


def test_lyapunov_henon_against_jacobian_oracle():
    oracle = henon_jacobian_exponent()
    assert abs(oracle - 0.42) <= 0.01
    traj = simulate(make_system("henon"), [0.9, -0.9], 5000)
    assert abs(lyapunov_max(traj) - oracle) <= 0.05


def test_lyapunov_config_validation():
    with pytest.raises(ValueError):
        LyapunovConfig(rollout_len=100, transient_skip=100)


def _contracting_dataset():
    s = TrajectoryRecord(0.5 * np.sin(0.7 * np.arange(40)))
    ds = delay_embed(s, 1)
    ds.Y[:] = 0.5 * ds.X
    return ds


def test_rho_l_degenerate_half_is_zero():
    ds = delay_embed(simulate(make_system("logistic"), 0.1, 60), 1)
    k = KernelSpec.parse("gaussian", [1.0, 0.3])
    cfg = LyapunovConfig(rollout_len=400)
    assert rho_L([k], ds, cfg, [[0.3]], 0, half_indices=np.arange(len(ds))) == 0.0


def test_rho_l_contracting_surrogates():
    ds = _contracting_dataset()
    k = KernelSpec.parse("gaussian+quadratic", [1.0, 2.0, 0.0])
    cfg = LyapunovConfig(rollout_len=300, transient_skip=0)
    assert surrogate_lyapunov(fit(ds, [k]), [[0.4]], cfg) < 0
    assert rho_L([k], ds, cfg, [[0.4]], 0) < 0.1
