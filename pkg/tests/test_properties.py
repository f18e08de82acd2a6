"""Randomised invariants (hypothesis)."""

import numpy as np
from hypothesis import HealthCheck, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kflow.config import ExperimentConfig, PRESETS
from kflow.dynamics import TrajectoryRecord
from kflow.embedding import DelayDataset, delay_embed, kmd_energies, truncate_window
from kflow.kernels import KernelSpec, cross_gram, evaluate, gram
from kflow.metrics import mmd2, rho, sample_batch
from kflow.regress import fit, predict_variance

SETTINGS = settings(max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])

coords = st.floats(-3, 3, allow_nan=False, allow_infinity=False)
positive = st.floats(0.2, 3.0)
PD_KINDS = ["constant", "gaussian", "laplace"]


@st.composite
def pd_kernels(draw):
    kinds = draw(st.lists(st.sampled_from(PD_KINDS), min_size=1, max_size=3))
    spec = KernelSpec.parse("+".join(kinds))
    theta = []
    for p in spec.primitives:
        theta.extend(draw(st.lists(positive, min_size=p.n_slots, max_size=p.n_slots)))
    return spec.with_theta(theta)


@st.composite
def point_sets(draw, min_n=1, max_n=20, dim=None):
    d = dim or draw(st.integers(1, 3))
    n = draw(st.integers(min_n, max_n))
    return draw(arrays(float, (n, d), elements=coords))


@SETTINGS
@given(pd_kernels(), st.lists(coords, min_size=2, max_size=2), st.lists(coords, min_size=2, max_size=2))
def test_symmetry(k, x, y):
    assert evaluate(k, k.theta, x, y) == evaluate(k, k.theta, y, x)


@SETTINGS
@given(pd_kernels(), point_sets())
def test_pd_gram_is_psd(k, X):
    X = np.unique(X, axis=0)
    K = gram(k, k.theta, X)
    assert np.linalg.eigvalsh(K).min() >= -1e-8 * max(1.0, np.abs(K).max())


def test_triangular_in_r_squared_is_not_pd():
    k = KernelSpec.parse("triangular", [1.0, 1.0])
    assert not k.is_pd_family()
    assert np.linalg.eigvalsh(gram(k, k.theta, [0.0, 0.5, 1.0])).min() < -1e-3


@SETTINGS
@given(pd_kernels(), point_sets(max_n=8))
def test_gram_rows_equal_cross_gram(k, X):
    K = gram(k, k.theta, X)
    for i in range(len(X)):
        np.testing.assert_allclose(K[i], cross_gram(k, k.theta, X[i], X), rtol=1e-13, atol=1e-14)


@SETTINGS
@given(pd_kernels(), st.data())
def test_squared_mode_amplitude_sign(k, data):
    sq = KernelSpec(k.primitives, "squared", k.theta)
    flipped = np.array(k.theta)
    slot = data.draw(st.sampled_from(k.amplitude_slots()))
    flipped[slot] = -flipped[slot]
    x, y = data.draw(coords), data.draw(coords)
    assert evaluate(sq, sq.theta, x, y) == evaluate(sq, flipped, x, y)


@SETTINGS
@given(arrays(float, st.tuples(st.integers(3, 30), st.integers(1, 3)), elements=coords), st.integers(1, 4))
def test_embedding_round_trip(states, tau):
    if len(states) <= tau:
        return
    ds = delay_embed(TrajectoryRecord(states), tau)
    assert len(ds) == len(states) - tau
    np.testing.assert_array_equal(ds.Y, states[tau:])
    d = states.shape[1]
    for k in range(len(ds)):
        np.testing.assert_array_equal(ds.X[k, :d], states[k + tau - 1])


@SETTINGS
@given(arrays(float, (4, 6), elements=coords), st.integers(0, 5), st.integers(0, 5))
def test_truncation_nesting(w, i, j):
    np.testing.assert_array_equal(truncate_window(truncate_window(w, i), j), truncate_window(w, min(i, j)))


@SETTINGS
@given(st.integers(2, 200), st.data(), st.integers(0, 2**32))
def test_batch_nesting(N, data, seed):
    Nb = data.draw(st.integers(2, N))
    s = sample_batch(N, Nb, seed)
    assert len(np.unique(s.indices_b)) == Nb and len(s.indices_c) == Nb // 2
    assert set(s.indices_c) <= set(s.indices_b)


@SETTINGS
@given(pd_kernels(), point_sets(min_n=4, max_n=15, dim=1), st.integers(0, 2**32))
def test_rho_range_nested(k, X, seed):
    X = np.unique(X, axis=0)
    if len(X) < 2:
        return
    rng = np.random.default_rng(seed)
    Y = rng.normal(size=len(X))
    s = sample_batch(len(X), len(X), seed)
    val = rho(k, k.theta, X[s.indices_b], Y[s.indices_b], X[s.indices_c], Y[s.indices_c])
    assert -1e-8 <= val <= 1.0


@SETTINGS
@given(pd_kernels(), point_sets(max_n=10, dim=2), point_sets(max_n=10, dim=2))
def test_mmd_nonnegative_and_symmetric(k, S1, S2):
    a = mmd2(k, k.theta, S1, S2)
    assert a >= -1e-12
    assert abs(a - mmd2(k, k.theta, S2, S1)) <= 1e-12


@SETTINGS
@given(point_sets(min_n=2, max_n=8, dim=1), arrays(float, (3, 1), elements=coords), positive)
def test_variance_monotone_in_data(X, P, scale):
    X = np.unique(X, axis=0)
    if len(X) < 2:
        return
    k = KernelSpec.parse("gaussian", [1.0, scale])

    def ds(pts):
        return DelayDataset(pts, np.zeros((len(pts), 1)), 1, 1, (0,), (0,))

    few = predict_variance(fit(ds(X[:-1]), k, nugget=1e-12), P)
    more = predict_variance(fit(ds(X), k, nugget=1e-12), P)
    assert np.all(more <= few + 1e-8)


@SETTINGS
@given(arrays(float, st.integers(10, 60), elements=st.floats(-1, 1)), st.integers(0, 4))
def test_kmd_energy_sum(values, tau_max):
    if len(values) < tau_max + 3:
        return
    p = kmd_energies(values, tau_max)
    assert abs(p.energies.sum() - p.total) <= 1e-8 * max(abs(p.total), 1e-300)


@SETTINGS
@given(st.sampled_from(sorted(PRESETS)), st.integers(0, 2**63), st.integers(1, 500))
def test_config_round_trip(preset, seed, iters):
    cfg = ExperimentConfig.build(preset, overrides=[("seed", seed), ("train.iterations", iters)])
    assert ExperimentConfig.from_toml(cfg.to_toml()) == cfg
