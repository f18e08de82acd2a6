import math

import numpy as np
import pytest

from kflow.errors import DimensionMismatch, NonFinite, ParameterArity
from kflow.kernels import KernelSpec, cross_gram, diagnostics, evaluate, gram


def test_gaussian_at_zero_distance(gauss):
    assert evaluate(gauss, gauss.theta, 0.3, 0.3) == 1.0


def test_gaussian_unit_distance(gauss):
    assert evaluate(gauss, gauss.theta, 0.0, 1.0) == pytest.approx(math.exp(-1), abs=1e-15)


def test_triangular_clamps_at_zero():
    k = KernelSpec.parse("triangular", [1.0, 1.0])
    assert evaluate(k, k.theta, 0.0, 2.0) == 0.0


def test_quadratic():
    k = KernelSpec.parse("quadratic", [1.0])
    assert evaluate(k, k.theta, 0.0, 3.0) == pytest.approx(9.0)


def test_slot_counts():
    counts = {
        "constant": 1,
        "triangular": 2,
        "gaussian": 2,
        "laplace": 2,
        "locally_periodic": 4,
        "quadratic": 1,
        "power_rational": 4,
    }
    for kind, n in counts.items():
        assert KernelSpec.parse(kind).n_params == n


def test_arity_mismatch():
    with pytest.raises(ParameterArity):
        KernelSpec.parse("gaussian", [1.0, 1.0, 1.0])
    k = KernelSpec.parse("gaussian")
    with pytest.raises(ParameterArity):
        evaluate(k, [1.0], 0.0, 1.0)


def test_power_rational_zero_to_negative_power():
    k = KernelSpec.parse("power_rational", [0.0, 1.0, -1.0, 1.0])
    with pytest.raises(NonFinite):
        evaluate(k, k.theta, 0.5, 0.5)
    # fine away from r = 0
    assert np.isfinite(evaluate(k, k.theta, 0.0, 0.5))


def test_dimension_mismatch(gauss):
    with pytest.raises(DimensionMismatch):
        evaluate(gauss, gauss.theta, [0.0, 1.0], [0.0])


def test_gram_single_point(gauss):
    assert np.array_equal(gram(gauss, gauss.theta, [[0.2]]), [[1.0]])


def test_gram_two_points(gauss):
    e = math.exp(-1)
    np.testing.assert_allclose(gram(gauss, gauss.theta, [0.0, 1.0]), [[1, e], [e, 1]], atol=1e-15)


def test_gram_duplicates_rank_deficient(gauss):
    K = gram(gauss, gauss.theta, [0.4, 0.4])
    assert np.all(K == K[0, 0])
    assert np.linalg.matrix_rank(K) == 1


def test_gram_exactly_symmetric(rng):
    k = KernelSpec.parse("triangular+gaussian+laplace", [0.5, 2.0, 1.0, 0.7, 0.3, 1.2])
    K = gram(k, k.theta, rng.normal(size=(30, 3)))
    assert np.array_equal(K, K.T)


def test_cross_gram_diagonal_entry(gauss, rng):
    X = rng.normal(size=(5, 2))
    v = cross_gram(gauss, gauss.theta, X[3], X)
    assert v[3] == evaluate(gauss, gauss.theta, X[3], X[3])


def test_cross_gram_far_point(gauss):
    v = cross_gram(gauss, gauss.theta, [100.0], [[0.0], [1.0], [2.0]])
    assert np.all(v < 1e-10)


def test_cross_gram_empty(gauss):
    assert cross_gram(gauss, gauss.theta, [0.0], np.zeros((0, 1))).shape == (0,)


def test_gram_rows_match_cross_gram(rng):
    k = KernelSpec.parse("constant+gaussian", [0.5, 1.0, 0.8])
    X = rng.normal(size=(12, 2))
    K = gram(k, k.theta, X)
    for i in range(len(X)):
        np.testing.assert_allclose(K[i], cross_gram(k, k.theta, X[i], X), rtol=1e-14, atol=1e-15)


def test_squared_mode_ignores_amplitude_sign():
    k = KernelSpec.parse("gaussian+laplace", [0.7, 1.0, -0.4, 2.0], mode="squared")
    flipped = np.array([-0.7, 1.0, 0.4, 2.0])
    assert evaluate(k, k.theta, 0.1, 0.9) == evaluate(k, flipped, 0.1, 0.9)


def test_locally_periodic_power_flag():
    k2 = KernelSpec.parse("locally_periodic", [1.0, 1.0, 1.0, 1.0])
    k1 = KernelSpec.parse("locally_periodic", [1.0, 1.0, 1.0, 1.0], flags={0: {"power": 1}})
    r = 0.3
    assert evaluate(k2, k2.theta, 0.0, r) == pytest.approx(math.exp(-math.sin(math.pi * r**2) ** 2 - r**2))
    assert evaluate(k1, k1.theta, 0.0, r) == pytest.approx(math.exp(-math.sin(math.pi * r) ** 2 - r**2))


def test_scale_clamp_is_counted():
    diagnostics.reset()
    k = KernelSpec.parse("gaussian", [1.0, 0.0])
    assert evaluate(k, k.theta, 0.0, 0.0) == 1.0
    assert diagnostics.scale_clamps > 0


def test_json_round_trip():
    k = KernelSpec.parse("triangular+gaussian", [0.1, 1 / 3, 2.0, math.pi], mode="squared", flags={1: {"power": 1}})
    back = KernelSpec.from_json(k.to_json())
    assert back == k
    assert list(k.to_dict()) == ["mode", "primitives", "theta"]


def test_pd_family_check():
    assert KernelSpec.parse("gaussian+laplace", [1, 1, 1, 1]).is_pd_family()
    assert not KernelSpec.parse("gaussian", [-1, 1]).is_pd_family()
    assert not KernelSpec.parse("power_rational").is_pd_family()
