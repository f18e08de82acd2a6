import math

import numpy as np
import pytest

from kflow.dynamics import (
    MapSystem,
    TrajectoryRecord,
    lorenz_rhs,
    make_system,
    map_step,
    rk4_step,
    simulate,
)
from kflow.errors import DimensionMismatch


def test_bernoulli_step():
    assert map_step(make_system("bernoulli"), 0.25)[0] == 0.5


def test_logistic_step():
    assert map_step(make_system("logistic"), 0.5)[0] == 1.0


def test_henon_step():
    np.testing.assert_array_equal(map_step(make_system("henon"), [0.0, 0.0]), [1.0, 0.0])


def test_henon_scalar_step_matches_recurrence():
    s = make_system("henon_scalar")
    x, x_prev = 0.3, -0.2
    out = map_step(s, [x, x_prev])
    assert out[0] == pytest.approx(1 - 1.4 * x * x + 0.3 * x_prev)
    assert out[1] == x


def test_map_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        map_step(make_system("henon"), [0.1])


def test_lorenz_rhs_values():
    p = make_system("lorenz").params
    np.testing.assert_array_equal(lorenz_rhs(p, [0, 0, 0]), [0, 0, 0])
    np.testing.assert_allclose(lorenz_rhs(p, [1, 1, 1]), [0, 26, 1 - 10 / 3])
    assert lorenz_rhs({"s": 0.0, "r": 28.0, "b": 1.0}, [2.0, 2.0, 1.0])[0] == 0.0


def test_rk4_zero_and_constant_rhs():
    x = np.array([1.0, -2.0])
    np.testing.assert_array_equal(rk4_step(lambda s: np.zeros_like(s), x, 0.1), x)
    c = np.array([0.5, 0.25])
    np.testing.assert_array_equal(rk4_step(lambda s: c, x, 0.5), x + 0.5 * c)


def test_rk4_linear_decay():
    h = 0.01
    got = rk4_step(lambda s: -s, np.array([1.0]), h)[0]
    assert got == pytest.approx(1 - h + h**2 / 2 - h**3 / 6 + h**4 / 24, abs=1e-15)
    assert got == pytest.approx(0.99004983375, abs=1e-11)


def test_rk4_local_error_order():
    errs = [abs(rk4_step(lambda s: -s, np.array([1.0]), h)[0] - math.exp(-h)) for h in (0.2, 0.1)]
    assert 28 <= errs[0] / errs[1] <= 36


def test_simulate_bernoulli_pi_over_3():
    traj = simulate(make_system("bernoulli"), "pi/3", 200)
    assert len(traj) == 201
    assert np.all(np.isfinite(traj.states))
    assert np.all((traj.states >= 0) & (traj.states < 1))
    # the orbit keeps mixing instead of collapsing to 0 like a float iteration
    assert np.std(traj.states[-50:]) > 0.1


def test_simulate_zero_steps():
    traj = simulate(make_system("logistic"), 0.1, 0)
    np.testing.assert_array_equal(traj.states, [[0.1]])


def test_logistic_stays_in_unit_interval():
    traj = simulate(make_system("logistic"), 0.1, 2000)
    assert traj.states.min() >= 0 and traj.states.max() <= 1


def test_lorenz_bounded():
    traj = simulate(make_system("lorenz"), [0.0, 1.0, 1.05], 10_000)
    assert traj.states.shape == (10_001, 3)
    assert np.max(np.abs(traj.states)) < 100
    assert traj.dt == 0.01


def test_simulate_deterministic():
    a = simulate(make_system("henon"), [0.9, -0.9], 500)
    b = simulate(make_system("henon"), [0.9, -0.9], 500)
    assert np.array_equal(a.states, b.states)


def test_trajectory_csv_round_trip(tmp_path):
    traj = simulate(make_system("lorenz"), [0.0, 1.0, 1.05], 20)
    text = traj.to_csv(tmp_path / "t.csv")
    assert text.splitlines()[0] == "t,x0,x1,x2"
    back = TrajectoryRecord.from_csv(tmp_path / "t.csv")
    assert np.array_equal(back.states, traj.states)
    assert back.dt == traj.dt


def test_map_system_defaults():
    assert MapSystem("henon").params == {"a": 1.4, "b": 0.3}
    assert make_system("lorenz").params["b"] == pytest.approx(10 / 3)
