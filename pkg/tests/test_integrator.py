import math

import numpy as np
import pytest

from ticketlab.integrator import Trajectory, energy_drift, rk4_solve, trajectory_error
from ticketlab.systems import get_system, henon_heiles, linear_oscillator, nonlinear_oscillator


def cosine_error(substeps, n=41):
    grid = np.linspace(0, 4 * math.pi, n)
    traj = rk4_solve(linear_oscillator(), grid, substeps)
    exact = np.stack([np.cos(grid), -np.sin(grid)], axis=1)
    return np.max(np.abs(traj.states - exact))


def test_linear_oscillator_matches_cosine():
    grid = np.linspace(0, 2 * math.pi, 2)
    traj = rk4_solve(linear_oscillator(), grid, 100)
    assert abs(traj.states[-1, 0] - 1.0) < 1e-6
    assert cosine_error(100) < 1e-6


def test_fourth_order_convergence():
    order = math.log2(cosine_error(10) / cosine_error(20))
    assert 3.8 <= order <= 4.2


def test_fixed_point_stays_put():
    traj = rk4_solve(get_system("NLO", (0.0, 0.0)), np.linspace(0, 10, 11))
    assert np.all(traj.states == 0.0)


def test_energy_drift_small_for_fine_rk4():
    system = nonlinear_oscillator()
    traj = rk4_solve(system, np.linspace(0, 4 * math.pi, 200), 100)
    assert energy_drift(traj, system) < 1e-8


def test_hh_bounded():
    system = henon_heiles()
    traj = rk4_solve(system, np.linspace(0, 8 * math.pi, 400))
    assert np.max(np.abs(traj.states)) < 1.0
    assert energy_drift(traj, system) < 1e-8


def test_energy_drift_examples():
    system = get_system("NLO", (0.0, 0.0))
    flat = Trajectory(np.arange(5.0), np.zeros((5, 2)), "NLO")
    assert energy_drift(flat, system) == 0.0
    states = np.zeros((5, 2))
    states[3] = (1.0, 0.0)
    assert energy_drift(Trajectory(np.arange(5.0), states, "NLO"), system) == 0.75


def test_trajectory_error_examples():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(30, 2))
    assert trajectory_error(a, a) == 0.0
    b = a.copy()
    b[:, 1] += 0.25
    assert trajectory_error(b, a) == pytest.approx(0.25, abs=1e-15)
    with pytest.raises(ValueError):
        trajectory_error(a[:5], a)


def test_trajectory_error_is_a_metric():
    rng = np.random.default_rng(1)
    for _ in range(50):
        a, b, c = rng.normal(size=(3, 20, 4))
        assert trajectory_error(a, b) == trajectory_error(b, a)
        assert trajectory_error(a, c) <= trajectory_error(a, b) + trajectory_error(b, c) + 1e-12
        assert trajectory_error(a, b) > 0


def test_trajectory_validation():
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 0.0]), np.zeros((2, 2)), "NLO")
    with pytest.raises(ValueError):
        Trajectory(np.array([0.0, 1.0]), np.zeros((3, 2)), "NLO")
    with pytest.raises(ValueError):
        rk4_solve(nonlinear_oscillator(), [0.0, 1.0], substeps=0)
