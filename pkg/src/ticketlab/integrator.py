"""Classical RK4 reference trajectories and the error metrics built on them."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .systems import SystemSpec


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    states: np.ndarray
    system: str

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.asarray(self.states, dtype=float)
        if times.ndim != 1 or states.ndim != 2 or states.shape[0] != times.size:
            raise ValueError("states must be (len(times), D)")
        if times.size > 1 and np.any(np.diff(times) <= 0):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)


def rk4_solve(system: SystemSpec, grid: Sequence[float], substeps: int = 100,
              initial_state: Sequence[float] | None = None) -> Trajectory:
    """Integrate from ``grid[0]`` with ``substeps`` RK4 steps per grid interval."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    times = np.asarray(grid, dtype=float)
    f = system.rhs
    y = np.array(system.initial_state if initial_state is None else initial_state, dtype=float)
    out = np.empty((times.size, y.size))
    out[0] = y
    for n in range(times.size - 1):
        h = (times[n + 1] - times[n]) / substeps
        for _ in range(substeps):
            k1 = np.array(f(y))
            k2 = np.array(f(y + 0.5 * h * k1))
            k3 = np.array(f(y + 0.5 * h * k2))
            k4 = np.array(f(y + h * k3))
            y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"{system.name}: state became non-finite near t={times[n + 1]:g}")
        out[n + 1] = y
    return Trajectory(times, out, system.name)


def trajectory_error(nn_states, ref: Trajectory | np.ndarray, times: Sequence[float] | None = None) -> float:
    """Mean over the grid of the Euclidean distance between two state sequences.

    ``nn_states`` may be a :class:`Trajectory` or a ``(K, D)`` array.  When both
    sides are trajectories their time grids must agree.
    """
    if isinstance(nn_states, Trajectory) and isinstance(ref, Trajectory):
        if nn_states.times.shape != ref.times.shape or not np.array_equal(nn_states.times, ref.times):
            raise ValueError("trajectories are sampled on different grids")
    a = nn_states.states if isinstance(nn_states, Trajectory) else np.asarray(nn_states, dtype=float)
    b = ref.states if isinstance(ref, Trajectory) else np.asarray(ref, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"grid mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.linalg.norm(a - b, axis=1)))


def energy_drift(traj: Trajectory, system: SystemSpec) -> float:
    """``max_n |H(state_n) - H(state_0)|``."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    H = np.asarray(system.hamiltonian(list(traj.states.T)), dtype=float)
    return float(np.max(np.abs(H - H[0])))
