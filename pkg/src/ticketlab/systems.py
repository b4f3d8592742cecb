"""Hamiltonian systems solved by the networks.

Right-hand sides and energies are written with plain arithmetic so the same
function evaluates on floats, numpy arrays and tape nodes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


@dataclass(frozen=True)
class SystemSpec:
    name: str
    dim: int
    initial_state: tuple[float, ...]
    rhs: Callable[[Sequence], list]
    rhs_vjp: Callable[[Sequence, Sequence], list]
    hamiltonian: Callable[[Sequence], object]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if len(self.initial_state) != self.dim:
            raise ValueError(f"{self.name}: initial state must have {self.dim} entries")
        try:
            h = float(self.hamiltonian(self.initial_state))
        except OverflowError:
            h = math.inf
        if not np.isfinite(h):
            raise ValueError(f"{self.name}: initial energy is not finite")

    def residuals(self, state: Sequence, state_dot: Sequence) -> list:
        """Hamilton's-equation residuals ``state_dot - rhs(state)``."""
        return [sd - r for sd, r in zip(state_dot, self.rhs(state))]

    def with_initial_state(self, initial_state: Sequence[float]) -> "SystemSpec":
        return get_system(self.name, initial_state)


def energy(system: SystemSpec, state: Sequence[float]) -> float:
    if len(state) != system.dim:
        raise ValueError(f"state must have length {system.dim}")
    return float(system.hamiltonian(state))


# -- nonlinear (anharmonic) oscillator -------------------------------------

def _nlo_rhs(s):
    x, p = s
    return [p, -(x + x**3)]


def _nlo_vjp(s, g):
    # g^T J with J = [[0, 1], [-(1 + 3x^2), 0]]
    x, _ = s
    gx, gp = g
    return [-gp * (1 + 3 * x**2), gx]


def _nlo_energy(s):
    x, p = s
    return p**2 / 2 + x**2 / 2 + x**4 / 4


# -- Henon-Heiles --------------------------------------------------------------

def _hh_rhs(s):
    x, y, px, py = s
    return [px, py, -(x + 2 * x * y), -(y + x**2 - y**2)]


def _hh_vjp(s, g):
    x, y, _, _ = s
    g0, g1, g2, g3 = g
    return [
        -g2 * (1 + 2 * y) - g3 * (2 * x),
        -g2 * (2 * x) - g3 * (1 - 2 * y),
        g0,
        g1,
    ]


def _hh_energy(s):
    x, y, px, py = s
    return (px**2 + py**2) / 2 + (x**2 + y**2) / 2 + x**2 * y - y**3 / 3


# -- harmonic oscillator (test problem with a closed-form solution) -----------

def _lin_rhs(s):
    x, p = s
    return [p, -x]


def _lin_vjp(s, g):
    gx, gp = g
    return [-gp, gx]


def _lin_energy(s):
    x, p = s
    return p**2 / 2 + x**2 / 2


NLO_DEFAULT_IC = (1.3, 1.0)
HH_DEFAULT_IC = (0.3, -0.3, 0.3, 0.15)

_REGISTRY = {
    "NLO": (2, _nlo_rhs, _nlo_vjp, _nlo_energy, ("x", "p"), NLO_DEFAULT_IC),
    "HH": (4, _hh_rhs, _hh_vjp, _hh_energy, ("x", "y", "px", "py"), HH_DEFAULT_IC),
    "LIN": (2, _lin_rhs, _lin_vjp, _lin_energy, ("x", "p"), (1.0, 0.0)),
}


def get_system(name: str, initial_state: Sequence[float] | None = None) -> SystemSpec:
    """Look up a system by name (``NLO``, ``HH`` or ``LIN``)."""
    key = name.upper()
    if key not in _REGISTRY:
        raise KeyError(f"unknown system {name!r}; expected one of {sorted(_REGISTRY)}")
    dim, rhs, vjp, ham, labels, ic = _REGISTRY[key]
    state = tuple(float(v) for v in (ic if initial_state is None else initial_state))
    return SystemSpec(key, dim, state, rhs, vjp, ham, labels)


def nonlinear_oscillator(initial_state: Sequence[float] = NLO_DEFAULT_IC) -> SystemSpec:
    return get_system("NLO", initial_state)


def henon_heiles(initial_state: Sequence[float] = HH_DEFAULT_IC) -> SystemSpec:
    return get_system("HH", initial_state)


def linear_oscillator(initial_state: Sequence[float] = (1.0, 0.0)) -> SystemSpec:
    return get_system("LIN", initial_state)
