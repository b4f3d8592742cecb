#!/usr/bin/env python3
"""Train the dense network on the nonlinear oscillator and compare with RK4.

A shorter run than the default (5000 epochs) so it finishes in seconds;
set EPOCHS = 20000 for the desk configuration.
"""
import numpy as np

from ticketlab.hnn import ArchSpec, TrainConfig, init_params, predict, train
from ticketlab.integrator import Trajectory, energy_drift, rk4_solve, trajectory_error
from ticketlab.systems import nonlinear_oscillator

EPOCHS = 5000

system = nonlinear_oscillator()
cfg = TrainConfig(epochs=EPOCHS)
params = init_params(ArchSpec(), seed=0)

result = train(params, None, system, cfg)
h = result.history
for e in (0, EPOCHS // 10, EPOCHS // 2, EPOCHS - 1):
    print(f"epoch {e:6d}  loss {h[e]:.3e}")

ref = rk4_solve(system, cfg.grid, substeps=100)
nn = Trajectory(cfg.grid, predict(result.params, None, system, cfg.grid), system.name)
print(f"trajectory error {trajectory_error(nn, ref):.3e}")
print(f"energy drift: network {energy_drift(nn, system):.3e}, RK4 {energy_drift(ref, system):.3e}")

# a few states side by side
for k in np.linspace(0, len(cfg.grid) - 1, 5).astype(int):
    print(f"t={cfg.grid[k]:6.3f}  nn {nn.states[k].round(4)}  rk4 {ref.states[k].round(4)}")
