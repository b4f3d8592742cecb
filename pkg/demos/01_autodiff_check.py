#!/usr/bin/env python3
"""Where do the derivatives come from?

The residual loss needs dN/dt of the network output and then the gradient of
the loss with respect to every weight.  The tape records each scalar op with
its value and its time-tangent, so a single reverse sweep gives both.  Here
we compare that gradient with central differences on a small network.
"""
import numpy as np

from ticketlab.diffengine import finite_difference_gradient
from ticketlab.hnn import ArchSpec, ResidualKernel, TrainConfig, init_params, residual_loss
from ticketlab.systems import nonlinear_oscillator

arch = ArchSpec(hidden=(8, 8))
system = nonlinear_oscillator()
grid = TrainConfig(n_points=20).grid
params = init_params(arch, seed=1)

loss = residual_loss(params, None, system, grid)
tape_grad = loss.tape.reverse(loss)
print(f"loss {loss.value:.6e} from a tape of {len(loss.tape.nodes)} nodes")

# the vectorised kernel computes the same thing in numpy, used for training
kernel = ResidualKernel(arch, system, grid)
kloss, kgrad = kernel.loss_and_grad(params.theta)
print(f"kernel loss {kloss:.6e}, max |tape - kernel| grad {np.max(np.abs(tape_grad - kgrad)):.2e}")

idx = np.random.default_rng(0).choice(arch.n_params, 10, replace=False)
fd = finite_difference_gradient(kernel.loss, params.theta, step=1e-6, indices=idx)
rel = np.abs(fd - tape_grad[idx]) / np.maximum(np.abs(fd), 1e-12)
for i, a, b in zip(idx, tape_grad[idx], fd):
    print(f"  w[{i:3d}]  tape {a:+.8e}   fd {b:+.8e}")
print("max relative error", rel.max())
