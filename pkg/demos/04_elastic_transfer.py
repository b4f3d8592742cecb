#!/usr/bin/env python3
"""Moving a ticket between systems of different dimension.

The NLO network ends in 2 outputs, the Henon-Heiles one in 4.  Stretching
copies the output columns, (a, b) -> (a, b, a, b); squeezing out blocks 3
and 4 drops the copies again.
Hidden layers are untouched, so only the last mask changes shape.
"""
import numpy as np

from ticketlab.elastic import squeeze_ticket, stretch_ticket
from ticketlab.hnn import ArchSpec, init_params
from ticketlab.pruner import Mask, Ticket

arch = ArchSpec(hidden=(6, 6), output_dim=2)
rng = np.random.default_rng(3)
mask = Mask(arch, rng.random(arch.n_weights) < 0.6)
ticket = Ticket(mask, init_params(arch, 3).theta, arch, 3)

big = stretch_ticket(ticket, 4)
print("source layer 3 mask\n", mask.layers[-1].astype(int))
print("stretched layer 3 mask\n", big.mask.layers[-1].astype(int))
print("layer 3 density", mask.layer_density()[-1], "->", big.mask.layer_density()[-1])

back = squeeze_ticket(big, 2, drop=(3, 4))
print("round trip exact:", back == ticket)
