#!/usr/bin/env python3
"""A small IMP run: train, prune 20% of the survivors, rewind, repeat.

Then split the error curve into plateau / power law / tail and fit the
exponent.  Epochs and collocation points are cut down so this runs in a few
minutes; the numbers are illustrative only.
"""
from ticketlab.hnn import ArchSpec, TrainConfig
from ticketlab.pruner import PruneSchedule, imp_run
from ticketlab.rgflow import flow_from_trace
from ticketlab.scaling import InsufficientDataError, fit_pruning_curve
from ticketlab.systems import nonlinear_oscillator

arch = ArchSpec()
cfg = TrainConfig(epochs=4000, n_points=100)
schedule = PruneSchedule(scope="global", rate=0.3, max_iterations=9)

trace = imp_run(nonlinear_oscillator(), arch, schedule, cfg, seed=0,
                on_record=lambda r: print(f"iter {r.iteration:2d}  d={r.density:.3f}  eps={r.error:.3e}"))

try:
    seg, fit = fit_pruning_curve(trace.densities, trace.errors)
    for name in ("low", "power", "high"):
        print(f"{name:>5} regime: d in {seg.interval(name)}")
    # a handful of noisy points; expect a poor R2 at this budget
    print(f"gamma {fit.gamma:.2f}  R2 {fit.r2:.2f}  on {fit.n_points} points")
except InsufficientDataError as exc:
    print("no power-law window:", exc)

flow = flow_from_trace(trace)
print("sigma per layer:", flow.sigma.sigma.round(3))
