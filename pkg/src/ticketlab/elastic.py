"""Moving tickets between networks that differ in output width.

Output blocks are whole columns of the last weight layer (plus the matching
output bias), one per state coordinate.  Stretching tiles the source columns
to fill a wider output; squeezing drops chosen columns.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .hnn import ArchSpec, DivergenceError, TrainConfig, init_params, predict, train
from .integrator import rk4_solve, trajectory_error
from .pruner import Mask, Ticket
from .systems import SystemSpec


class ShapeError(ValueError):
    pass


@dataclass(frozen=True)
class BlockMap:
    """Output-column selection taking ``source`` to ``target``.

    ``columns[k]`` is the source output column that feeds target column ``k``;
    every other layer is copied unchanged.
    """
    source: ArchSpec
    target: ArchSpec
    columns: tuple[int, ...]

    def __post_init__(self):
        if self.source.hidden != self.target.hidden:
            raise ShapeError(f"hidden widths differ: {self.source.hidden} vs {self.target.hidden}")
        if len(self.columns) != self.target.output_dim:
            raise ShapeError("one source column is needed per target output")
        if any(not 0 <= c < self.source.output_dim for c in self.columns):
            raise ShapeError("column index out of range")

    def _last_layer(self, flat_weights: np.ndarray, arch: ArchSpec) -> tuple[np.ndarray, np.ndarray]:
        s = arch.weight_slices()[-1]
        return flat_weights[: s.start], flat_weights[s].reshape(arch.layer_shapes[-1])

    def apply_mask(self, mask: Mask) -> Mask:
        if mask.arch != self.source:
            raise ShapeError("mask does not conform to the source architecture")
        head, last = self._last_layer(mask.bits, self.source)
        return Mask(self.target, np.concatenate([head, last[:, list(self.columns)].reshape(-1)]))

    def apply_params(self, theta: np.ndarray) -> np.ndarray:
        src = self.source
        theta = np.asarray(theta, dtype=np.float64)
        head, last = self._last_layer(theta[: src.n_weights], src)
        biases = theta[src.n_weights:]
        out_bias = biases[-src.output_dim:]
        cols = list(self.columns)
        return np.concatenate([head, last[:, cols].reshape(-1), biases[: -src.output_dim], out_bias[cols]])

    def apply(self, ticket: Ticket) -> Ticket:
        return Ticket(self.apply_mask(ticket.mask), self.apply_params(ticket.init), self.target, ticket.seed)


def _target_arch(ticket: Ticket, target) -> ArchSpec:
    if isinstance(target, ArchSpec):
        return target
    return ArchSpec(ticket.arch.hidden, int(target))


def stretch_ticket(ticket: Ticket, target: ArchSpec | int) -> Ticket:
    """Widen the output by repeating the source output columns: (a, b) -> (a, b, a, b)."""
    target = _target_arch(ticket, target)
    n_src, n_tgt = ticket.arch.output_dim, target.output_dim
    if ticket.arch.hidden != target.hidden:
        raise ShapeError(f"hidden widths differ: {ticket.arch.hidden} vs {target.hidden}")
    if n_tgt < n_src or n_tgt % n_src:
        raise ShapeError(f"cannot stretch {n_src} outputs to {n_tgt}")
    return BlockMap(ticket.arch, target, tuple(k % n_src for k in range(n_tgt))).apply(ticket)


def squeeze_ticket(ticket: Ticket, target: ArchSpec | int, drop: Sequence[int] = (2, 4)) -> Ticket:
    """Narrow the output by removing the 1-indexed output blocks in ``drop``."""
    target = _target_arch(ticket, target)
    n_src = ticket.arch.output_dim
    drop = sorted(set(int(k) for k in drop))
    if any(not 1 <= k <= n_src for k in drop):
        raise ShapeError(f"drop indices {drop} out of range 1..{n_src}")
    keep = tuple(k for k in range(n_src) if k + 1 not in drop)
    if len(keep) != target.output_dim:
        raise ShapeError(f"dropping {drop} leaves {len(keep)} outputs, target needs {target.output_dim}")
    return BlockMap(ticket.arch, target, keep).apply(ticket)


def convert_ticket(ticket: Ticket, target: ArchSpec, drop: Sequence[int] = (2, 4)) -> Ticket:
    n_src, n_tgt = ticket.arch.output_dim, target.output_dim
    if n_tgt > n_src:
        return stretch_ticket(ticket, target)
    if n_tgt < n_src:
        return squeeze_ticket(ticket, target, drop)
    return squeeze_ticket(ticket, target, ())


@dataclass(frozen=True)
class TransferPoint:
    source_density: float
    target_t_max: float
    epsilon: float
    final_loss: float
    direction: str
    diverged: bool = False
    wall_clock: float = field(default=0.0, compare=False)


def transfer_evaluate(tickets: Sequence[Ticket], system: SystemSpec, config: TrainConfig,
                      t_max_sweep: Sequence[float] = (2 * math.pi, 4 * math.pi, 6 * math.pi, 8 * math.pi),
                      direction: str = "", fresh_init_seed: int | None = None,
                      drop: Sequence[int] = (2, 4), substeps: int = 100) -> list[TransferPoint]:
    """Train ``system`` under each transferred ticket for each integration horizon.

    The ticket's own (converted) initialisation is used unless
    ``fresh_init_seed`` is given, in which case a fresh target initialisation
    is drawn once and shared by every ticket.
    """
    if not tickets:
        return []
    target = ArchSpec(tickets[0].arch.hidden, system.dim)
    fresh = None if fresh_init_seed is None else init_params(target, fresh_init_seed)
    refs = {}
    out = []
    for t_max in t_max_sweep:
        cfg = TrainConfig(config.epochs, config.learning_rate, config.n_points, float(t_max),
                          config.betas, config.adam_eps, config.seed)
        if t_max not in refs:
            refs[t_max] = rk4_solve(system, cfg.grid, substeps)
        for ticket in tickets:
            moved = convert_ticket(ticket, target, drop)
            params = moved.to_params() if fresh is None else fresh.copy()
            start = time.perf_counter()
            try:
                res = train(params, moved.mask, system, cfg)
            except DivergenceError:
                out.append(TransferPoint(ticket.mask.density, float(t_max), math.nan, math.nan, direction, True,
                                         time.perf_counter() - start))
                continue
            eps = trajectory_error(predict(res.params, moved.mask, system, cfg.grid, cfg.ic_mode), refs[t_max])
            out.append(TransferPoint(ticket.mask.density, float(t_max), eps, res.final_loss, direction, False,
                                     time.perf_counter() - start))
    return out
