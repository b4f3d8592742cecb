"""Iterative magnitude pruning with rewinding to the initial weights."""
from __future__ import annotations

import logging
import math
import struct
import time
import warnings
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .hnn import (ArchSpec, DivergenceError, NetworkParams, TrainConfig, init_params,
                  predict, train)
from .integrator import Trajectory, rk4_solve, trajectory_error
from .rgflow import layer_magnitude_fraction
from .systems import SystemSpec

log = logging.getLogger(__name__)

SCOPES = ("global", "single_layer", "all_layers")
ROUNDING = ("floor", "at_least_one")


class Mask:
    """Boolean keep-mask over the weights of an architecture, flat in theta order."""

    def __init__(self, arch: ArchSpec, bits=None):
        self.arch = arch
        if bits is None:
            bits = np.ones(arch.n_weights, dtype=bool)
        bits = np.asarray(bits)
        if bits.dtype != bool:
            if not np.isin(bits, (0, 1)).all():
                raise ValueError("mask entries must be 0 or 1")
            bits = bits.astype(bool)
        bits = bits.reshape(-1).copy()
        if bits.size != arch.n_weights:
            raise ValueError(f"mask has {bits.size} entries, architecture has {arch.n_weights} weights")
        self.bits = bits

    @classmethod
    def ones(cls, arch: ArchSpec) -> "Mask":
        return cls(arch)

    @classmethod
    def from_layers(cls, arch: ArchSpec, layers: Sequence[np.ndarray]) -> "Mask":
        return cls(arch, np.concatenate([np.asarray(m).reshape(-1) for m in layers]))

    @property
    def layers(self) -> list[np.ndarray]:
        return [self.bits[s].reshape(shape) for s, shape in zip(self.arch.weight_slices(), self.arch.layer_shapes)]

    def layer_counts(self) -> np.ndarray:
        return np.array([int(self.bits[s].sum()) for s in self.arch.weight_slices()])

    def layer_density(self) -> np.ndarray:
        return self.layer_counts() / np.array(self.arch.layer_sizes)

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @property
    def density(self) -> float:
        return self.count / self.bits.size

    def copy(self) -> "Mask":
        return Mask(self.arch, self.bits)

    def __eq__(self, other):
        return isinstance(other, Mask) and self.arch == other.arch and np.array_equal(self.bits, other.bits)

    def __le__(self, other: "Mask") -> bool:
        return bool(np.all(self.bits <= other.bits))

    def __repr__(self):
        return f"Mask(density={self.density:.4f}, layers={self.layer_counts().tolist()})"


@dataclass(frozen=True)
class PruneSchedule:
    """How much to remove per iteration, from where, and when to stop.

    ``layer`` is 1-indexed and only used with ``scope="single_layer"``.  The
    floor defaults to 5% for global pruning and 10% otherwise.
    """
    scope: str = "global"
    rate: float = 0.05
    layer: int | None = None
    floor: float | None = None
    max_iterations: int = 200
    rounding: str = "floor"

    def __post_init__(self):
        if self.scope not in SCOPES:
            raise ValueError(f"scope must be one of {SCOPES}")
        if not 0 < self.rate < 1:
            raise ValueError("rate must lie in (0, 1)")
        if self.floor is None:
            object.__setattr__(self, "floor", 0.05 if self.scope == "global" else 0.10)
        if not 0 < self.floor < 1:
            raise ValueError("floor must lie in (0, 1)")
        if self.scope == "single_layer" and (self.layer is None or self.layer < 1):
            raise ValueError("single_layer scope needs a 1-indexed layer")
        if self.rounding not in ROUNDING:
            raise ValueError(f"rounding must be one of {ROUNDING}")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be >= 0")


@dataclass(frozen=True)
class PruneStep:
    mask: Mask
    removed: int
    floor_bound: bool
    empty_scope: bool


def _n_remove(rate: float, count: int, rounding: str) -> int:
    k = math.floor(rate * count)
    if rounding == "at_least_one" and count > 0:
        k = max(k, 1)
    return k


def prune_step(weights: np.ndarray, mask: Mask, schedule: PruneSchedule) -> PruneStep:
    """One pruning step; reports whether a density floor limited it."""
    arch = mask.arch
    w = np.abs(np.asarray(weights, dtype=float).reshape(-1)[: arch.n_weights])
    sizes = np.array(arch.layer_sizes)
    slices = arch.weight_slices()
    counts = mask.layer_counts()
    floor_counts = np.ceil(schedule.floor * sizes - 1e-9).astype(int)
    exempt = counts <= floor_counts

    if schedule.scope == "single_layer":
        if schedule.layer > arch.n_layers:
            raise ValueError(f"layer {schedule.layer} out of range for {arch.n_layers} layers")
        groups = [[schedule.layer - 1]]
    elif schedule.scope == "all_layers":
        groups = [[i] for i in range(arch.n_layers)]
    else:
        groups = [list(range(arch.n_layers))]

    bits = mask.bits.copy()
    layer_of = np.repeat(np.arange(arch.n_layers), sizes)
    removed = 0
    bound = bool(any(exempt[i] for g in groups for i in g))
    any_scope = False
    for group in groups:
        live = [i for i in group if not exempt[i]]
        if not live:
            continue
        any_scope = True
        k = _n_remove(schedule.rate, int(counts[group].sum()), schedule.rounding)
        if k == 0:
            continue
        idx = np.concatenate([np.flatnonzero(bits[slices[i]]) + slices[i].start for i in live])
        # stable sort: equal magnitudes fall back to canonical (layer, row, col) order
        order = idx[np.argsort(w[idx], kind="stable")]
        left = counts.copy()
        taken = 0
        for j in order:
            li = layer_of[j]
            if left[li] <= floor_counts[li]:
                bound = True
                continue
            bits[j] = False
            left[li] -= 1
            taken += 1
            if taken == k:
                break
        if taken < k:
            bound = True
        removed += taken
    return PruneStep(Mask(arch, bits), removed, bound, not any_scope)


def magnitude_prune(params: NetworkParams | np.ndarray, mask: Mask, rate: float, scope: str = "global",
                    floors: float | None = None, layer: int | None = None, rounding: str = "floor") -> Mask:
    """Return a new mask with the smallest-|w| surviving weights in scope removed.

    ``floor(rate * count)`` weights go per step, ``count`` being the survivors
    in scope.  Layers at or below the floor density are exempt, and no layer
    is pruned below it.  The input mask is not modified.
    """
    weights = params.theta if isinstance(params, NetworkParams) else params
    schedule = PruneSchedule(scope=scope, rate=rate, layer=layer, floor=floors, rounding=rounding)
    step = prune_step(weights, mask, schedule)
    if step.empty_scope:
        warnings.warn("nothing left to prune in scope; mask unchanged", RuntimeWarning, stacklevel=2)
    return step.mask


def rewind(params: NetworkParams) -> NetworkParams:
    """Every weight and bias back to its initial value.

    Optimizer state is not carried by :class:`NetworkParams`; each call to
    :func:`ticketlab.hnn.train` starts Adam from zero moments.
    """
    return NetworkParams(params.arch, params.init.copy(), params.seed, params.init)


@dataclass
class Ticket:
    """Mask plus the initial parameters it was found for."""
    mask: Mask
    init: np.ndarray
    arch: ArchSpec
    seed: int | None = None

    def __post_init__(self):
        self.init = np.array(self.init, dtype=np.float64).reshape(-1)
        if self.init.size != self.arch.n_params:
            raise ValueError("initialisation does not conform to the architecture")
        if self.mask.arch != self.arch:
            raise ValueError("mask architecture differs from ticket architecture")

    def to_params(self) -> NetworkParams:
        return NetworkParams(self.arch, self.init.copy(), self.seed)

    def __eq__(self, other):
        return (isinstance(other, Ticket) and self.arch == other.arch and self.mask == other.mask
                and np.array_equal(self.init, other.init) and self.seed == other.seed)


@dataclass
class IterationRecord:
    iteration: int
    density: float
    layer_density: np.ndarray
    n_unmasked: int
    error: float
    loss: float
    magnitude_fraction: np.ndarray
    mask: Mask
    theta: np.ndarray | None = None
    floor_bound: bool = False      # the prune step leaving this iteration hit a floor
    diverged: bool = False


@dataclass
class PruneTrace:
    system: str
    arch: ArchSpec
    schedule: PruneSchedule
    seed: int | None
    init: np.ndarray
    records: list[IterationRecord] = field(default_factory=list)
    diverged_at: int | None = None
    wall_clock: float = field(default=0.0, compare=False)   # seconds spent in imp_run

    def tickets(self) -> list[Ticket]:
        return [Ticket(r.mask.copy(), self.init, self.arch, self.seed) for r in self.records if not r.diverged]

    @property
    def densities(self) -> np.ndarray:
        return np.array([r.density for r in self.records if not r.diverged])

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.error for r in self.records if not r.diverged])

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records if not r.diverged])

    def layer_densities(self, layer: int) -> np.ndarray:
        """Density of 1-indexed ``layer`` per iteration."""
        return np.array([r.layer_density[layer - 1] for r in self.records if not r.diverged])


def imp_run(system: SystemSpec, arch: ArchSpec, schedule: PruneSchedule, config: TrainConfig,
            seed: int | None = None, reference: Trajectory | None = None, init: NetworkParams | None = None,
            mask: Mask | None = None, on_record: Callable[[IterationRecord], None] | None = None) -> PruneTrace:
    """Train, measure, prune, rewind; repeat until the schedule is exhausted.

    Magnitudes are taken from the trained weights of each iteration.  Stops
    after ``schedule.max_iterations`` prunes or when a step removes nothing.
    A diverged training run ends the trace with a marker record.
    """
    start = time.perf_counter()
    params = init if init is not None else init_params(arch, config.seed if seed is None else seed)
    if params.arch != arch:
        raise ValueError("initial parameters do not match the architecture")
    grid = config.grid
    ref = reference if reference is not None else rk4_solve(system, grid)
    mask = Mask.ones(arch) if mask is None else mask.copy()
    trace = PruneTrace(system.name, arch, schedule, params.seed, params.init.copy())
    current = rewind(params)
    for n in range(schedule.max_iterations + 1):
        try:
            result = train(current, mask, system, config)
        except DivergenceError as exc:
            log.warning("iteration %d diverged at epoch %d", n, exc.epoch)
            trace.records.append(IterationRecord(
                n, mask.density, mask.layer_density(), mask.count, math.nan, math.nan,
                np.full(arch.n_layers, math.nan), mask.copy(), None, False, True))
            trace.diverged_at = n
            break
        trained = result.params
        eps = trajectory_error(predict(trained, mask, system, grid, config.ic_mode), ref)
        rec = IterationRecord(
            n, mask.density, mask.layer_density(), mask.count, eps, result.final_loss,
            layer_magnitude_fraction(trained, mask), mask.copy(), trained.theta.copy())
        trace.records.append(rec)
        log.info("iter %d density %.4f error %.3e loss %.3e", n, rec.density, eps, rec.loss)
        if n == schedule.max_iterations:
            if on_record:
                on_record(rec)
            break
        step = prune_step(trained.theta, mask, schedule)
        rec.floor_bound = step.floor_bound
        if on_record:
            on_record(rec)
        if step.removed == 0:
            break
        mask = step.mask
        current = rewind(trained)
    trace.wall_clock = time.perf_counter() - start
    return trace


# -- ticket container ----------------------------------------------------------

MAGIC = b"HNNTKT\x00\x01"
FORMAT_VERSION = 1


def ticket_to_bytes(ticket: Ticket) -> bytes:
    """Serialise a ticket; layout documented in docs/formats.md."""
    arch = ticket.arch
    sizes = arch.sizes
    seed = -1 if ticket.seed is None else int(ticket.seed)
    parts = [MAGIC, struct.pack("<HH", FORMAT_VERSION, len(sizes)), struct.pack(f"<{len(sizes)}I", *sizes),
             struct.pack("<q", seed)]
    for layer in ticket.mask.layers:
        parts.append(np.packbits(layer.reshape(-1).astype(np.uint8), bitorder="big").tobytes())
    parts.append(np.asarray(ticket.init, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


class TicketFormatError(ValueError):
    pass


def ticket_from_bytes(data: bytes) -> Ticket:
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise TicketFormatError("not a ticket container")
    body, crc = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) & 0xFFFFFFFF != crc:
        raise TicketFormatError("checksum mismatch")
    off = len(MAGIC)
    version, n_sizes = struct.unpack_from("<HH", body, off)
    off += 4
    if version != FORMAT_VERSION:
        raise TicketFormatError(f"unsupported ticket version {version}")
    sizes = struct.unpack_from(f"<{n_sizes}I", body, off)
    off += 4 * n_sizes
    (seed,) = struct.unpack_from("<q", body, off)
    off += 8
    arch = ArchSpec(hidden=tuple(sizes[1:-1]), output_dim=sizes[-1], input_dim=sizes[0])
    layers = []
    for rows, cols in arch.layer_shapes:
        nbytes = (rows * cols + 7) // 8
        raw = np.frombuffer(body, dtype=np.uint8, count=nbytes, offset=off)
        layers.append(np.unpackbits(raw, bitorder="big")[: rows * cols].astype(bool))
        off += nbytes
    init = np.frombuffer(body, dtype="<f8", count=arch.n_params, offset=off).astype(np.float64)
    off += 8 * arch.n_params
    if off != len(body):
        raise TicketFormatError("trailing bytes in ticket container")
    return Ticket(Mask.from_layers(arch, layers), init, arch, None if seed == -1 else seed)


def save_ticket(ticket: Ticket, path) -> Path:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(ticket_to_bytes(ticket))
    tmp.replace(path)
    return path


def load_ticket(path) -> Ticket:
    return ticket_from_bytes(Path(path).read_bytes())
