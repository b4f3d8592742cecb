"""Hamiltonian network solvers: architecture, ansatz, residual loss, training.

Two evaluation paths share one parameter layout:

* the scalar tape (:mod:`ticketlab.diffengine`) via :func:`forward` and
  :func:`residual_loss`, used as an independent reference, and
* a vectorised numpy kernel (:class:`ResidualKernel`) that evaluates the
  value/tangent pair of the network on the whole collocation grid at once
  and back-propagates both channels by hand.  Training uses the kernel.

Parameters live in one flat vector ``theta``: every layer's weight matrix
(row-major, shape ``fan_in x fan_out``) in layer order, then every bias
vector.  Masks cover the weight prefix only; biases are never pruned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import diffengine as de
from .systems import SystemSpec


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, loss: float):
        super().__init__(f"non-finite loss {loss!r} at epoch {epoch}")
        self.epoch = epoch
        self.loss = loss


@dataclass(frozen=True)
class ArchSpec:
    hidden: tuple[int, ...] = (50, 50)
    output_dim: int = 2
    input_dim: int = 1

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.input_dim != 1:
            raise ValueError("networks take a single (time) input")
        if (self.hidden and min(self.hidden) < 1) or self.output_dim < 1:
            raise ValueError(f"invalid architecture {self}")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.output_dim)

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        s = self.sizes
        return list(zip(s[:-1], s[1:]))

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    @property
    def layer_sizes(self) -> list[int]:
        return [a * b for a, b in self.layer_shapes]

    @property
    def n_weights(self) -> int:
        return sum(self.layer_sizes)

    @property
    def n_biases(self) -> int:
        return sum(self.sizes[1:])

    @property
    def n_params(self) -> int:
        return self.n_weights + self.n_biases

    def weight_slices(self) -> list[slice]:
        out, start = [], 0
        for n in self.layer_sizes:
            out.append(slice(start, start + n))
            start += n
        return out

    def bias_slices(self) -> list[slice]:
        out, start = [], self.n_weights
        for n in self.sizes[1:]:
            out.append(slice(start, start + n))
            start += n
        return out

    def to_dict(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": list(self.hidden), "output_dim": self.output_dim}


class NetworkParams:
    """Flat parameter vector plus a read-only snapshot of its initial values."""

    def __init__(self, arch: ArchSpec, theta: np.ndarray, seed: int | None = None, init: np.ndarray | None = None):
        theta = np.array(theta, dtype=np.float64)
        if theta.shape != (arch.n_params,):
            raise ValueError(f"expected {arch.n_params} parameters, got shape {theta.shape}")
        self.arch = arch
        self.seed = seed
        self.theta = theta
        frozen = theta.copy() if init is None else np.array(init, dtype=np.float64)
        if frozen.shape != theta.shape:
            raise ValueError("initial snapshot does not conform to the architecture")
        frozen.flags.writeable = False
        self.init = frozen

    @property
    def weights(self) -> list[np.ndarray]:
        return [self.theta[s].reshape(shape) for s, shape in zip(self.arch.weight_slices(), self.arch.layer_shapes)]

    @property
    def biases(self) -> list[np.ndarray]:
        return [self.theta[s] for s in self.arch.bias_slices()]

    @property
    def weight_vector(self) -> np.ndarray:
        return self.theta[: self.arch.n_weights]

    def copy(self) -> "NetworkParams":
        return NetworkParams(self.arch, self.theta.copy(), self.seed, self.init)

    def __repr__(self):
        return f"NetworkParams(arch={self.arch}, seed={self.seed})"


def init_params(arch: ArchSpec, seed: int) -> NetworkParams:
    """Weights ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, zero biases."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(arch.n_params)
    for s, (fan_in, fan_out) in zip(arch.weight_slices(), arch.layer_shapes):
        bound = 1.0 / math.sqrt(fan_in)
        theta[s] = rng.uniform(-bound, bound, size=fan_in * fan_out)
    return NetworkParams(arch, theta, seed)


def mask_vector(mask, arch: ArchSpec) -> np.ndarray:
    """Float 0/1 vector over the weights for ``mask`` (``None`` = keep all)."""
    if mask is None:
        return np.ones(arch.n_weights)
    bits = getattr(mask, "bits", mask)
    vec = np.asarray(bits, dtype=np.float64).reshape(-1)
    if vec.shape != (arch.n_weights,):
        raise ValueError(f"mask has {vec.size} entries, network has {arch.n_weights} weights")
    return vec


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20_000
    learning_rate: float = 8e-3
    n_points: int = 200
    t_max: float = 4 * math.pi
    betas: tuple[float, float] = (0.995, 0.9999)
    adam_eps: float = 1e-8
    seed: int = 0
    ic_mode: str = "ansatz"      # or "penalty": raw outputs plus ic_weight * |N(0) - x0|^2
    ic_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.n_points < 2:
            raise ValueError("need at least 2 collocation points")
        if self.t_max <= 0 or self.learning_rate <= 0 or self.epochs < 0:
            raise ValueError(f"invalid training config {self}")
        if not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError("Adam betas must lie in [0, 1)")
        _check_ic(self.ic_mode, self.ic_weight)

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, self.t_max, self.n_points)


# -- scalar tape path ----------------------------------------------------------

def _bound_network(tape: de.Tape, params: NetworkParams, mask):
    """Register ``params`` on ``tape`` once; return masked weight and bias nodes."""
    bindings = tape.bindings
    key = (id(params), id(mask))
    if key in bindings:
        return bindings[key]
    arch = params.arch
    m = mask_vector(mask, arch)
    lifted = [tape.lift_param(v) for v in params.theta]
    weights = []
    for s, (fan_in, fan_out) in zip(arch.weight_slices(), arch.layer_shapes):
        flat = [lifted[k] * m[k] for k in range(s.start, s.stop)]
        weights.append([flat[r * fan_out:(r + 1) * fan_out] for r in range(fan_in)])
    biases = [lifted[s] for s in arch.bias_slices()]
    bindings[key] = (weights, biases)
    return weights, biases


def forward(params: NetworkParams, mask, t: de.Node) -> list[de.Node]:
    """Network outputs at time node ``t``; sin on hidden layers, linear output."""
    weights, biases = _bound_network(t.tape, params, mask)
    act = [t]
    last = len(weights) - 1
    for layer, (W, b) in enumerate(zip(weights, biases)):
        out = []
        for j in range(len(b)):
            z = b[j]
            for i, a in enumerate(act):
                z = de.add(z, de.mul(a, W[i][j]))
            out.append(de.sin(z) if layer < last else z)
        act = out
    return act


IC_MODES = ("ansatz", "penalty")


def _check_ic(ic_mode: str, ic_weight: float) -> None:
    if ic_mode not in IC_MODES:
        raise ValueError(f"ic_mode must be one of {IC_MODES}")
    if not ic_weight > 0:
        raise ValueError("ic_weight must be positive")


def apply_ansatz(raw_outputs: Sequence, t, initial_state: Sequence[float]) -> list:
    """``x0 + (1 - exp(-t)) * N(t)``, so the estimate equals ``x0`` at ``t = 0``."""
    if isinstance(t, de.Node):
        ramp = 1.0 - de.exp(-t)
    else:
        ramp = -np.expm1(-np.asarray(t, dtype=float))
    return [x0 + ramp * n for x0, n in zip(initial_state, raw_outputs)]


def residual_loss(params: NetworkParams, mask, system: SystemSpec, grid: Sequence[float],
                  ic_mode: str = "ansatz", ic_weight: float = 1.0) -> de.Node:
    """Mean over the grid of the summed squared Hamilton residuals, on a new tape.

    With ``ic_mode="penalty"`` the raw outputs are the state and
    ``ic_weight * |N(0) - x0|^2`` is added (the grid must start at 0).
    ``loss.tape.reverse(loss)`` gives the gradient in ``theta`` order.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("collocation grid is empty")
    _check_ic(ic_mode, ic_weight)
    soft = ic_mode == "penalty"
    if soft and grid[0] != 0.0:
        raise ValueError("the initial-condition penalty needs a grid starting at t = 0")
    tape = de.Tape()
    _bound_network(tape, params, mask)
    total = None
    with de.paused_gc():
        for tn in grid:
            t = tape.lift_input(tn)
            raw = forward(params, mask, t)
            state = raw if soft else apply_ansatz(raw, t, system.initial_state)
            rates = [s.d() for s in state]
            for r in system.residuals(state, rates):
                sq = r * r
                total = sq if total is None else total + sq
            if soft and tn == grid[0]:
                first = state
        total = total * (1.0 / len(grid))
        if soft:
            for s, x0 in zip(first, system.initial_state):
                gap = s - x0
                total = total + gap * gap * ic_weight
        return total


# -- vectorised path ----------------------------------------------------------

class ResidualKernel:
    """Residual loss and its exact gradient over a fixed grid, vectorised.

    Forward: value and time-tangent of every activation.  Backward: adjoints
    for both channels, including the sin'' cross term from the tangent path.
    """

    def __init__(self, arch: ArchSpec, system: SystemSpec, grid: Sequence[float], mask=None,
                 ic_mode: str = "ansatz", ic_weight: float = 1.0):
        if system.dim != arch.output_dim:
            raise ValueError(f"{system.name} has dimension {system.dim}, network outputs {arch.output_dim}")
        t = np.asarray(grid, dtype=np.float64).reshape(-1, 1)
        if t.size == 0:
            raise ValueError("collocation grid is empty")
        self.arch = arch
        self.system = system
        self.t = t
        self.K = t.shape[0]
        self.inputs = np.concatenate([t, np.ones_like(t)])
        _check_ic(ic_mode, ic_weight)
        self.x0 = np.asarray(system.initial_state, dtype=np.float64)
        # penalty mode: the state is the raw output, pinned softly at row 0
        self.soft = ic_mode == "penalty"
        self.ic_weight = float(ic_weight)
        if self.soft:
            if t[0, 0] != 0.0:
                raise ValueError("the initial-condition penalty needs a grid starting at t = 0")
            self.ramp, self.ramp_dot, self.offset = np.ones_like(t), np.zeros_like(t), np.zeros_like(self.x0)
        else:
            self.ramp, self.ramp_dot, self.offset = -np.expm1(-t), np.exp(-t), self.x0
        self.wslices = arch.weight_slices()
        self.bslices = arch.bias_slices()
        self.set_mask(mask)

    def set_mask(self, mask) -> None:
        m = mask_vector(mask, self.arch)
        self.mask = m
        self.full_mask = np.concatenate([m, np.ones(self.arch.n_biases)])
        self.layer_masks = [m[s].reshape(shape) for s, shape in zip(self.wslices, self.arch.layer_shapes)]

    def _layers(self, theta):
        for s, bs, shape, m in zip(self.wslices, self.bslices, self.arch.layer_shapes, self.layer_masks):
            yield theta[s].reshape(shape) * m, theta[bs]

    def _forward(self, theta, keep: bool):
        # Value rows [:K] and tangent rows [K:] travel stacked through each matmul.
        K = self.K
        A = self.inputs
        cache = []
        layers = list(self._layers(theta))
        for W, b in layers[:-1]:
            Z = A @ W
            z = Z[:K]
            z += b
            zd = Z[K:]
            s, c = np.sin(z), np.cos(z)
            if keep:
                cache.append((A, s, c, zd))
            A = np.empty_like(Z)
            A[:K] = s
            np.multiply(c, zd, out=A[K:])
        W, b = layers[-1]
        Z = A @ W
        Z[:K] += b
        if keep:
            cache.append((A,))
        return layers, cache, Z[:K], Z[K:]

    def predict(self, theta: np.ndarray) -> np.ndarray:
        """State estimates on the grid, shape ``(K, D)``."""
        _, _, out, _ = self._forward(theta, keep=False)
        return self.offset + self.ramp * out

    def _residuals(self, out, out_dot):
        X = self.offset + self.ramp * out
        Xd = self.ramp_dot * out + self.ramp * out_dot
        cols = [X[:, k] for k in range(X.shape[1])]
        rhs = self.system.rhs(cols)
        R = Xd - np.column_stack([np.broadcast_to(r, (self.K,)) for r in rhs])
        return cols, R

    def loss(self, theta: np.ndarray) -> float:
        _, _, out, out_dot = self._forward(theta, keep=False)
        cols, R = self._residuals(out, out_dot)
        return float(np.sum(R * R) / self.K) + self._penalty(cols)

    def _penalty(self, cols) -> float:
        if not self.soft:
            return 0.0
        gap = np.array([c[0] for c in cols]) - self.x0
        return self.ic_weight * float(gap @ gap)

    def loss_and_grad(self, theta: np.ndarray, grad: np.ndarray | None = None) -> tuple[float, np.ndarray]:
        if grad is None:
            grad = np.empty_like(theta)
        K = self.K
        layers, cache, out, out_dot = self._forward(theta, keep=True)
        cols, R = self._residuals(out, out_dot)
        loss = float(np.sum(R * R) / K) + self._penalty(cols)

        gXd = (2.0 / K) * R
        gX = -np.column_stack(
            [np.broadcast_to(v, (K,)) for v in self.system.rhs_vjp(cols, [gXd[:, k] for k in range(gXd.shape[1])])]
        )
        if self.soft:
            gX[0] += 2.0 * self.ic_weight * (np.array([c[0] for c in cols]) - self.x0)
        # adjoints of (raw output value, raw output tangent), stacked
        G = np.concatenate([self.ramp * gX + self.ramp_dot * gXd, self.ramp * gXd])

        n = len(layers)
        for li in range(n - 1, -1, -1):
            W, _ = layers[li]
            A = cache[li][0]
            grad[self.wslices[li]] = ((A.T @ G) * self.layer_masks[li]).reshape(-1)
            grad[self.bslices[li]] = G[:K].sum(axis=0)
            if li == 0:
                break
            Gin = G @ W.T
            _, s, c, zd = cache[li - 1]
            g, gd = Gin[:K], Gin[K:]
            # through a = sin z and a' = cos z * z'
            G = np.empty_like(Gin)
            G[:K] = g * c - gd * s * zd
            np.multiply(gd, c, out=G[K:])
        return loss, grad


@dataclass
class TrainResult:
    params: NetworkParams
    history: np.ndarray
    final_loss: float = field(init=False)

    def __post_init__(self):
        self.final_loss = float(self.history[-1]) if len(self.history) else float("nan")


def train(params: NetworkParams, mask, system: SystemSpec, config: TrainConfig) -> TrainResult:
    """Full-batch Adam on the residual loss; masked weights never move.

    Returns a new :class:`NetworkParams` (the input is untouched) and the loss
    recorded at each epoch before its update.  Adam moments start from zero
    on every call.
    """
    kernel = ResidualKernel(params.arch, system, config.grid, mask, config.ic_mode, config.ic_weight)
    theta = params.theta.copy()
    gmask = kernel.full_mask
    grad = np.empty_like(theta)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    b1, b2 = config.betas
    lr, eps = config.learning_rate, config.adam_eps
    history = np.empty(config.epochs)
    b1t = b2t = 1.0
    for epoch in range(config.epochs):
        loss, _ = kernel.loss_and_grad(theta, grad)
        if not math.isfinite(loss):
            raise DivergenceError(epoch, loss)
        history[epoch] = loss
        grad *= gmask
        m *= b1
        m += (1.0 - b1) * grad
        v *= b2
        v += (1.0 - b2) * grad * grad
        b1t *= b1
        b2t *= b2
        step = lr / (1.0 - b1t)
        theta -= step * m / (np.sqrt(v / (1.0 - b2t)) + eps)
    return TrainResult(NetworkParams(params.arch, theta, params.seed, params.init), history)


def predict(params: NetworkParams, mask, system: SystemSpec, times: Sequence[float],
            ic_mode: str = "ansatz") -> np.ndarray:
    return ResidualKernel(params.arch, system, times, mask, ic_mode).predict(params.theta)
