"""Scalar tape with one forward tangent channel and a single reverse sweep.

Every node carries a value and its derivative with respect to the one seeded
input (time).  Losses built from tangents, e.g. ``(x.tangent - p)**2``, are
differentiated exactly with respect to the registered parameters because each
node records, per parent, both the ordinary partial and the partial of its
*tangent* with respect to the parent's value.

Example::

    tape = Tape()
    t = tape.lift_input(0.5)
    w = tape.lift_param(2.0)
    y = sin(w * t)
    loss = (y.d() - 1.0) ** 2
    grad = tape.reverse(loss)
"""
from __future__ import annotations

import gc
import math
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np


class TapeError(RuntimeError):
    """Raised for foreign nodes, malformed tapes or invalid reversals."""


class Node:
    __slots__ = ("tape", "index", "value", "tangent", "parents", "partials")

    def __init__(self, tape, value, tangent, parents=(), partials=()):
        self.tape = tape
        self.value = value
        self.tangent = tangent
        # partials[k] = (d value / d parent_k, d tangent / d value(parent_k));
        # None marks a tangent view (see Tape._tangent_of)
        self.parents = parents
        self.partials = partials
        nodes = tape.nodes
        self.index = len(nodes)
        nodes.append(self)

    def __repr__(self):
        return f"Node(value={self.value!r}, tangent={self.tangent!r})"

    # -- coercion -------------------------------------------------------
    def _lift(self, other) -> "Node":
        if isinstance(other, Node):
            if other.tape is not self.tape:
                raise TapeError("cannot combine nodes from different tapes")
            return other
        return self.tape.constant(float(other))

    # -- arithmetic -----------------------------------------------------
    def __add__(self, other):
        return add(self, self._lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, self._lift(other))

    def __rsub__(self, other):
        return sub(self._lift(other), self)

    def __mul__(self, other):
        return mul(self, self._lift(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, self._lift(other))

    def __rtruediv__(self, other):
        return div(self._lift(other), self)

    def __neg__(self):
        return mul(self, self.tape.constant(-1.0))

    def __pow__(self, k):
        if not isinstance(k, (int, np.integer)):
            raise TypeError("only integer powers are supported")
        return pow_int(self, int(k))

    def d(self) -> "Node":
        """The tangent of this node promoted to a node of its own.

        The new node's value is ``self.tangent``; gradients flowing into it
        are routed to the tangent channel of ``self`` during :meth:`Tape.reverse`.
        Its own tangent (the second time-derivative) is not tracked.
        """
        return self.tape._tangent_of(self)


class Tape:
    """Creation-ordered record of nodes.  Rebuild one per loss evaluation."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.params: list[Node] = []
        # per-tape scratch space for callers (e.g. parameters already lifted)
        self.bindings: dict = {}

    def lift_input(self, t: float) -> Node:
        return Node(self, float(t), 1.0)

    def lift_param(self, w: float) -> Node:
        node = Node(self, float(w), 0.0)
        self.params.append(node)
        return node

    def constant(self, c: float) -> Node:
        return Node(self, c, 0.0)

    def _tangent_of(self, src: Node) -> Node:
        # a view carries its source as sole parent and no partials; reverse()
        # routes its adjoint into the source's tangent channel
        return Node(self, src.tangent, 0.0, (src,), None)

    def reverse(self, loss: Node) -> np.ndarray:
        """Gradient of ``loss.value`` w.r.t. every registered parameter.

        Returned in registration order.  Parameter influence through both the
        value and tangent channels is accumulated.
        """
        if not isinstance(loss, Node) or loss.tape is not self:
            raise TapeError("loss node does not belong to this tape")
        n = loss.index + 1
        vbar = [0.0] * n
        tbar = [0.0] * n
        vbar[loss.index] = 1.0
        nodes = self.nodes
        with paused_gc():
            for i in range(loss.index, -1, -1):
                gv = vbar[i]
                gt = tbar[i]
                if gv == 0.0 and gt == 0.0:
                    continue
                node = nodes[i]
                partials = node.partials
                if partials is None:
                    j = node.parents[0].index
                    if j >= i:
                        raise TapeError("tape is not topologically ordered")
                    tbar[j] += gv
                    continue
                for parent, (dv, dt) in zip(node.parents, partials):
                    j = parent.index
                    if j >= i:
                        raise TapeError("tape is not topologically ordered")
                    vbar[j] += dv * gv + dt * gt
                    tbar[j] += dv * gt
        return np.array([vbar[p.index] if p.index < n else 0.0 for p in self.params])


@contextmanager
def paused_gc():
    """Suspend cyclic garbage collection while a large tape is built or swept.

    Every node references its tape, so a million-node tape makes each
    automatic collection pass expensive without ever freeing anything.
    """
    enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if enabled:
            gc.enable()


def _check(a, b=None):
    if not isinstance(a, Node) or (b is not None and (not isinstance(b, Node) or b.tape is not a.tape)):
        raise TapeError("operands must be nodes on the same tape")


def lift_input(tape: Tape, t: float) -> Node:
    return tape.lift_input(t)


def lift_param(tape: Tape, w: float) -> Node:
    return tape.lift_param(w)


def add(a: Node, b: Node) -> Node:
    if a.__class__ is not Node or b.__class__ is not Node or a.tape is not b.tape:
        _check(a, b)
    return Node(a.tape, a.value + b.value, a.tangent + b.tangent, (a, b), ((1.0, 0.0), (1.0, 0.0)))


def sub(a: Node, b: Node) -> Node:
    if a.__class__ is not Node or b.__class__ is not Node or a.tape is not b.tape:
        _check(a, b)
    return Node(a.tape, a.value - b.value, a.tangent - b.tangent, (a, b), ((1.0, 0.0), (-1.0, 0.0)))


def mul(a: Node, b: Node) -> Node:
    if a.__class__ is not Node or b.__class__ is not Node or a.tape is not b.tape:
        _check(a, b)
    # c' = a' b + a b'  =>  dc'/da = b', dc'/db = a'
    return Node(
        a.tape,
        a.value * b.value,
        a.tangent * b.value + a.value * b.tangent,
        (a, b),
        ((b.value, b.tangent), (a.value, a.tangent)),
    )


def div(a: Node, b: Node) -> Node:
    if a.__class__ is not Node or b.__class__ is not Node or a.tape is not b.tape:
        _check(a, b)
    if b.value == 0.0:
        raise ZeroDivisionError("division by a node with zero value")
    inv = 1.0 / b.value
    q = a.value * inv
    qt = (a.tangent - q * b.tangent) * inv
    # q' = (a' - q b') / b
    return Node(
        a.tape,
        q,
        qt,
        (a, b),
        ((inv, -b.tangent * inv * inv), (-q * inv, (-a.tangent + 2.0 * q * b.tangent) * inv * inv)),
    )


def sin(a: Node) -> Node:
    _check(a)
    s, c = math.sin(a.value), math.cos(a.value)
    return Node(a.tape, s, c * a.tangent, (a,), ((c, -s * a.tangent),))


def cos(a: Node) -> Node:
    _check(a)
    s, c = math.sin(a.value), math.cos(a.value)
    return Node(a.tape, c, -s * a.tangent, (a,), ((-s, -c * a.tangent),))


def exp(a: Node) -> Node:
    _check(a)
    e = math.exp(a.value)
    return Node(a.tape, e, e * a.tangent, (a,), ((e, e * a.tangent),))


def pow_int(a: Node, k: int) -> Node:
    _check(a)
    if k == 0:
        return a.tape.constant(1.0)
    if k == 1:
        return a
    v = a.value
    if k < 0 and v == 0.0:
        raise ZeroDivisionError("negative power of zero")
    d1 = k * v ** (k - 1)
    d2 = k * (k - 1) * v ** (k - 2)
    return Node(a.tape, v**k, d1 * a.tangent, (a,), ((d1, d2 * a.tangent),))


def finite_difference_gradient(
    loss_fn: Callable[[np.ndarray], float],
    params: Sequence[float],
    step: float = 1e-6,
    indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Central-difference gradient ``(L(w+h) - L(w-h)) / 2h``.

    If ``indices`` is given only those coordinates are estimated and the
    result has ``len(indices)`` entries.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    w = np.array(params, dtype=float)
    idx = range(w.size) if indices is None else indices
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        old = w[i]
        w[i] = old + step
        up = loss_fn(w)
        w[i] = old - step
        down = loss_fn(w)
        w[i] = old
        out[k] = (up - down) / (2.0 * step)
    return out
