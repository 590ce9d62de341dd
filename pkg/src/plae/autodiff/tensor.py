"""Tensor and tape.

Operations only record onto a :class:`Graph` while one is active::

    with Graph() as g:
        loss = mse(decoder(encoder(x)), x)
    g.backward(loss)

Outside a ``with Graph()`` block every op is a plain forward pass, which is
what inference uses.
"""

from __future__ import annotations

import contextlib
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class GraphError(RuntimeError):
    pass


_state = threading.local()


def _graph_stack() -> list:
    if not hasattr(_state, "graphs"):
        _state.graphs = []
    return _state.graphs


def default_dtype() -> np.dtype:
    return getattr(_state, "dtype", np.dtype(np.float32))


@contextlib.contextmanager
def shadow_mode():
    """Create new tensors in float64. Meant for gradient checks only."""
    prev = default_dtype()
    _state.dtype = np.dtype(np.float64)
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def branch_trace():
    """Collect a fingerprint of every piecewise branch taken (relu masks, pool argmaxes)."""
    prev = getattr(_state, "branches", None)
    log: list = []
    _state.branches = log
    try:
        yield log
    finally:
        _state.branches = prev


def note_branch(choice: np.ndarray):
    log = getattr(_state, "branches", None)
    if log is not None:
        log.append(np.packbits(choice.reshape(-1)).tobytes() if choice.dtype == bool else choice.tobytes())


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None, dtype=None):
        self.data = np.ascontiguousarray(data, dtype=dtype or default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name
        self._node: Optional[Node] = None

    @classmethod
    def _from_op(cls, data: np.ndarray, requires_grad: bool) -> "Tensor":
        t = cls.__new__(cls)
        t.data = data
        t.grad = None
        t.requires_grad = requires_grad
        t.name = None
        t._node = None
        return t

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return self._node is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._from_op(self.data, False)

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


@dataclass(eq=False)
class Node:
    kind: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass(eq=False)
class Graph:
    """Forward tape; nodes are appended in execution (= topological) order."""

    nodes: list = field(default_factory=list)
    consumed: bool = False
    visited: int = 0

    def __enter__(self):
        _graph_stack().append(self)
        return self

    def __exit__(self, *exc):
        _graph_stack().pop()
        return False

    def backward(self, loss: Tensor):
        backward(loss, self)


def active_graph() -> Optional[Graph]:
    stack = _graph_stack()
    return stack[-1] if stack else None


@contextlib.contextmanager
def no_grad():
    """Suspend recording, even inside an enclosing ``with Graph()``."""
    stack = _graph_stack()
    stack.append(None)
    try:
        yield
    finally:
        stack.pop()


def record(kind: str, out_data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap an op result, recording a node when a graph is live and any input needs grad."""
    g = active_graph()
    needs = g is not None and any(t.requires_grad for t in inputs)
    out = Tensor._from_op(out_data, needs)
    if needs:
        if g.consumed:
            raise GraphError("graph already consumed by backward(); start a new Graph")
        node = Node(kind, tuple(inputs), out, backward_fn)
        out._node = node
        g.nodes.append(node)
    return out


def backward(loss: Tensor, graph: Graph):
    """Reverse sweep over ``graph``; leaf tensors with ``requires_grad`` accumulate ``.grad``."""
    if graph.consumed:
        raise GraphError("backward() called twice on the same graph without a new forward pass")
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.shape}")
    graph.consumed = True
    if loss._node is None:
        # constant loss: nothing upstream needs a gradient
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        graph.visited += 1
        in_grads = node.backward(g)
        for inp, gi in zip(node.inputs, in_grads):
            if gi is None or not inp.requires_grad:
                continue
            if inp._node is None:
                inp.grad = gi.copy() if inp.grad is None else inp.grad + gi
            else:
                key = id(inp)
                grads[key] = gi if key not in grads else grads[key] + gi
    # release intermediates so the tape does not pin activations
    graph.nodes.clear()
