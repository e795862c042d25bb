"""Tensor type and the reverse-mode sweep.

Every tensor gets a node id from a process-wide counter at creation, so a
node's inputs always carry smaller ids than the node itself. Sorting the
reachable nodes by id therefore yields a valid topological order without an
explicit tape.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from ..errors import ContractError, NumericError

_node_ids = itertools.count(1)

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


class Tensor:
    """Dense n-d array with optional operation history.

    A tensor built by an op whose inputs all have ``requires_grad=False`` keeps
    no history at all; such tensors are plain immutable values and can be
    shared freely (frozen teacher snapshots rely on this).
    """

    __slots__ = ("data", "requires_grad", "id", "op", "parents", "backward_fn", "name")
    __array_ufunc__ = None  # make numpy defer to our operators

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.id = next(_node_ids)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.backward_fn: BackwardFn | None = None
        self.name = name

    @classmethod
    def from_op(cls, data: np.ndarray, parents: Sequence["Tensor"], op: str, backward_fn: BackwardFn) -> "Tensor":
        out = cls(data)
        out.op = op
        if any(p.requires_grad for p in parents):
            out.requires_grad = True
            out.parents = tuple(parents)
            out.backward_fn = backward_fn
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def is_leaf(self) -> bool:
        return self.backward_fn is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return self.data.item()

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f", op={self.op}" if self.op != "leaf" else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        from . import ops
        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops
        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


@dataclass
class Graph:
    """Nodes reachable from an output, in creation (= topological) order."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, output: Tensor) -> "Graph":
        seen: dict[int, Tensor] = {}
        stack = [output]
        while stack:
            node = stack.pop()
            if node.id in seen or not node.requires_grad:
                continue
            seen[node.id] = node
            stack.extend(node.parents)
        return cls(sorted(seen.values(), key=lambda t: t.id))

    @property
    def leaves(self) -> list[Tensor]:
        return [n for n in self.nodes if n.is_leaf]


def _check_finite(arr: np.ndarray, node: Tensor, what: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericError(
            f"non-finite {what} at node {node.id} (op={node.op})", node_id=node.id, op=node.op
        )


def backward(loss: Tensor, wrt: Iterable[Tensor] | None = None) -> dict[int, np.ndarray]:
    """Reverse sweep from a scalar ``loss``.

    Returns a map from node id to dloss/dnode for every requires-grad leaf that
    ``loss`` depends on. If ``wrt`` is given, the map is keyed by exactly those
    tensors, with zero arrays for the ones ``loss`` does not touch.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    _check_finite(loss.data, loss, "loss value")

    graph = Graph.trace(loss)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    leaf_grads: dict[int, np.ndarray] = {}
    for node in reversed(graph.nodes):
        g = grads.pop(node.id, None)
        if g is None:
            continue
        if node.is_leaf:
            leaf_grads[node.id] = g
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            _check_finite(pg, node, "gradient")
            if pg.shape != parent.shape:
                raise ContractError(
                    f"op {node.op} produced grad of shape {pg.shape} for input of shape {parent.shape}"
                )
            if parent.id in grads:
                grads[parent.id] = grads[parent.id] + pg
            else:
                grads[parent.id] = pg

    if wrt is None:
        return leaf_grads
    return {t.id: leaf_grads.get(t.id, np.zeros_like(t.data)) for t in wrt}


def grad(loss: Tensor, tensors: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``loss`` w.r.t. ``tensors``, in the same order."""
    gmap = backward(loss, tensors)
    return [gmap[t.id] for t in tensors]
