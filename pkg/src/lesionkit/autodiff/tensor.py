"""Dense float64 tensors with reverse-mode differentiation.

The graph is a tape rebuilt on every forward pass: each operation returns
a fresh Tensor holding references to its inputs and a gradient function.
``backward`` walks the tape in reverse topological order, keeps per-pass
gradients in a local table, and adds the results into the persistent
``.grad`` buffers, so calling it twice accumulates.
"""

import itertools

import numpy as np

from ..errors import NumericError

_node_ids = itertools.count()


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NumericError("tensor created with non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.node_id = next(_node_ids)
        self._parents = ()
        self._grad_fn = None

    @classmethod
    def _from_op(cls, data, parents, grad_fn):
        """Internal constructor for op outputs; skips the finite check."""
        t = object.__new__(cls)
        t.data = data
        t.grad = None
        t.node_id = next(_node_ids)
        if any(p.requires_grad for p in parents):
            t.requires_grad = True
            t._parents = tuple(parents)
            t._grad_fn = grad_fn
        else:
            t.requires_grad = False
            t._parents = ()
            t._grad_fn = None
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor._from_op(self.data, (), None)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar delegates to ops (imported at module bottom).
    def __add__(self, other):
        return _ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return _ops.sub(self, other)

    def __rsub__(self, other):
        return _ops.sub(other, self)

    def __mul__(self, other):
        return _ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return _ops.div(self, other)

    def __rtruediv__(self, other):
        return _ops.div(other, self)

    def __neg__(self):
        return _ops.mul(self, -1.0)

    def __pow__(self, p):
        return _ops.power(self, p)

    def __matmul__(self, other):
        return _ops.matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return _ops.sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _ops.reshape(self, shape)


def as_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def constant(x):
    """A graph constant: never receives gradients."""
    t = as_tensor(x)
    t.requires_grad = False
    return t


def _toposort(root):
    order = []
    visited = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if p.requires_grad and id(p) not in visited:
                visited.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def backward(loss):
    """Populate .grad for every requires_grad tensor reachable from ``loss``.

    The seed is scalar 1. Gradients are propagated through a per-call table
    and only added to the persistent buffers at the end, so repeated calls
    without a reset accumulate exactly.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ValueError(f"backward seed must be scalar, got shape {loss.data.shape}")
    if not np.isfinite(loss.data).all():
        raise NumericError("backward called on a non-finite loss")
    if not loss.requires_grad:
        return

    order = _toposort(loss)
    table = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = table.pop(id(node), None)
        if g is None:
            continue
        if not np.isfinite(g).all():
            raise NumericError("non-finite gradient encountered during backward")
        if node.grad is None:
            node.grad = g.copy()
        else:
            node.grad = node.grad + g
        if node._grad_fn is None:
            continue
        parent_grads = node._grad_fn(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = table.get(id(parent))
            table[id(parent)] = pg if prev is None else prev + pg


# Imported last: ops.py needs Tensor at its own import time.
from . import ops as _ops  # noqa: E402
