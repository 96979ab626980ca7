"""Reverse-mode automatic differentiation over dense numpy arrays.

A :class:`Tensor` records the operation that produced it and a closure that
maps the output adjoint to the adjoints of its parents.  :class:`Graph` orders
the recorded nodes topologically and runs that chain backwards once.
"""

import logging

import numpy as np

from facesculpt.exceptions import NonFiniteError, NonScalarLossError

logger = logging.getLogger(__name__)


class Tensor:
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None, parents=(), op="leaf", backward=None):
        value = np.asarray(value)
        if value.dtype.kind not in "f":
            value = value.astype(np.float64)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"Non-finite value produced by {op!r}", details={"op": op, "name": name})
        self.value = value
        self.name = name
        self.op = op
        self.parents = tuple(parents)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._backward = backward

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(op={self.op!r}{label} shape={self.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def size(self):
        return self.value.size

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def is_leaf(self):
        return not self.parents

    def item(self):
        return float(self.value.reshape(-1)[0]) if self.size == 1 else float("nan")

    def numpy(self):
        return self.value

    def detach(self):
        return Tensor(self.value.copy())

    def zero_grad(self):
        self.grad = None

    def backward(self):
        return backward(self)

    # Operator sugar; the implementations live in autodiff.ops.

    def __add__(self, other):
        from autodiff import ops

        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from autodiff import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from autodiff import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from autodiff import ops

        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from autodiff import ops

        return ops.div(self, other)

    def __neg__(self):
        from autodiff import ops

        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from autodiff import ops

        return ops.matmul(self, other)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    array = np.asarray(value)
    if dtype is not None:
        array = array.astype(dtype)
    return Tensor(array)


def make_node(value, parents, op, backward):
    """Create an op output; parents that carry no gradient are not recorded."""
    tracked = [p for p in parents if p.requires_grad]
    if not tracked:
        return Tensor(value, op=op)
    return Tensor(value, requires_grad=True, parents=parents, op=op, backward=backward)


class Graph:
    """Nodes reachable from an output, in topological order (inputs first)."""

    def __init__(self, output):
        self.output = output
        self.order = self._topological_order(output)
        self.adjoints = {}

    @staticmethod
    def _topological_order(output):
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.parents):
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def __len__(self):
        return len(self.order)

    def leaves(self):
        return [node for node in self.order if node.is_leaf]

    def run_backward(self):
        output = self.output
        if output.size != 1:
            raise NonScalarLossError(f"Loss must be scalar, got shape {output.shape}")
        self.adjoints = {id(output): np.ones_like(output.value)}
        for node in reversed(self.order):
            adjoint = self.adjoints.pop(id(node), None)
            if adjoint is None:
                continue
            if not np.all(np.isfinite(adjoint)):
                raise NonFiniteError(f"Non-finite adjoint at {node.op!r}", details={"op": node.op})
            if node.is_leaf:
                node.grad = adjoint.copy() if node.grad is None else node.grad + adjoint
                continue
            parent_grads = node._backward(adjoint)
            for parent, grad in zip(node.parents, parent_grads):
                if grad is None or not parent.requires_grad:
                    continue
                grad = np.asarray(grad, dtype=parent.value.dtype).reshape(parent.shape)
                key = id(parent)
                if key in self.adjoints:
                    self.adjoints[key] = self.adjoints[key] + grad
                else:
                    self.adjoints[key] = grad
        return self


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``."""
    return Graph(loss).run_backward()
