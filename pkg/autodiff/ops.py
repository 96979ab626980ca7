"""Differentiable primitives.

Shapes must agree exactly: there is no general broadcasting.  Python scalars
are accepted where noted.  Every primitive returns a :class:`Tensor` whose
backward closure returns one adjoint per parent (``None`` for constants).
"""

import numbers

import numpy as np
import scipy.sparse as sp

from autodiff.tensor import Tensor, as_tensor, make_node
from facesculpt.exceptions import ShapeMismatchError

EPS = 1e-8


def _is_scalar(value):
    return isinstance(value, numbers.Number) or (isinstance(value, np.ndarray) and value.ndim == 0)


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise ShapeMismatchError(f"{op}: shapes {a.shape} and {b.shape} differ")


# Elementwise arithmetic


def add(a, b):
    if _is_scalar(b):
        return add_scalar(a, b)
    if _is_scalar(a):
        return add_scalar(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("add", a, b)
    return make_node(a.value + b.value, (a, b), "add", lambda g: (g, g))


def add_scalar(a, c):
    a = as_tensor(a)
    return make_node(a.value + c, (a,), "add_scalar", lambda g: (g,))


def sub(a, b):
    if _is_scalar(b):
        return add_scalar(a, -b)
    if _is_scalar(a):
        return add_scalar(scale(b, -1.0), a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sub", a, b)
    return make_node(a.value - b.value, (a, b), "sub", lambda g: (g, -g))


def scale(a, c):
    a = as_tensor(a)
    return make_node(a.value * c, (a,), "scale", lambda g: (g * c,))


def mul(a, b):
    if _is_scalar(b):
        return scale(a, b)
    if _is_scalar(a):
        return scale(b, a)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("mul", a, b)
    return make_node(a.value * b.value, (a, b), "mul", lambda g: (g * b.value, g * a.value))


def div(a, b):
    if _is_scalar(b):
        return scale(a, 1.0 / b)
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("div", a, b)
    out = a.value / b.value
    return make_node(out, (a, b), "div", lambda g: (g / b.value, -g * out / b.value))


def square(a):
    a = as_tensor(a)
    return make_node(a.value**2, (a,), "square", lambda g: (2.0 * g * a.value,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return make_node(out, (a,), "sqrt", lambda g: (0.5 * g / np.maximum(out, EPS),))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return make_node(out, (a,), "exp", lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return make_node(np.log(a.value), (a,), "log", lambda g: (g / a.value,))


def abs(a):
    a = as_tensor(a)
    return make_node(np.abs(a.value), (a,), "abs", lambda g: (g * np.sign(a.value),))


def relu(a):
    a = as_tensor(a)
    mask = (a.value > 0).astype(a.value.dtype)
    return make_node(a.value * mask, (a,), "relu", lambda g: (g * mask,))


def sigmoid(a):
    a = as_tensor(a)
    out = _stable_sigmoid(a.value)
    return make_node(out, (a,), "sigmoid", lambda g: (g * out * (1.0 - out),))


def log_sigmoid(a):
    """``log(sigmoid(a))`` without overflow for large ``|a|``."""
    a = as_tensor(a)
    x = a.value
    out = np.minimum(x, 0.0) - np.log1p(np.exp(-np.abs(x)))
    return make_node(out, (a,), "log_sigmoid", lambda g: (g * _stable_sigmoid(-x),))


def _stable_sigmoid(x):
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    ex = np.exp(x[~positive])
    out[~positive] = ex / (1.0 + ex)
    return out


def maximum(a, b):
    """Elementwise maximum; ties send the gradient to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("maximum", a, b)
    pick_a = a.value >= b.value
    out = np.where(pick_a, a.value, b.value)
    return make_node(out, (a, b), "maximum", lambda g: (g * pick_a, g * ~pick_a))


# Reductions and reshaping


def sum(a):
    a = as_tensor(a)
    return make_node(np.sum(a.value), (a,), "sum", lambda g: (np.full(a.shape, g, dtype=a.dtype),))


def mean(a):
    a = as_tensor(a)
    n = a.size
    return make_node(np.mean(a.value), (a,), "mean", lambda g: (np.full(a.shape, g / n, dtype=a.dtype),))


def min(a, axis):
    """Minimum along ``axis``; the first minimiser receives the gradient."""
    a = as_tensor(a)
    idx = np.argmin(a.value, axis=axis)
    out = np.take_along_axis(a.value, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def _backward(g):
        grad = np.zeros_like(a.value)
        np.put_along_axis(grad, np.expand_dims(idx, axis), np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return make_node(out, (a,), "min", _backward)


def reshape(a, shape):
    a = as_tensor(a)
    return make_node(a.value.reshape(shape), (a,), "reshape", lambda g: (g.reshape(a.shape),))


def transpose(a):
    a = as_tensor(a)
    return make_node(a.value.T, (a,), "transpose", lambda g: (g.T,))


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise ShapeMismatchError(f"concat: incompatible shapes {ref} and {t.shape}")
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.value for t in tensors], axis=axis)
    return make_node(out, tensors, "concat", lambda g: tuple(np.split(g, splits, axis=axis)))


def slice_cols(a, start, stop):
    a = as_tensor(a)

    def _backward(g):
        grad = np.zeros_like(a.value)
        grad[:, start:stop] = g
        return (grad,)

    return make_node(a.value[:, start:stop], (a,), "slice_cols", _backward)


def take_rows(a, index):
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)

    def _backward(g):
        grad = np.zeros_like(a.value)
        np.add.at(grad, index, g)
        return (grad,)

    return make_node(a.value[index], (a,), "take_rows", _backward)


# Linear algebra


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return make_node(a.value @ b.value, (a, b), "matmul", lambda g: (g @ b.value.T, a.value.T @ g))


def affine(x, weight, bias):
    """``y = x Wᵀ + b`` for a batch ``x`` of shape (batch, in)."""
    x, weight, bias = as_tensor(x), as_tensor(weight), as_tensor(bias)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1] or bias.shape != (weight.shape[0],):
        raise ShapeMismatchError(
            f"affine: input {x.shape}, weight {weight.shape}, bias {bias.shape} are incompatible"
        )
    out = x.value @ weight.value.T + bias.value
    return make_node(
        out,
        (x, weight, bias),
        "affine",
        lambda g: (g @ weight.value, g.T @ x.value, g.sum(axis=0)),
    )


def linear_map(matrix, x):
    """Apply a constant (dense or scipy sparse) matrix to ``x``; the adjoint is its transpose."""
    x = as_tensor(x)
    if matrix.shape[1] != x.shape[0]:
        raise ShapeMismatchError(f"linear_map: matrix {matrix.shape} cannot act on {x.shape}")
    out = np.asarray(matrix @ x.value)
    transposed = matrix.T.tocsr() if sp.issparse(matrix) else matrix.T
    return make_node(out, (x,), "linear_map", lambda g: (np.asarray(transposed @ g),))


def row_norms(a):
    """Euclidean norm of each row; the subgradient at a zero row is zero."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.value**2, axis=1))

    def _backward(g):
        safe = np.where(out > 0, out, 1.0)
        return ((g / safe * (out > 0))[:, None] * a.value,)

    return make_node(out, (a,), "row_norms", _backward)


def frobenius_norm(a):
    """``‖a‖_F``; the subgradient at zero is zero."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.value**2))

    def _backward(g):
        if out == 0:
            return (np.zeros_like(a.value),)
        return (g * a.value / out,)

    return make_node(out, (a,), "frobenius_norm", _backward)


def row_normalize(a, eps=EPS):
    """Divide each row by its ε-floored norm ``sqrt(‖row‖² + ε²)``."""
    a = as_tensor(a)
    norms = np.sqrt(np.sum(a.value**2, axis=1, keepdims=True) + eps**2)
    out = a.value / norms

    def _backward(g):
        dot = np.sum(g * a.value, axis=1, keepdims=True)
        return (g / norms - a.value * dot / norms**3,)

    return make_node(out, (a,), "row_normalize", _backward)


def normalize_columns(a, eps=EPS):
    """Divide each column by its sum (plus ``eps``)."""
    a = as_tensor(a)
    sums = np.sum(a.value, axis=0, keepdims=True) + eps
    out = a.value / sums

    def _backward(g):
        return (g / sums - np.sum(g * a.value, axis=0, keepdims=True) / sums**2,)

    return make_node(out, (a,), "normalize_columns", _backward)


# Distances and losses


def l1_distance(a, b):
    """Mean absolute difference over every coordinate."""
    return mean(abs(sub(a, b)))


def sq_l2_distance(a, b):
    """Mean over rows of the squared Euclidean distance between rows."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("sq_l2_distance", a, b)
    rows = a.shape[0] if a.ndim == 2 else 1
    return scale(sum(square(sub(a, b))), 1.0 / rows)


def cosine_similarity(a, b):
    """Row-wise cosine similarity (a scalar for 1-D inputs)."""
    a, b = as_tensor(a), as_tensor(b)
    _same_shape("cosine_similarity", a, b)
    if a.ndim == 1:
        a2, b2 = reshape(a, (1, -1)), reshape(b, (1, -1))
        return reshape(_rowwise_dot(row_normalize(a2), row_normalize(b2)), ())
    return _rowwise_dot(row_normalize(a), row_normalize(b))


def _rowwise_dot(a, b):
    out = np.sum(a.value * b.value, axis=1)
    return make_node(
        out,
        (a, b),
        "rowwise_dot",
        lambda g: (g[:, None] * b.value, g[:, None] * a.value),
    )


def cosine_cost(a, b):
    """Pairwise cosine distance ``1 − cos(a_i, b_j)`` between rows of ``a`` and ``b``."""
    similarity = matmul(row_normalize(a), transpose(row_normalize(b)))
    return add_scalar(scale(similarity, -1.0), 1.0)


def softmax_cross_entropy(logits, labels):
    """Mean cross-entropy of integer ``labels`` under ``softmax(logits)``."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ShapeMismatchError(f"softmax_cross_entropy: logits {logits.shape}, labels {labels.shape}")
    shifted = logits.value - logits.value.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    rows = np.arange(labels.size)
    out = np.mean(log_norm - shifted[rows, labels])

    def _backward(g):
        probs = np.exp(shifted - log_norm[:, None])
        probs[rows, labels] -= 1.0
        return (g * probs / labels.size,)

    return make_node(out, (logits,), "softmax_cross_entropy", _backward)
