import numpy as np

from autodiff.tensor import Tensor


def numerical_gradient(f, x, h=1e-5):
    """Central differences of scalar ``f`` at array ``x``."""
    x = np.array(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + h
        upper = float(f(Tensor(x.copy())).value)
        flat[i] = original - h
        lower = float(f(Tensor(x.copy())).value)
        flat[i] = original
        grad_flat[i] = (upper - lower) / (2.0 * h)
    return grad


def analytic_gradient(f, x):
    leaf = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    out = f(leaf)
    if out.requires_grad:
        out.backward()
    return leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value)


def grad_check(f, x, h=1e-5, floor=1e-2):
    """Largest per-element relative error between backward and central-difference gradients.

    Element ``i`` scores ``|a_i − n_i| / max(|a_i| + |n_i|, floor · s)`` with
    ``s = max|a| + max|n|``, so entries far below the gradient's scale are
    measured against that scale. Returns 0 when both gradients vanish.
    """
    analytic = np.asarray(analytic_gradient(f, x), dtype=np.float64)
    numeric = numerical_gradient(f, x, h=h)
    scale = np.abs(analytic).max(initial=0.0) + np.abs(numeric).max(initial=0.0)
    if scale == 0:
        return 0.0
    denom = np.maximum(np.abs(analytic) + np.abs(numeric), floor * scale)
    return float(np.max(np.abs(analytic - numeric) / denom))
