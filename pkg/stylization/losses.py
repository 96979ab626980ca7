"""Style and content objectives over hypercolumn stacks."""

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor
from facesculpt.exceptions import ShapeMismatchError
from stylization.features import FeatureStack, HypercolumnOperator, extract_hypercolumns, sample_pixels


def _vectors(stack):
    if isinstance(stack, Tensor):
        return stack
    if isinstance(stack, FeatureStack):
        return Tensor(stack.vectors)
    return Tensor(np.asarray(stack, dtype=np.float64))


def cosine_cost(A, B):
    """``k_A x k_B`` matrix of cosine distances ``1 − cos(A_i, B_j)``."""
    return ops.cosine_cost(_vectors(A), _vectors(B))


def remd_style_loss(A, B):
    """Relaxed earth mover's distance: the larger of the two directional average nearest costs."""
    cost = cosine_cost(A, B)
    return ops.maximum(ops.mean(ops.min(cost, axis=1)), ops.mean(ops.min(cost, axis=0)))


def self_similarity(A):
    """Pairwise cosine distances within ``A``, each column divided by its sum."""
    vectors = _vectors(A)
    return ops.normalize_columns(ops.cosine_cost(vectors, vectors))


def self_similarity_content_loss(A, B):
    """Mean absolute difference of the two self-similarity matrices; rows must be the same pixels."""
    a, b = _vectors(A), _vectors(B)
    if a.shape[0] != b.shape[0]:
        raise ShapeMismatchError(f"Content loss needs stacks of equal size, got k={a.shape[0]} and k={b.shape[0]}")
    return ops.mean(ops.abs(ops.sub(self_similarity(a), self_similarity(b))))


def _flat_image(image):
    if isinstance(image, Tensor):
        return image
    return Tensor(np.asarray(image, dtype=np.float64).reshape(-1, 3))


def texture_loss(I_z, I_c, y, spec, beta=1.0, rng=None, pixels=None):
    """``L_style + β·L_content`` and its two terms.

    ``I_c`` is an ``H x W x 3`` array; ``I_z`` is an array of the same shape or
    an ``(H·W) x 3`` tensor. Both are featurized at the same pixels (``pixels``
    or a fresh draw from ``rng``). ``y`` is a style image or an already
    extracted :class:`FeatureStack`.
    """
    I_c = np.asarray(I_c, dtype=np.float64)
    image_size = I_c.shape[:2]
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if pixels is None:
        pixels = sample_pixels(image_size, spec.k_max, rng)
    operator = HypercolumnOperator(image_size, spec.levels, pixels)
    features_z = operator.apply(_flat_image(I_z))
    features_c = operator.apply(_flat_image(I_c))
    style_stack = y if isinstance(y, FeatureStack) else extract_hypercolumns(y, spec, rng)

    style = remd_style_loss(features_z, style_stack)
    content = self_similarity_content_loss(features_z, features_c)
    total = ops.add(style, ops.scale(content, float(beta)))
    return total, style, content
