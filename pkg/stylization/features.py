"""Hypercolumn features.

The built-in extractor is a fixed filter bank over an image pyramid. Each
level is a box-filtered downsample of the image by ``2**level``; on it we take
the colour itself, two Gaussian blurs of the colour (sigma 1 and 2) and four
oriented central-difference derivatives of luminance (0, 45, 90 and 135
degrees). Each map is bilinearly upsampled back to the sampled pixels, which
gives 13 channels per level. Every step is a sparse linear operator, so the
features of an image built from autodiff tensors are differentiable.

External feature stacks are JSON headers next to little-endian float64 blobs.
"""

import json
import logging
from dataclasses import asdict, dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from autodiff import ops
from autodiff.tensor import Tensor
from facesculpt.exceptions import FaceSculptError, FeatureFileError

logger = logging.getLogger(__name__)

MODES = ("filter_bank", "external")
LUMINANCE = np.array([[0.299], [0.587], [0.114]])
BLUR_SIGMAS = (1.0, 2.0)
_DIAGONAL = np.sqrt(0.5)
# (cos, sin) of 0, 45, 90 and 135 degrees
DERIVATIVE_DIRECTIONS = ((1.0, 0.0), (_DIAGONAL, _DIAGONAL), (0.0, 1.0), (-_DIAGONAL, _DIAGONAL))
CHANNELS_PER_LEVEL = 3 * (1 + len(BLUR_SIGMAS)) + len(DERIVATIVE_DIRECTIONS)


@dataclass
class ExtractorSpec:
    mode: str = "filter_bank"
    levels: int = 3
    k_max: int = 1024
    seed: int = 0
    path: str = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise FaceSculptError(f"Unknown extractor mode {self.mode!r}; expected one of {MODES}")
        if self.k_max < 64:
            raise FaceSculptError("k_max must be at least 64")
        if self.levels < 1:
            raise FaceSculptError("The filter bank needs at least one level")
        if self.mode == "external" and not self.path:
            raise FaceSculptError("External features need a file path")

    @property
    def dimension(self):
        return CHANNELS_PER_LEVEL * self.levels

    def as_dict(self):
        return asdict(self)


@dataclass(frozen=True)
class FeatureStack:
    vectors: np.ndarray
    pixel_coords: np.ndarray
    image_size: tuple

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        coords = np.asarray(self.pixel_coords, dtype=np.int64).reshape(-1, 2)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise FeatureFileError(f"A feature stack needs at least one vector, got shape {vectors.shape}")
        if coords.shape[0] != vectors.shape[0]:
            raise FeatureFileError(f"{vectors.shape[0]} vectors but {coords.shape[0]} pixel coordinates")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "pixel_coords", coords)
        object.__setattr__(self, "image_size", tuple(int(s) for s in self.image_size))

    @property
    def k(self):
        return self.vectors.shape[0]

    @property
    def d(self):
        return self.vectors.shape[1]

    def save(self, stem):
        stem = Path(stem).with_suffix("")
        stem.parent.mkdir(parents=True, exist_ok=True)
        header = {
            "format": "face-sculpt-features/1",
            "k": self.k,
            "d": self.d,
            "image_size": list(self.image_size),
            "pixel_coords": self.pixel_coords.tolist(),
            "dtype": "float64",
            "byteorder": "little",
        }
        stem.with_suffix(".json").write_text(json.dumps(header))
        stem.with_suffix(".bin").write_bytes(self.vectors.astype("<f8").tobytes())
        return stem.with_suffix(".json")

    @classmethod
    def load(cls, stem):
        stem = Path(stem).with_suffix("")
        try:
            header = json.loads(stem.with_suffix(".json").read_text())
            blob = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
            k, d = int(header["k"]), int(header["d"])
            coords, image_size = header["pixel_coords"], header["image_size"]
        except (OSError, ValueError, KeyError, TypeError) as exc:
            raise FeatureFileError(f"Cannot read feature stack {stem}: {exc}", details={"path": str(stem)}) from exc
        if blob.size != k * d:
            raise FeatureFileError(
                f"Feature blob holds {blob.size} values, header says {k} x {d}",
                details={"path": str(stem), "k": k, "d": d},
            )
        return cls(blob.reshape(k, d).astype(np.float64), coords, image_size)


# Sparse building blocks


def _clamped_taps(n, offsets, weights):
    """``n x n`` 1-D filter with clamp-to-edge addressing."""
    rows = np.repeat(np.arange(n), len(offsets))
    cols = np.clip(rows + np.tile(offsets, n), 0, n - 1)
    values = np.tile(weights, n)
    return sp.csr_matrix((values, (rows, cols)), shape=(n, n))


def _gaussian_1d(n, sigma):
    radius = int(np.ceil(3 * sigma))
    offsets = np.arange(-radius, radius + 1)
    weights = np.exp(-0.5 * (offsets / sigma) ** 2)
    return _clamped_taps(n, offsets, weights / weights.sum())


def _difference_1d(n):
    return _clamped_taps(n, np.array([-1, 1]), np.array([-0.5, 0.5]))


def _box_downsample(h, w, factor):
    """Average ``factor x factor`` blocks; partial blocks at the far edges average what they hold."""
    hl, wl = -(-h // factor), -(-w // factor)
    rows, cols = np.divmod(np.arange(h * w), w)
    target = (rows // factor) * wl + cols // factor
    counts = np.bincount(target, minlength=hl * wl)
    matrix = sp.csr_matrix((1.0 / counts[target], (target, np.arange(h * w))), shape=(hl * wl, h * w))
    return matrix, hl, wl


def _axis_taps(n_out, n_in):
    """Source index pairs and weights of bilinear resampling along one axis (pixel-centre aligned)."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    return lo, hi, frac


def _bilinear_upsample(h, w, hl, wl):
    """``(h·w) x (hl·wl)`` bilinear interpolation from the level grid to full resolution."""
    r_lo, r_hi, fy = _axis_taps(h, hl)
    c_lo, c_hi, fx = _axis_taps(w, wl)
    rr, cc = np.divmod(np.arange(h * w), w)
    rows = np.repeat(np.arange(h * w), 4)
    cols = np.stack(
        [
            r_lo[rr] * wl + c_lo[cc],
            r_lo[rr] * wl + c_hi[cc],
            r_hi[rr] * wl + c_lo[cc],
            r_hi[rr] * wl + c_hi[cc],
        ],
        axis=1,
    ).reshape(-1)
    values = np.stack(
        [
            (1 - fy[rr]) * (1 - fx[cc]),
            (1 - fy[rr]) * fx[cc],
            fy[rr] * (1 - fx[cc]),
            fy[rr] * fx[cc],
        ],
        axis=1,
    ).reshape(-1)
    return sp.csr_matrix((values, (rows, cols)), shape=(h * w, hl * wl))


@dataclass(frozen=True)
class PyramidLevel:
    downsample: object
    upsample: object
    blurs: tuple
    derivatives: tuple


@lru_cache(maxsize=16)
def filter_pyramid(h, w, levels):
    """Sampling-independent operators for an ``h x w`` image, one entry per level."""
    pyramid = []
    for level in range(levels):
        if level == 0:
            downsample, hl, wl = None, h, w
        else:
            downsample, hl, wl = _box_downsample(h, w, 2**level)
        eye_h, eye_w = sp.identity(hl, format="csr"), sp.identity(wl, format="csr")
        blurs = tuple(
            (sp.kron(eye_h, _gaussian_1d(wl, s), format="csr"), sp.kron(_gaussian_1d(hl, s), eye_w, format="csr"))
            for s in BLUR_SIGMAS
        )
        dx = sp.kron(eye_h, _difference_1d(wl), format="csr")
        dy = sp.kron(_difference_1d(hl), eye_w, format="csr")
        derivatives = tuple((c * dx + s * dy).tocsr() for c, s in DERIVATIVE_DIRECTIONS)
        upsample = None if level == 0 else _bilinear_upsample(h, w, hl, wl)
        pyramid.append(PyramidLevel(downsample, upsample, blurs, derivatives))
    return tuple(pyramid)


def sample_pixels(image_size, k_max, rng):
    """``min(H·W, k_max)`` distinct flat pixel indices drawn uniformly, in increasing order."""
    h, w = image_size
    k = min(h * w, int(k_max))
    return np.sort(rng.choice(h * w, size=k, replace=False))


class HypercolumnOperator:
    """Filter-bank features at a fixed set of pixels of an ``h x w`` image.

    :meth:`apply` maps an ``(h·w) x 3`` image (array or tensor) to a ``k x d``
    tensor, differentiable in the image.
    """

    def __init__(self, image_size, levels, pixels=None):
        self.image_size = tuple(int(s) for s in image_size)
        h, w = self.image_size
        self.pixels = np.arange(h * w) if pixels is None else np.asarray(pixels, dtype=np.int64)
        self.levels = levels
        pyramid = filter_pyramid(h, w, levels)
        self._levels = []
        for level in pyramid:
            if level.upsample is None:
                select = sp.identity(h * w, format="csr")[self.pixels]
            else:
                select = level.upsample[self.pixels]
            self._levels.append((level, select.tocsr()))

    @property
    def k(self):
        return self.pixels.size

    @property
    def dimension(self):
        return CHANNELS_PER_LEVEL * self.levels

    def pixel_coords(self):
        return np.column_stack(np.divmod(self.pixels, self.image_size[1]))

    def apply(self, image):
        image = image if isinstance(image, Tensor) else Tensor(np.asarray(image, dtype=np.float64).reshape(-1, 3))
        columns = []
        for level, select in self._levels:
            current = image if level.downsample is None else ops.linear_map(level.downsample, image)
            columns.append(ops.linear_map(select, current))
            for along_x, along_y in level.blurs:
                columns.append(ops.linear_map(select, ops.linear_map(along_y, ops.linear_map(along_x, current))))
            luminance = ops.matmul(current, LUMINANCE)
            for derivative in level.derivatives:
                columns.append(ops.linear_map(select, ops.linear_map(derivative, luminance)))
        return ops.concat(columns, axis=1)

    def stack(self, image):
        """Features of a constant image as a :class:`FeatureStack`."""
        return FeatureStack(self.apply(image).value, self.pixel_coords(), self.image_size)


def extract_hypercolumns(image, spec, rng=None):
    """Hypercolumns of ``image`` (``H x W x 3``) at ``min(H·W, k_max)`` random pixels.

    In external mode the stack saved at ``spec.path`` is returned verbatim once
    its image size is checked against ``image``.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] * image.shape[1] == 0:
        raise FaceSculptError(f"Expected a non-empty H x W x 3 image, got {image.shape}")
    if spec.mode == "external":
        stack = FeatureStack.load(spec.path)
        if stack.image_size != image.shape[:2]:
            raise FeatureFileError(
                f"Feature file {spec.path} describes a {stack.image_size} image, got {image.shape[:2]}",
                details={"expected": list(image.shape[:2]), "found": list(stack.image_size)},
            )
        return stack
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    pixels = sample_pixels(image.shape[:2], spec.k_max, rng)
    operator = HypercolumnOperator(image.shape[:2], spec.levels, pixels)
    stack = operator.stack(image.reshape(-1, 3))
    logger.debug("hypercolumns k=%d d=%d image=%s", stack.k, stack.d, image.shape[:2])
    return stack
