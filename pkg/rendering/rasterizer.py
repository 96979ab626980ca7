"""Deterministic z-buffered rasterizer, differentiable in the texture only.

Pixel ``(row, col)`` has its centre at ``(col + 0.5, row + 0.5)`` in image
coordinates. Coverage follows the top-left fill rule and the depth test is
strict, so of two faces at equal depth the one listed first wins. UVs are
interpolated perspective-correctly and sampled bilinearly with clamp-to-edge
addressing; texture row 0 holds ``v = 1``.

Every covered pixel records the four texels it read and their bilinear
weights. Those footprints make up a sparse sampling matrix ``R`` with
``image = R · texture`` on covered pixels, and ``Rᵀ`` is the texture gradient.
"""

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from facesculpt.exceptions import EmptyMeshError, FaceSculptError
from meshes.projection import project_points

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Raster:
    """Per-pixel visibility: face id (−1 for background), perspective-correct
    barycentrics, depth and interpolated UV."""

    face_ids: np.ndarray
    barycentrics: np.ndarray
    depth: np.ndarray
    uv: np.ndarray

    @property
    def shape(self):
        return self.face_ids.shape

    @property
    def covered(self):
        return self.face_ids >= 0


@dataclass(frozen=True)
class Footprint:
    """Texels read by each pixel: flat texel indices and bilinear weights, ``(H, W, 4)``."""

    texel_indices: np.ndarray
    texel_weights: np.ndarray
    fractions: np.ndarray
    texture_shape: tuple

    @cached_property
    def sampling_matrix(self):
        h, w, _ = self.texel_indices.shape
        covered = self.texel_indices[..., 0] >= 0
        pixels = np.flatnonzero(covered.reshape(-1))
        rows = np.repeat(pixels, 4)
        cols = self.texel_indices.reshape(-1, 4)[pixels].reshape(-1)
        values = self.texel_weights.reshape(-1, 4)[pixels].reshape(-1)
        th, tw = self.texture_shape
        return sp.csr_matrix((values, (rows, cols)), shape=(h * w, th * tw))


@dataclass(frozen=True)
class RenderedView:
    image: np.ndarray
    raster: Raster
    footprint: Footprint
    background: float

    @property
    def depth(self):
        return self.raster.depth

    @property
    def covered(self):
        return self.raster.covered

    @property
    def sampling_matrix(self):
        return self.footprint.sampling_matrix


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def _is_top_left(ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    return dy < 0 or (dy == 0 and dx > 0)


def _inside(weight, top_left):
    return (weight > 0) | ((weight == 0) & top_left)


def perspective_correct(screen_bary, inv_w):
    """Barycentrics in the triangle's own plane from screen-space ones and per-vertex ``1/w``."""
    weighted = screen_bary * inv_w
    return weighted / weighted.sum(axis=-1, keepdims=True)


def screen_vertices(mesh, proj, image_size):
    """Pixel positions, z-buffer depth and ``1/w`` of every vertex at ``image_size``."""
    xy, depth = project_points(mesh.vertices, proj)
    xy = xy * (image_size / proj.image_size)
    inv_w = np.ones(mesh.n_vertices) if proj.is_affine else 1.0 / depth
    return xy, depth, inv_w


def rasterize(mesh, proj, image_size):
    """Hard rasterization of every face of ``mesh``; faces are tested in index order."""
    if mesh.n_faces == 0 or mesh.n_vertices == 0:
        raise EmptyMeshError("Cannot render a mesh without faces")
    size = int(image_size)
    xy, depth, inv_w = screen_vertices(mesh, proj, size)

    zbuffer = np.full((size, size), np.inf)
    face_ids = np.full((size, size), -1, dtype=np.int64)
    barycentrics = np.zeros((size, size, 3))

    for f, corners in enumerate(mesh.faces):
        px, py = xy[corners, 0], xy[corners, 1]
        area = _edge(px[0], py[0], px[1], py[1], px[2], py[2])
        if area == 0:
            continue
        order = np.array([0, 1, 2]) if area > 0 else np.array([0, 2, 1])
        ax, bx, cx = px[order]
        ay, by, cy = py[order]
        area = abs(area)

        col0 = max(int(np.ceil(min(ax, bx, cx) - 0.5)), 0)
        col1 = min(int(np.floor(max(ax, bx, cx) - 0.5)), size - 1)
        row0 = max(int(np.ceil(min(ay, by, cy) - 0.5)), 0)
        row1 = min(int(np.floor(max(ay, by, cy) - 0.5)), size - 1)
        if col0 > col1 or row0 > row1:
            continue
        rows, cols = np.mgrid[row0 : row1 + 1, col0 : col1 + 1]
        sx, sy = cols + 0.5, rows + 0.5

        w0 = _edge(bx, by, cx, cy, sx, sy)
        w1 = _edge(cx, cy, ax, ay, sx, sy)
        w2 = _edge(ax, ay, bx, by, sx, sy)
        inside = (
            _inside(w0, _is_top_left(bx, by, cx, cy))
            & _inside(w1, _is_top_left(cx, cy, ax, ay))
            & _inside(w2, _is_top_left(ax, ay, bx, by))
        )
        if not inside.any():
            continue

        screen = np.zeros(rows.shape + (3,))
        screen[..., order[0]] = w0 / area
        screen[..., order[1]] = w1 / area
        screen[..., order[2]] = w2 / area
        if proj.is_affine:
            bary = screen
            z = screen @ depth[corners]
        else:
            bary = perspective_correct(screen, inv_w[corners])
            z = 1.0 / (screen @ inv_w[corners])

        window = zbuffer[row0 : row1 + 1, col0 : col1 + 1]
        wins = inside & (z < window)
        if not wins.any():
            continue
        window[wins] = z[wins]
        face_ids[row0 : row1 + 1, col0 : col1 + 1][wins] = f
        barycentrics[row0 : row1 + 1, col0 : col1 + 1][wins] = bary[wins]

    covered = face_ids >= 0
    uv = np.zeros((size, size, 2))
    corner_uvs = mesh.uvs[mesh.faces[face_ids[covered]]]
    uv[covered] = np.einsum("pk,pkc->pc", barycentrics[covered], corner_uvs)
    zbuffer[~covered] = np.inf
    return Raster(face_ids, barycentrics, zbuffer, uv)


def texture_footprint(raster, texture_shape):
    """Bilinear footprint of every covered pixel in a texture of ``texture_shape = (H, W)``."""
    th, tw = texture_shape
    covered = raster.covered
    x = raster.uv[..., 0] * tw - 0.5
    y = (1.0 - raster.uv[..., 1]) * th - 0.5
    x0, y0 = np.floor(x), np.floor(y)
    fx, fy = x - x0, y - y0
    c0 = np.clip(x0, 0, tw - 1).astype(np.int64)
    c1 = np.clip(x0 + 1, 0, tw - 1).astype(np.int64)
    r0 = np.clip(y0, 0, th - 1).astype(np.int64)
    r1 = np.clip(y0 + 1, 0, th - 1).astype(np.int64)

    indices = np.stack([r0 * tw + c0, r0 * tw + c1, r1 * tw + c0, r1 * tw + c1], axis=-1)
    weights = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy], axis=-1)
    indices[~covered] = -1
    weights[~covered] = 0.0
    fractions = np.stack([fx, fy], axis=-1)
    fractions[~covered] = 0.0
    return Footprint(indices, weights, fractions, (th, tw))


def sample_texture(footprint, texture, background):
    """Bilinear lookup as two nested lerps, so a constant texture reproduces its value exactly."""
    h, w, _ = footprint.texel_indices.shape
    flat = texture.reshape(-1, texture.shape[-1])
    covered = footprint.texel_indices[..., 0] >= 0
    image = np.full((h, w, texture.shape[-1]), float(background))
    idx = footprint.texel_indices[covered]
    fx = footprint.fractions[covered][:, 0:1]
    fy = footprint.fractions[covered][:, 1:2]
    top = flat[idx[:, 0]] + fx * (flat[idx[:, 1]] - flat[idx[:, 0]])
    bottom = flat[idx[:, 2]] + fx * (flat[idx[:, 3]] - flat[idx[:, 2]])
    image[covered] = top + fy * (bottom - top)
    return image


def check_texture(texture):
    texture = np.asarray(texture, dtype=np.float64)
    if texture.ndim != 3 or texture.shape[-1] != 3 or 0 in texture.shape:
        raise FaceSculptError(f"Texture must be a non-empty H x W x 3 array, got {texture.shape}")
    if not np.all(np.isfinite(texture)):
        raise FaceSculptError("Texture values must be finite")
    return texture


def render(mesh, texture, proj, img_size=None, background=0.5):
    """Rasterize ``mesh`` and colour it from ``texture`` with no lighting."""
    texture = check_texture(texture)
    size = proj.image_size if img_size is None else int(img_size)
    raster = rasterize(mesh, proj, size)
    footprint = texture_footprint(raster, texture.shape[:2])
    image = sample_texture(footprint, texture, background)
    logger.debug(
        "rendered size=%d covered=%d azimuth=%.3f elevation=%.3f",
        size,
        int(raster.covered.sum()),
        proj.azimuth,
        proj.elevation,
    )
    return RenderedView(image, raster, footprint, float(background))


def render_backward(view, grad_image):
    """Texture gradient of a scalar whose image gradient is ``grad_image``: ``Rᵀ · grad_image``."""
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != view.image.shape:
        raise FaceSculptError(f"Image gradient has shape {grad_image.shape}, expected {view.image.shape}")
    th, tw = view.footprint.texture_shape
    channels = grad_image.shape[-1]
    grad = view.sampling_matrix.T @ grad_image.reshape(-1, channels)
    return np.asarray(grad).reshape(th, tw, channels)
