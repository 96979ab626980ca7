"""Deformation energy terms, built from autodiff primitives so the vertex
gradient comes from one backward pass."""

import numpy as np

from autodiff import ops
from autodiff.tensor import Tensor, as_tensor
from facesculpt.exceptions import BehindCameraError, FaceSculptError
from meshes.projection import MIN_W, camera_matrix


def _targets(l_z, count):
    points = getattr(l_z, "points", l_z)
    points = np.asarray(points, dtype=np.float64)
    if points.shape != (count, 2):
        raise FaceSculptError(f"Expected {count} target landmarks, got {points.shape}")
    return points


def project_rows(v, ids, proj):
    """Differentiable pixel positions of the vertices ``v[ids]``."""
    selected = ops.take_rows(as_tensor(v), ids)
    ones = Tensor(np.ones((selected.shape[0], 1), dtype=selected.dtype))
    clip = ops.matmul(ops.concat([selected, ones], axis=1), camera_matrix(proj).T)
    xy = ops.slice_cols(clip, 0, 2)
    if proj.is_affine:
        return xy
    w = ops.slice_cols(clip, 2, 3)
    bad = np.flatnonzero(w.value[:, 0] < MIN_W)
    if bad.size:
        raise BehindCameraError(
            f"{bad.size} landmark vertex(es) lie on or behind the camera plane (w < {MIN_W})",
            details={"vertices": np.asarray(ids)[bad][:20].tolist()},
        )
    return ops.div(xy, ops.concat([w, w], axis=1))


def loss_landmark(v, landmark_ids, proj, l_z):
    """Sum over landmarks of the Euclidean distance between projection and target."""
    landmark_ids = np.asarray(landmark_ids, dtype=np.int64)
    targets = _targets(l_z, landmark_ids.size)
    return ops.sum(ops.row_norms(ops.sub(project_rows(v, landmark_ids, proj), targets)))


def loss_laplacian(v, v_orig, laplacian):
    """Frobenius norm of the change in delta coordinates ``L·v − L·v_orig``."""
    reference = np.asarray(laplacian @ np.asarray(v_orig, dtype=np.float64))
    return ops.frobenius_norm(ops.sub(ops.linear_map(laplacian, as_tensor(v)), reference))


def deformation_energy(v, mesh, proj, l_z, laplacian, alpha):
    """``(total, landmark, laplacian)`` with ``total = landmark + alpha·laplacian``."""
    landmark = loss_landmark(v, mesh.landmark_ids, proj, l_z)
    smooth = loss_laplacian(v, mesh.vertices, laplacian)
    return ops.add(landmark, ops.scale(smooth, alpha)), landmark, smooth
