"""Camera projection with a view rotation about a fixed centre.

The view rotation and the base matrix fold into one 3 x 4 matrix, so the
projection stays a homogeneous linear map of the vertex coordinates.
"""

import numpy as np

from facesculpt.exceptions import BehindCameraError

MIN_W = 1e-12


def view_rotation(azimuth, elevation):
    """Yaw about +y by ``azimuth`` followed by pitch about +x by ``elevation`` (degrees)."""
    a, e = np.deg2rad(azimuth), np.deg2rad(elevation)
    yaw = np.array([[np.cos(a), 0.0, np.sin(a)], [0.0, 1.0, 0.0], [-np.sin(a), 0.0, np.cos(a)]])
    pitch = np.array([[1.0, 0.0, 0.0], [0.0, np.cos(e), -np.sin(e)], [0.0, np.sin(e), np.cos(e)]])
    return pitch @ yaw


def view_transform(proj):
    """4 x 4 rigid transform rotating about ``proj.center``."""
    rotation = view_rotation(proj.azimuth, proj.elevation)
    transform = np.eye(4)
    transform[:3, :3] = rotation
    transform[:3, 3] = proj.center - rotation @ proj.center
    return transform


def camera_matrix(proj):
    """The combined 3 x 4 matrix ``P · T_view``."""
    return proj.base @ view_transform(proj)


def affine_matrix(proj):
    """2 x 4 map from homogeneous vertices to pixels; only valid for affine ``P``."""
    return camera_matrix(proj)[:2]


def homogeneous(points):
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return np.hstack([points, np.ones((points.shape[0], 1))])


def project_points(points, proj):
    """Pixel coordinates (n x 2) and z-buffer depth (n) of ``points``.

    Depth is ``w`` for a perspective matrix and ``−z`` of the rotated point for
    an affine one; smaller is nearer in both cases.
    """
    points_h = homogeneous(points)
    clip = points_h @ camera_matrix(proj).T
    if proj.is_affine:
        rotated = points_h @ view_transform(proj)[:3].T
        return clip[:, :2], -rotated[:, 2]
    w = clip[:, 2]
    bad = np.flatnonzero(w < MIN_W)
    if bad.size:
        raise BehindCameraError(
            f"{bad.size} point(s) lie on or behind the camera plane (w < {MIN_W})",
            details={"points": bad[:20].tolist()},
        )
    return clip[:, :2] / w[:, None], w


def project(v, proj):
    """Project a single 3-vector to its 2-D image position."""
    xy, _ = project_points(np.asarray(v, dtype=np.float64).reshape(1, 3), proj)
    return xy[0]
