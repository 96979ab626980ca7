"""Triangle meshes and camera projections."""

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from facesculpt.exceptions import FaceSculptError

AFFINE_LAST_ROW = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True)
class TriMesh:
    vertices: np.ndarray
    faces: np.ndarray
    uvs: np.ndarray
    landmark_ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        uvs = np.array(self.uvs, dtype=np.float64).reshape(-1, 2)
        landmark_ids = np.array(self.landmark_ids, dtype=np.int64).reshape(-1)
        n = vertices.shape[0]
        if uvs.shape[0] != n:
            raise FaceSculptError(f"Mesh has {n} vertices but {uvs.shape[0]} texture coordinates")
        if not np.all(np.isfinite(vertices)) or not np.all(np.isfinite(uvs)):
            raise FaceSculptError("Mesh coordinates must be finite")
        if faces.size and (faces.min() < 0 or faces.max() >= n):
            raise FaceSculptError("Face references a vertex index out of range")
        degenerate = (faces[:, 0] == faces[:, 1]) | (faces[:, 1] == faces[:, 2]) | (faces[:, 0] == faces[:, 2])
        if np.any(degenerate):
            raise FaceSculptError(
                "Mesh contains degenerate faces", details={"faces": np.flatnonzero(degenerate).tolist()[:20]}
            )
        if landmark_ids.size:
            if landmark_ids.min() < 0 or landmark_ids.max() >= n:
                raise FaceSculptError("Landmark vertex index out of range")
            if np.unique(landmark_ids).size != landmark_ids.size:
                raise FaceSculptError("Landmark vertex indices must be distinct")
        for name, value in (("vertices", vertices), ("faces", faces), ("uvs", uvs), ("landmark_ids", landmark_ids)):
            value.setflags(write=False)
            object.__setattr__(self, name, value)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_faces(self):
        return self.faces.shape[0]

    def centroid(self):
        return self.vertices.mean(axis=0)

    def bounding_box_diagonal(self):
        if not self.n_vertices:
            return 0.0
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def with_vertices(self, vertices):
        """Same topology, UVs and landmark ids with new vertex positions."""
        vertices = np.asarray(vertices, dtype=np.float64)
        if vertices.shape != self.vertices.shape:
            raise FaceSculptError(f"Expected vertices of shape {self.vertices.shape}, got {vertices.shape}")
        return replace(self, vertices=vertices)


@dataclass(frozen=True)
class Projection:
    """A 3 x 4 camera matrix applied after rotating about ``center``.

    ``azimuth`` turns about the vertical axis and ``elevation`` about the
    horizontal one, both in degrees. ``image_size`` is the square pixel frame
    the matrix maps into.
    """

    base: np.ndarray
    azimuth: float = 0.0
    elevation: float = 0.0
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    image_size: int = 256

    def __post_init__(self):
        base = np.asarray(self.base, dtype=np.float64)
        if base.shape == (12,):
            base = base.reshape(3, 4)
        if base.shape != (3, 4) or not np.all(np.isfinite(base)):
            raise FaceSculptError(f"Projection matrix must be a finite 3 x 4 matrix, got {base.shape}")
        if np.linalg.matrix_rank(base) < 3:
            raise FaceSculptError("Projection matrix must have rank 3")
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        if int(self.image_size) < 1:
            raise FaceSculptError("Projection image size must be positive")
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "azimuth", float(self.azimuth))
        object.__setattr__(self, "elevation", float(self.elevation))
        object.__setattr__(self, "image_size", int(self.image_size))

    @classmethod
    def orthographic(cls, scale, offset=(0.0, 0.0), image_size=256, **kwargs):
        """Image x = scale·x + ox, image y = oy − scale·y (pixel rows grow downwards)."""
        ox, oy = offset
        base = np.array([[scale, 0.0, 0.0, ox], [0.0, -scale, 0.0, oy], [0.0, 0.0, 0.0, 1.0]])
        return cls(base, image_size=image_size, **kwargs)

    @classmethod
    def perspective(cls, focal, distance, principal=None, image_size=256, **kwargs):
        """Pinhole camera at ``z = distance`` looking down −z."""
        cx, cy = principal if principal is not None else (image_size / 2.0, image_size / 2.0)
        base = np.array(
            [
                [focal, 0.0, -cx, cx * distance],
                [0.0, -focal, -cy, cy * distance],
                [0.0, 0.0, -1.0, distance],
            ]
        )
        return cls(base, image_size=image_size, **kwargs)

    @property
    def is_affine(self):
        return bool(np.array_equal(self.base[2], AFFINE_LAST_ROW))

    def with_view(self, azimuth, elevation):
        return replace(self, azimuth=azimuth, elevation=elevation)

    def centered_on(self, mesh):
        return replace(self, center=mesh.centroid())

    def as_dict(self):
        return {
            "base": self.base.reshape(-1).tolist(),
            "azimuth": self.azimuth,
            "elevation": self.elevation,
            "center": self.center.tolist(),
            "image_size": self.image_size,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                base=data["base"],
                azimuth=data.get("azimuth", 0.0),
                elevation=data.get("elevation", 0.0),
                center=data.get("center", (0.0, 0.0, 0.0)),
                image_size=data.get("image_size", 256),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FaceSculptError(f"Invalid projection document: {exc}") from exc

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.as_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path):
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, ValueError) as exc:
            raise FaceSculptError(f"Cannot read projection {path}: {exc}") from exc
        return cls.from_dict(data)
