"""Landmark-space types: landmark sets, alignment transforms, PCA and cluster models."""

from dataclasses import dataclass, field

import numpy as np

from facesculpt.exceptions import DegenerateAnchorError, FaceSculptError, InvalidLandmarksError
from facesculpt.storage import load_bundle, save_bundle

N_LANDMARKS = 68

# iBUG-68 index ranges of the alignment anchors.
LEFT_EYE = np.arange(36, 42)
RIGHT_EYE = np.arange(42, 48)
MOUTH = np.arange(48, 68)


@dataclass(frozen=True)
class LandmarkSet:
    points: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        if points.shape != (N_LANDMARKS, 2):
            raise InvalidLandmarksError(
                f"Expected {N_LANDMARKS} x 2 landmark coordinates, got {points.shape}",
                details={"shape": list(points.shape)},
            )
        if not np.all(np.isfinite(points)):
            raise InvalidLandmarksError("Landmark coordinates must be finite")
        object.__setattr__(self, "points", points)

    @classmethod
    def from_flat(cls, vector):
        return cls(np.asarray(vector, dtype=np.float64).reshape(N_LANDMARKS, 2))

    def flatten(self):
        return self.points.reshape(-1).copy()

    def anchors(self):
        """Left-eye centre, right-eye centre and mouth centre."""
        return np.stack(
            [
                self.points[LEFT_EYE].mean(axis=0),
                self.points[RIGHT_EYE].mean(axis=0),
                self.points[MOUTH].mean(axis=0),
            ]
        )


@dataclass(frozen=True)
class AlignmentTransform:
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.float64)
        if matrix.shape != (2, 3):
            raise DegenerateAnchorError(f"Affine transform must be 2 x 3, got {matrix.shape}")
        if abs(np.linalg.det(matrix[:, :2])) <= 1e-12:
            raise DegenerateAnchorError("Affine transform is not invertible")
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def identity(cls):
        return cls(np.hstack([np.eye(2), np.zeros((2, 1))]))

    @property
    def linear(self):
        return self.matrix[:, :2]

    @property
    def translation(self):
        return self.matrix[:, 2]

    def apply(self, points):
        points = np.asarray(points, dtype=np.float64)
        return points @ self.linear.T + self.translation

    def compose(self, other):
        """``self ∘ other``: apply ``other`` first."""
        linear = self.linear @ other.linear
        translation = self.linear @ other.translation + self.translation
        return AlignmentTransform(np.hstack([linear, translation[:, None]]))

    def inverse(self):
        inv = np.linalg.inv(self.linear)
        return AlignmentTransform(np.hstack([inv, (-inv @ self.translation)[:, None]]))


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    basis: np.ndarray
    explained_variance: np.ndarray

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=np.float64)
        gram = basis @ basis.T
        if not np.allclose(gram, np.eye(basis.shape[0]), atol=1e-8):
            raise FaceSculptError("PCA basis rows are not orthonormal")
        variance = np.asarray(self.explained_variance, dtype=np.float64)
        if np.any(variance < 0) or np.any(np.diff(variance) > 0):
            raise FaceSculptError("Explained variance must be non-negative and non-increasing")
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "explained_variance", variance)

    @property
    def n_components(self):
        return self.basis.shape[0]

    def project(self, landmarks):
        return self.basis @ (landmarks.flatten() - self.mean)

    def project_many(self, samples):
        flat = np.stack([s.flatten() for s in samples])
        return (flat - self.mean) @ self.basis.T

    def reconstruct(self, coeffs):
        return LandmarkSet.from_flat(self.mean + self.basis.T @ np.asarray(coeffs, dtype=np.float64))

    def save(self, stem):
        return save_bundle(
            stem,
            {"mean": self.mean, "basis": self.basis, "explained_variance": self.explained_variance},
            {"kind": "pca", "n_components": self.n_components},
        )

    @classmethod
    def load(cls, stem):
        arrays, _ = load_bundle(stem)
        return cls(arrays["mean"], arrays["basis"], arrays["explained_variance"])


@dataclass(frozen=True)
class ClusterModel:
    centroids: np.ndarray
    seed: int = 0
    inertia: float = field(default=0.0, compare=False)

    def __post_init__(self):
        centroids = np.asarray(self.centroids, dtype=np.float64)
        if centroids.ndim != 2 or centroids.shape[0] < 1:
            raise FaceSculptError(f"Centroids must be a k x d matrix, got {centroids.shape}")
        if np.unique(centroids, axis=0).shape[0] != centroids.shape[0]:
            raise FaceSculptError("Two centroids are identical")
        object.__setattr__(self, "centroids", centroids)

    @property
    def k(self):
        return self.centroids.shape[0]

    def assign(self, coeffs):
        """Nearest centroid of one coefficient vector (ties to the lowest index)."""
        return int(self.assign_many(np.asarray(coeffs)[None, :])[0])

    def assign_many(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=np.float64)
        distances = np.sum((coeffs[:, None, :] - self.centroids[None, :, :]) ** 2, axis=2)
        return np.argmin(distances, axis=1)

    def save(self, stem):
        return save_bundle(
            stem,
            {"centroids": self.centroids},
            {"kind": "kmeans", "seed": self.seed, "inertia": self.inertia, "k": self.k},
        )

    @classmethod
    def load(cls, stem):
        arrays, metadata = load_bundle(stem)
        return cls(arrays["centroids"], seed=metadata.get("seed", 0), inertia=metadata.get("inertia", 0.0))
