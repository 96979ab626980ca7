"""PCA, K-means and Fréchet distance over landmark coefficient vectors."""

import logging

import numpy as np

from facesculpt.exceptions import FaceSculptError, InsufficientSamplesError, RankError
from landmarks.models import ClusterModel, PcaModel

logger = logging.getLogger(__name__)


def fit_pca(samples, n_components=32):
    """Top ``n_components`` principal directions of the flattened landmark sets.

    Rows of the basis follow descending eigenvalue order, each flipped so its
    largest-magnitude entry is positive.
    """
    if len(samples) < n_components + 1:
        raise RankError(
            f"PCA with {n_components} components needs at least {n_components + 1} samples, "
            f"got {len(samples)}",
            details={"samples": len(samples), "components": n_components},
        )
    data = np.stack([sample.flatten() for sample in samples])
    mean = data.mean(axis=0)
    centered = data - mean
    covariance = centered.T @ centered / (data.shape[0] - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(covariance)
    order = np.argsort(eigenvalues)[::-1][:n_components]
    variance = np.clip(eigenvalues[order], 0.0, None)
    basis = eigenvectors[:, order].T
    pivots = np.argmax(np.abs(basis), axis=1)
    signs = np.sign(basis[np.arange(basis.shape[0]), pivots])
    basis = basis * signs[:, None]
    total = np.clip(eigenvalues, 0.0, None).sum()
    logger.info(
        "pca_fitted samples=%d components=%d retained_variance=%.4f",
        data.shape[0],
        n_components,
        variance.sum() / total if total > 0 else 1.0,
    )
    return PcaModel(mean=mean, basis=basis, explained_variance=variance)


def _kmeans_plus_plus(data, k, rng):
    n = data.shape[0]
    chosen = [int(rng.integers(n))]
    closest = np.sum((data - data[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            raise InsufficientSamplesError(f"Fewer than {k} distinct samples for k-means")
        index = int(rng.choice(n, p=closest / total))
        chosen.append(index)
        closest = np.minimum(closest, np.sum((data - data[index]) ** 2, axis=1))
    return data[chosen].copy()


def _assign(data, centroids):
    distances = np.sum((data[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
    labels = np.argmin(distances, axis=1)
    return labels, float(distances[np.arange(data.shape[0]), labels].sum())


def fit_kmeans(coeffs, k=25, seed=0, max_iter=300):
    """Lloyd iterations from a seeded k-means++ start.

    Stops at the assignment fixpoint or after ``max_iter`` updates.
    """
    data = np.asarray(coeffs, dtype=np.float64)
    if data.shape[0] < k:
        raise InsufficientSamplesError(
            f"k-means with k={k} needs at least {k} samples, got {data.shape[0]}",
            details={"samples": data.shape[0], "k": k},
        )
    rng = np.random.default_rng(seed)
    centroids = _kmeans_plus_plus(data, k, rng)
    labels, inertia = _assign(data, centroids)
    iterations = 0
    for iterations in range(1, max_iter + 1):
        for j in range(k):
            members = data[labels == j]
            if members.shape[0]:
                centroids[j] = members.mean(axis=0)
        new_labels, new_inertia = _assign(data, centroids)
        if new_inertia > inertia + 1e-9 * max(1.0, inertia):
            raise FaceSculptError(
                "k-means inertia increased",
                details={"iteration": iterations, "before": inertia, "after": new_inertia},
            )
        inertia = new_inertia
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    logger.info("kmeans_fitted k=%d samples=%d iterations=%d inertia=%.6g", k, data.shape[0], iterations, inertia)
    return ClusterModel(centroids=centroids, seed=seed, inertia=inertia)


def assign_class(cluster, coeffs):
    return cluster.assign(coeffs)


def _symmetric_sqrt(matrix):
    eigenvalues, eigenvectors = np.linalg.eigh((matrix + matrix.T) / 2.0)
    return (eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))) @ eigenvectors.T


def compute_fid(a, b):
    """Fréchet distance between Gaussians fitted to two coefficient sets."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    dim = a.shape[1]
    for name, sample in (("a", a), ("b", b)):
        if sample.shape[0] < dim + 1:
            raise InsufficientSamplesError(
                f"FID needs at least {dim + 1} samples per set at dimension {dim}; "
                f"set {name} has {sample.shape[0]}",
                details={"set": name, "samples": sample.shape[0], "dimension": dim},
            )
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.cov(a, rowvar=False)
    cov_b = np.cov(b, rowvar=False)
    root_a = _symmetric_sqrt(cov_a)
    inner = root_a @ cov_b @ root_a
    eigenvalues = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    trace_root = np.sum(np.sqrt(np.clip(eigenvalues, 0.0, None)))
    fid = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_root)
    return max(fid, 0.0)
