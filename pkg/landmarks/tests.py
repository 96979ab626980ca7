import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from facesculpt.exceptions import (
    DegenerateAnchorError,
    InsufficientSamplesError,
    InvalidLandmarksError,
    RankError,
)
from landmarks.alignment import align_to_average, average_face, normalize_landmarks
from landmarks.io import read_landmarks, write_landmarks
from landmarks.models import LEFT_EYE, MOUTH, RIGHT_EYE, AlignmentTransform, ClusterModel, LandmarkSet, PcaModel
from landmarks.statistics import assign_class, compute_fid, fit_kmeans, fit_pca


def random_landmarks(rng, scale=50.0):
    return LandmarkSet(rng.normal(size=(68, 2)) * scale + 128.0)


class LandmarkSetTests(SimpleTestCase):
    def test_rejects_wrong_shape(self):
        with self.assertRaises(InvalidLandmarksError):
            LandmarkSet(np.zeros((67, 2)))

    def test_rejects_non_finite(self):
        points = np.zeros((68, 2))
        points[3, 1] = np.nan
        with self.assertRaises(InvalidLandmarksError):
            LandmarkSet(points)

    def test_csv_round_trip(self):
        landmarks = random_landmarks(np.random.default_rng(0))
        with tempfile.TemporaryDirectory() as tmp:
            path = write_landmarks(landmarks, Path(tmp) / "face.csv")
            loaded = read_landmarks(path)
        np.testing.assert_array_equal(loaded.points, landmarks.points)

    def test_csv_with_missing_rows(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "short.csv"
            path.write_text("1,2\n3,4\n")
            with self.assertRaises(InvalidLandmarksError):
                read_landmarks(path)


class AlignmentTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.average = random_landmarks(self.rng)

    def test_identity_on_average(self):
        aligned, transform = align_to_average(self.average, self.average)
        np.testing.assert_allclose(transform.matrix, AlignmentTransform.identity().matrix, atol=1e-12)
        np.testing.assert_allclose(aligned.points, self.average.points, atol=1e-9)

    def test_translation_is_undone(self):
        shifted = LandmarkSet(self.average.points + np.array([5.0, 3.0]))
        aligned, transform = align_to_average(shifted, self.average)
        np.testing.assert_allclose(transform.translation, [-5.0, -3.0], atol=1e-9)
        np.testing.assert_allclose(aligned.points, self.average.points, atol=1e-9)

    def test_random_affine_is_inverted(self):
        for _ in range(10):
            linear = self.rng.normal(size=(2, 2)) + 2.0 * np.eye(2)
            warp = AlignmentTransform(np.hstack([linear, self.rng.normal(size=(2, 1)) * 10.0]))
            warped = LandmarkSet(warp.apply(self.average.points))
            _, transform = align_to_average(warped, self.average)
            anchors = self.average.anchors()
            np.testing.assert_allclose(transform.compose(warp).apply(anchors), anchors, atol=1e-9)

    def test_alignment_is_idempotent(self):
        sample = random_landmarks(self.rng)
        once, _ = align_to_average(sample, self.average)
        twice, _ = align_to_average(once, self.average)
        np.testing.assert_allclose(twice.anchors(), self.average.anchors(), atol=1e-9)

    def test_collinear_anchors(self):
        points = self.rng.normal(size=(68, 2))
        points[LEFT_EYE] = [0.0, 0.0]
        points[RIGHT_EYE] = [1.0, 1.0]
        points[MOUTH] = [2.0, 2.0]
        with self.assertRaises(DegenerateAnchorError):
            align_to_average(LandmarkSet(points), self.average)

    def test_average_face_is_fixed_by_alignment(self):
        samples = [random_landmarks(self.rng) for _ in range(20)]
        mean = average_face(samples)
        aligned, _ = align_to_average(mean, mean)
        np.testing.assert_allclose(aligned.points, mean.points, atol=1e-9)

    def test_normalized_face_is_centred_with_unit_rms(self):
        face = normalize_landmarks(random_landmarks(self.rng))
        np.testing.assert_allclose(face.points.mean(axis=0), 0.0, atol=1e-12)
        self.assertAlmostEqual(np.mean(np.sum(face.points**2, axis=1)), 1.0, delta=1e-12)
        with self.assertRaises(DegenerateAnchorError):
            normalize_landmarks(LandmarkSet(np.ones((68, 2))))


class PcaTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def _low_rank_samples(self, n, rank, scale=1.0):
        base = self.rng.normal(size=136)
        directions = self.rng.normal(size=(rank, 136))
        weights = self.rng.normal(size=(n, rank)) * scale
        return [LandmarkSet.from_flat(base + w @ directions) for w in weights]

    def test_too_few_samples(self):
        with self.assertRaises(RankError):
            fit_pca([random_landmarks(self.rng) for _ in range(32)])

    def test_rank_two_data(self):
        pca = fit_pca(self._low_rank_samples(60, 2))
        self.assertGreater(pca.explained_variance[1], 1e-3)
        np.testing.assert_allclose(pca.explained_variance[2:], 0.0, atol=1e-10)

    def test_basis_is_orthonormal_and_signed(self):
        pca = fit_pca([random_landmarks(self.rng) for _ in range(80)])
        np.testing.assert_allclose(pca.basis @ pca.basis.T, np.eye(32), atol=1e-8)
        pivots = np.argmax(np.abs(pca.basis), axis=1)
        self.assertTrue(np.all(pca.basis[np.arange(32), pivots] > 0))
        self.assertTrue(np.all(np.diff(pca.explained_variance) <= 0))

    def test_lossless_for_low_dimensional_data(self):
        samples = self._low_rank_samples(100, 20)
        pca = fit_pca(samples)
        for sample in samples[:5]:
            np.testing.assert_allclose(pca.reconstruct(pca.project(sample)).points, sample.points, atol=1e-8)

    def test_variance_matches_dense_eigensolve(self):
        samples = [random_landmarks(self.rng, scale=1.0) for _ in range(200)]
        pca = fit_pca(samples)
        data = np.stack([s.flatten() for s in samples])
        oracle = np.sort(np.linalg.eigvalsh(np.cov(data, rowvar=False)))[::-1][:32]
        np.testing.assert_allclose(pca.explained_variance, oracle, rtol=1e-8)

    def test_projection(self):
        pca = fit_pca([random_landmarks(self.rng) for _ in range(50)])
        np.testing.assert_allclose(pca.project(LandmarkSet.from_flat(pca.mean)), 0.0, atol=1e-12)
        unit = pca.project(LandmarkSet.from_flat(pca.mean + pca.basis[0]))
        expected = np.zeros(32)
        expected[0] = 1.0
        np.testing.assert_allclose(unit, expected, atol=1e-10)
        sample = random_landmarks(self.rng)
        np.testing.assert_allclose(
            pca.project(sample), pca.basis @ (sample.flatten() - pca.mean), rtol=1e-12, atol=1e-12
        )

    def test_reconstruct_round_trip(self):
        pca = fit_pca([random_landmarks(self.rng) for _ in range(50)])
        np.testing.assert_allclose(pca.reconstruct(np.zeros(32)).flatten(), pca.mean)
        coeffs = self.rng.normal(size=32) * 10.0
        np.testing.assert_allclose(pca.project(pca.reconstruct(coeffs)), coeffs, atol=1e-10)

    def test_projection_is_the_best_reconstruction(self):
        pca = fit_pca([random_landmarks(self.rng) for _ in range(50)])
        held_out = random_landmarks(self.rng)
        best = np.linalg.norm(pca.reconstruct(pca.project(held_out)).flatten() - held_out.flatten())
        for _ in range(20):
            other = pca.project(held_out) + self.rng.normal(size=32) * 0.1
            residual = np.linalg.norm(pca.reconstruct(other).flatten() - held_out.flatten())
            self.assertLessEqual(best, residual)

    def test_bundle_round_trip(self):
        pca = fit_pca([random_landmarks(self.rng) for _ in range(40)])
        with tempfile.TemporaryDirectory() as tmp:
            pca.save(Path(tmp) / "pca")
            loaded = PcaModel.load(Path(tmp) / "pca")
        np.testing.assert_array_equal(loaded.basis, pca.basis)
        np.testing.assert_array_equal(loaded.mean, pca.mean)


class KMeansTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)

    def _blobs(self, k, per_blob=30, dim=4):
        centres = self.rng.normal(size=(k, dim)) * 100.0
        points = np.concatenate([c + self.rng.normal(size=(per_blob, dim)) for c in centres])
        truth = np.repeat(np.arange(k), per_blob)
        return points, truth

    def test_separated_blobs_are_pure(self):
        points, truth = self._blobs(5)
        cluster = fit_kmeans(points, k=5, seed=0)
        labels = cluster.assign_many(points)
        for blob in range(5):
            self.assertEqual(len(set(labels[truth == blob])), 1)
        self.assertEqual(len(set(labels)), 5)

    def test_one_centroid_per_sample(self):
        points = self.rng.normal(size=(12, 3))
        cluster = fit_kmeans(points, k=12, seed=4)
        self.assertEqual(cluster.inertia, 0.0)
        self.assertEqual(sorted(cluster.assign_many(points)), list(range(12)))

    def test_same_seed_same_labels(self):
        points, _ = self._blobs(4)
        first = fit_kmeans(points, k=4, seed=9).assign_many(points)
        second = fit_kmeans(points, k=4, seed=9).assign_many(points)
        np.testing.assert_array_equal(first, second)

    def test_too_few_samples(self):
        with self.assertRaises(InsufficientSamplesError):
            fit_kmeans(self.rng.normal(size=(3, 2)), k=4)

    def test_assignment_rules(self):
        centroids = np.zeros((10, 2))
        centroids[:, 0] = np.arange(10) * 10.0
        centroids[2] = [-1.0, 500.0]
        centroids[9] = [1.0, 500.0]
        cluster = ClusterModel(centroids)
        self.assertEqual(assign_class(cluster, centroids[7]), 7)
        self.assertEqual(assign_class(cluster, np.array([0.0, 500.0])), 2)
        for _ in range(20):
            c = self.rng.normal(size=2) * 30.0
            brute = min(range(10), key=lambda j: (np.sum((c - centroids[j]) ** 2), j))
            self.assertEqual(assign_class(cluster, c), brute)


class FidTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)

    def test_identical_sets(self):
        sample = self.rng.normal(size=(100, 32))
        self.assertLess(compute_fid(sample, sample), 1e-8)

    def test_shifted_unit_gaussians(self):
        a = self.rng.normal(size=(20000, 2))
        b = self.rng.normal(size=(20000, 2)) + np.array([3.0, 4.0])
        self.assertAlmostEqual(compute_fid(a, b), 25.0, delta=0.5)

    def test_symmetry(self):
        a = self.rng.normal(size=(60, 5))
        b = self.rng.normal(size=(70, 5)) * 2.0 + 1.0
        self.assertLess(abs(compute_fid(a, b) - compute_fid(b, a)), 1e-8)

    def test_matches_direct_formula(self):
        import scipy.linalg

        a = self.rng.normal(size=(50, 4))
        b = self.rng.normal(size=(50, 4)) @ self.rng.normal(size=(4, 4)) + 0.5
        cov_a, cov_b = np.cov(a, rowvar=False), np.cov(b, rowvar=False)
        oracle = np.sum((a.mean(0) - b.mean(0)) ** 2) + np.trace(
            cov_a + cov_b - 2.0 * np.real(scipy.linalg.sqrtm(cov_a @ cov_b))
        )
        self.assertAlmostEqual(compute_fid(a, b), oracle, delta=1e-6)

    def test_too_few_samples(self):
        with self.assertRaises(InsufficientSamplesError):
            compute_fid(self.rng.normal(size=(32, 32)), self.rng.normal(size=(40, 32)))
