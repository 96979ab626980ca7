import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from autodiff.checks import grad_check
from deformation.energy import deformation_energy, loss_landmark, loss_laplacian
from deformation.solver import (
    DeformConfig,
    StiffnessPreconditioner,
    _check_window,
    deform,
    direct_system,
    run_deformation,
    solve_direct,
)
from facesculpt.exceptions import DivergenceError, FaceSculptError, RankError
from meshes.laplacian import graph_laplacian
from meshes.models import Projection, TriMesh
from meshes.projection import project_points, view_transform

LANDMARKS = [0, 4, 8, 13, 20, 27, 31, 40, 44, 52, 63, 71]


def jittered_grid(rows=8, cols=9, seed=0, landmark_ids=LANDMARKS):
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:rows, 0:cols]
    vertices = np.column_stack([xs.ravel(), ys.ravel(), rng.normal(size=xs.size) * 0.2]).astype(float)
    vertices[:, :2] += rng.normal(size=(xs.size, 2)) * 0.05
    uvs = np.column_stack([xs.ravel() / (cols - 1), ys.ravel() / (rows - 1)])
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            faces.extend([[a, a + 1, a + cols + 1], [a, a + cols + 1, a + cols]])
    return TriMesh(vertices, faces, uvs, landmark_ids=landmark_ids)


def landmark_projections(mesh, proj, vertices=None):
    vertices = mesh.vertices if vertices is None else vertices
    xy, _ = project_points(vertices[mesh.landmark_ids], proj)
    return xy


def rms(a, b):
    return np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1)))


def window_means(totals, window=50):
    totals = np.asarray(totals, dtype=float)
    complete = totals[: totals.size // window * window]
    return complete.reshape(-1, window).mean(axis=1)


class EnergyTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        self.mesh = jittered_grid()
        self.ortho = Projection.orthographic(1.0)
        self.persp = Projection.perspective(40.0, 30.0, center=self.mesh.centroid(), azimuth=10.0, elevation=5.0)

    def test_landmark_loss_vanishes_on_own_projections(self):
        for proj in (self.ortho, self.persp):
            targets = landmark_projections(self.mesh, proj)
            self.assertAlmostEqual(
                loss_landmark(self.mesh.vertices, self.mesh.landmark_ids, proj, targets).item(), 0.0, places=12
            )

    def test_landmark_loss_three_four_five(self):
        targets = landmark_projections(self.mesh, self.ortho)
        targets[3] += [3.0, 4.0]
        loss = loss_landmark(self.mesh.vertices, self.mesh.landmark_ids, self.ortho, targets)
        self.assertAlmostEqual(loss.item(), 5.0, delta=1e-12)

    def test_landmark_loss_matches_loop(self):
        targets = self.rng.normal(size=(len(LANDMARKS), 2)) * 10.0
        v = self.mesh.vertices + self.rng.normal(size=self.mesh.vertices.shape) * 0.1
        matrix = self.persp.base @ view_transform(self.persp)
        expected = 0.0
        for i, vid in enumerate(LANDMARKS):
            h = matrix @ np.append(v[vid], 1.0)
            expected += np.hypot(*(h[:2] / h[2] - targets[i]))
        loss = loss_landmark(v, self.mesh.landmark_ids, self.persp, targets)
        self.assertAlmostEqual(loss.item(), expected, delta=1e-12 * max(1.0, expected))

    def test_laplacian_loss(self):
        L = graph_laplacian(self.mesh)
        v0 = self.mesh.vertices
        self.assertEqual(loss_laplacian(v0, v0, L).item(), 0.0)
        self.assertLess(loss_laplacian(v0 + np.array([3.0, -2.0, 7.0]), v0, L).item(), 1e-10)
        v = v0 + self.rng.normal(size=v0.shape)
        dense = L.toarray()
        expected = np.linalg.norm(dense @ v - dense @ v0)
        self.assertAlmostEqual(loss_laplacian(v, v0, L).item(), expected, delta=1e-10)

    def test_total_energy_gradient(self):
        L = graph_laplacian(self.mesh)
        targets = landmark_projections(self.mesh, self.persp) + self.rng.normal(size=(len(LANDMARKS), 2)) * 3.0
        v = self.mesh.vertices + self.rng.normal(size=self.mesh.vertices.shape) * 0.05
        error = grad_check(lambda x: deformation_energy(x, self.mesh, self.persp, targets, L, 0.7)[0], v)
        self.assertLess(error, 1e-5)


class DeformTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.mesh = jittered_grid()
        self.proj = Projection.orthographic(10.0, offset=(20.0, 100.0))

    def test_current_projections_leave_mesh_unchanged(self):
        targets = landmark_projections(self.mesh, self.proj)
        result = run_deformation(self.mesh, targets, self.proj)
        np.testing.assert_array_equal(result.vertices, self.mesh.vertices)
        self.assertTrue(result.converged)

    def test_no_smoothness_moves_only_landmarks(self):
        targets = landmark_projections(self.mesh, self.proj) + self.rng.uniform(-2.0, 2.0, size=(len(LANDMARKS), 2))
        with tempfile.TemporaryDirectory() as tmp:
            log = Path(tmp) / "energy.csv"
            result = run_deformation(self.mesh, targets, self.proj, DeformConfig(alpha=0.0), energy_log=log)
            frame = pd.read_csv(log)
        free = np.setdiff1d(np.arange(self.mesh.n_vertices), LANDMARKS)
        np.testing.assert_array_equal(result.vertices[free], self.mesh.vertices[free])
        np.testing.assert_array_equal(result.vertices[:, 2], self.mesh.vertices[:, 2])
        errors = np.linalg.norm(landmark_projections(self.mesh, self.proj, result.vertices) - targets, axis=1)
        self.assertLess(errors.max(), 1e-6)
        self.assertTrue(result.converged)
        self.assertLessEqual(result.final_energy, result.initial_energy)
        self.assertEqual(list(frame.columns), ["iteration", "landmark", "laplacian", "total"])
        self.assertTrue(np.all(np.diff(window_means(frame["total"])) <= 0.0))

    def test_rigid_shift_matches_direct_solution(self):
        shift = np.array([0.2, -0.15, 0.0])
        targets = landmark_projections(self.mesh, self.proj, self.mesh.vertices + shift)
        adam = deform(self.mesh, targets, self.proj, DeformConfig(alpha=1.0))
        direct = solve_direct(self.mesh, targets, self.proj, 1.0)
        np.testing.assert_allclose(direct, self.mesh.vertices + shift, atol=1e-6)
        self.assertLess(rms(adam, direct), 1e-3 * self.mesh.bounding_box_diagonal())

    def test_consecutive_rises_are_reported(self):
        targets = landmark_projections(self.mesh, self.proj) + self.rng.uniform(-2.0, 2.0, size=(len(LANDMARKS), 2))
        with self.assertRaises(DivergenceError) as caught:
            deform(self.mesh, targets, self.proj, DeformConfig(alpha=0.0, divergence_patience=1))
        self.assertGreater(caught.exception.details["energy"], caught.exception.details["best"])

    def test_rising_window_mean_is_rejected(self):
        with self.assertRaises(DivergenceError) as caught:
            _check_window([{"total": 1.0}] * 50 + [{"total": 1.5}] * 50)
        self.assertEqual(caught.exception.details["iteration"], 99)
        _check_window([{"total": 1.5}] * 50 + [{"total": 1.0}] * 50)
        _check_window([{"total": 1.0}] * 50 + [{"total": 1.5}] * 49)

    def test_config_validation(self):
        with self.assertRaises(FaceSculptError):
            DeformConfig(alpha=-1.0)
        with self.assertRaises(FaceSculptError):
            DeformConfig(lr=0.0)
        with self.assertRaises(FaceSculptError):
            DeformConfig(lr_decay=1.0)
        with self.assertRaises(FaceSculptError):
            DeformConfig(plateau_patience=0)


class StiffDeformTests(SimpleTestCase):
    """Adam at the shipped stiffness on a 500-vertex grid with 68 landmarks."""

    def setUp(self):
        self.rng = np.random.default_rng(6)
        self.mesh = jittered_grid(rows=20, cols=25, landmark_ids=np.linspace(0, 499, 68).round().astype(int))
        self.proj = Projection.orthographic(10.0, offset=(20.0, 100.0))
        self.shift = np.array([0.3, -0.2, 0.0])

    def test_rigid_shift_matches_direct_solution(self):
        targets = landmark_projections(self.mesh, self.proj, self.mesh.vertices + self.shift)
        result = run_deformation(self.mesh, targets, self.proj, DeformConfig(alpha=1e7))
        direct = solve_direct(self.mesh, targets, self.proj, 1e7)
        diagonal = self.mesh.bounding_box_diagonal()
        self.assertLess(rms(result.vertices, direct), 1e-3 * diagonal)
        self.assertLess(rms(result.vertices, self.mesh.vertices + self.shift), 1e-3 * diagonal)
        self.assertLess(result.final_energy, 1e-3 * result.initial_energy)
        self.assertTrue(np.all(np.diff(window_means([entry["total"] for entry in result.energies])) <= 0.0))

    def test_noisy_targets_lower_the_energy_and_move_the_mesh(self):
        targets = landmark_projections(self.mesh, self.proj, self.mesh.vertices + self.shift)
        targets = targets + self.rng.normal(size=targets.shape) * 0.5
        result = run_deformation(self.mesh, targets, self.proj, DeformConfig(alpha=1e7))
        self.assertLess(result.final_energy, 0.5 * result.initial_energy)
        self.assertGreater(result.best_iteration, 0)
        self.assertGreater(np.abs(result.vertices - self.mesh.vertices).max(), 0.1)

    def test_very_stiff_mesh_barely_moves(self):
        targets = landmark_projections(self.mesh, self.proj) + self.rng.normal(size=(68, 2)) * 0.005
        v = deform(self.mesh, targets, self.proj, DeformConfig(alpha=1e12))
        self.assertLess(np.abs(v - self.mesh.vertices).max(), 1e-3)

    def test_preconditioner_keeps_translations_and_is_symmetric(self):
        laplacian = graph_laplacian(self.mesh)
        translation = np.tile([0.5, -1.0, 2.0], (self.mesh.n_vertices, 1))
        np.testing.assert_allclose(StiffnessPreconditioner(laplacian, 1e7)(translation), translation, rtol=1e-6)
        precondition = StiffnessPreconditioner(laplacian, 10.0)
        a, b = self.rng.normal(size=(2, self.mesh.n_vertices, 3))
        self.assertAlmostEqual(np.sum(a * precondition(b)), np.sum(b * precondition(a)), delta=1e-9)
        self.assertLess(np.linalg.norm(laplacian @ precondition(a)), np.linalg.norm(laplacian @ a))
        identity = StiffnessPreconditioner(graph_laplacian(self.mesh), 0.0)
        np.testing.assert_array_equal(identity(a), a)


class DirectSolveTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)
        self.mesh = jittered_grid()
        self.proj = Projection.orthographic(10.0, offset=(20.0, 100.0), center=self.mesh.centroid(), azimuth=15.0)

    def test_no_smoothness_hits_every_target(self):
        targets = landmark_projections(self.mesh, self.proj) + self.rng.normal(size=(len(LANDMARKS), 2))
        v = solve_direct(self.mesh, targets, self.proj, 0.0)
        np.testing.assert_allclose(landmark_projections(self.mesh, self.proj, v), targets, atol=1e-6)
        free = np.setdiff1d(np.arange(self.mesh.n_vertices), LANDMARKS)
        np.testing.assert_allclose(v[free], self.mesh.vertices[free], atol=1e-12)

    def test_matches_dense_least_squares(self):
        targets = landmark_projections(self.mesh, self.proj) + self.rng.normal(size=(len(LANDMARKS), 2))
        system, rhs = direct_system(self.mesh, targets, self.proj, 10.0)
        delta = np.linalg.lstsq(system.toarray(), rhs, rcond=None)[0]
        v = solve_direct(self.mesh, targets, self.proj, 10.0)
        np.testing.assert_allclose(v, self.mesh.vertices + delta.reshape(-1, 3), atol=1e-6)

    def test_stiff_mesh_barely_moves(self):
        targets = landmark_projections(self.mesh, self.proj) + self.rng.normal(size=(len(LANDMARKS), 2)) * 0.005
        v = solve_direct(self.mesh, targets, self.proj, 1e12)
        self.assertLess(np.abs(v - self.mesh.vertices).max(), 1e-3)

    def test_rejects_perspective_and_unanchored_parts(self):
        targets = landmark_projections(self.mesh, self.proj)
        with self.assertRaises(FaceSculptError):
            solve_direct(self.mesh, targets, Projection.perspective(40.0, 30.0), 1.0)
        two = TriMesh(
            np.vstack([np.eye(3), np.eye(3) + 5.0]),
            [[0, 1, 2], [3, 4, 5]],
            np.zeros((6, 2)),
            landmark_ids=[0, 1],
        )
        with self.assertRaises(RankError):
            solve_direct(two, np.zeros((2, 2)), Projection.orthographic(1.0), 1.0)
