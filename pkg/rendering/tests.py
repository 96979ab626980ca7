import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from facesculpt.exceptions import EmptyMeshError
from meshes.models import Projection, TriMesh
from meshes.projection import project_points
from rendering.images import read_image, write_image
from rendering.rasterizer import perspective_correct, rasterize, render, render_backward
from rendering.views import contact_sheet, render_views, sample_view

RED = np.array([1.0, 0.0, 0.0])
BLUE = np.array([0.0, 0.0, 1.0])


def pixel_projection(size=16):
    """Maps model x, y straight to pixel coordinates; depth is −z."""
    return Projection(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 0, 1.0]]), image_size=size)


def quad(x0, y0, x1, y1, z=0.0):
    vertices = [[x0, y0, z], [x1, y0, z], [x1, y1, z], [x0, y1, z]]
    uvs = [[0.0, 1.0], [1.0, 1.0], [1.0, 0.0], [0.0, 0.0]]
    return TriMesh(vertices, [[0, 1, 2], [0, 2, 3]], uvs)


def tilted_quad():
    mesh = quad(-1.0, -1.0, 1.0, 1.0)
    proj = Projection.perspective(24.0, 4.0, image_size=16, azimuth=25.0, elevation=-10.0)
    return mesh, proj


class CoverageTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_screen_filling_quad_is_exactly_red(self):
        view = render(quad(-1.0, -1.0, 17.0, 17.0), np.tile(RED, (4, 4, 1)), pixel_projection())
        self.assertTrue(view.covered.all())
        np.testing.assert_array_equal(view.image, np.tile(RED, (16, 16, 1)))

    def test_coverage_matches_half_plane_oracle(self):
        centres = np.stack(np.meshgrid(np.arange(16) + 0.5, np.arange(16) + 0.5), axis=-1)
        for _ in range(5):
            corners = self.rng.uniform(-2.0, 18.0, size=(3, 2))
            mesh = TriMesh(np.column_stack([corners, np.zeros(3)]), [[0, 1, 2]], np.zeros((3, 2)))
            raster = rasterize(mesh, pixel_projection(), 16)
            signs = []
            for i in range(3):
                a, b = corners[i], corners[(i + 1) % 3]
                signs.append((b[0] - a[0]) * (centres[..., 1] - a[1]) - (b[1] - a[1]) * (centres[..., 0] - a[0]))
            signs = np.stack(signs)
            oracle = np.all(signs >= 0, axis=0) | np.all(signs <= 0, axis=0)
            np.testing.assert_array_equal(raster.covered, oracle)

    def test_shared_edge_through_pixel_centres_is_covered_once(self):
        mesh = quad(0.0, 0.0, 16.0, 16.0)
        counts = np.zeros((16, 16), dtype=int)
        for face in mesh.faces:
            single = TriMesh(mesh.vertices, [face], mesh.uvs)
            counts += rasterize(single, pixel_projection(), 16).covered
        np.testing.assert_array_equal(counts, np.ones((16, 16), dtype=int))

    def test_empty_mesh(self):
        with self.assertRaises(EmptyMeshError):
            empty = TriMesh(np.zeros((3, 3)), np.zeros((0, 3)), np.zeros((3, 2)))
            render(empty, np.ones((2, 2, 3)), pixel_projection())


class SamplingTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)
        # Every corner carries the centre of texel (row 1, col 2) of a 4 x 4 texture.
        self.texture = self.rng.uniform(size=(4, 4, 3))
        self.mesh = TriMesh([[2.0, 2.0, 0.0], [12.0, 3.0, 0.0], [4.0, 13.0, 0.0]], [[0, 1, 2]], np.full((3, 2), 0.625))

    def test_texel_centre_reads_that_texel(self):
        view = render(self.mesh, self.texture, pixel_projection())
        self.assertGreater(view.covered.sum(), 10)
        expected = np.tile(self.texture[1, 2], (view.covered.sum(), 1))
        np.testing.assert_allclose(view.image[view.covered], expected, atol=1e-12)
        np.testing.assert_array_equal(view.image[~view.covered], 0.5)
        np.testing.assert_allclose(view.footprint.texel_weights[view.covered].sum(axis=1), 1.0, atol=1e-12)

    def test_backward_of_one_pixel_lands_in_its_texel(self):
        view = render(self.mesh, self.texture, pixel_projection())
        grad_image = np.zeros_like(view.image)
        grad_image[5, 5] = [1.0, 2.0, 3.0]
        self.assertTrue(view.covered[5, 5])
        grad = render_backward(view, grad_image)
        expected = np.zeros_like(self.texture)
        expected[1, 2] = [1.0, 2.0, 3.0]
        np.testing.assert_allclose(grad, expected, atol=1e-12)
        np.testing.assert_array_equal(render_backward(view, np.zeros_like(view.image)), 0.0)

    def test_occlusion_and_depth_ties(self):
        texture = np.stack([RED, RED, BLUE, BLUE])[None]
        corners = [[1.0, 1.0], [14.0, 2.0], [3.0, 14.0]]
        far = [[x, y, 0.0] for x, y in corners]
        for near_z, colour in ((1.0, BLUE), (0.0, RED)):
            near = [[x, y, near_z] for x, y in corners]
            mesh = TriMesh(
                far + near,
                [[0, 1, 2], [3, 4, 5]],
                [[0.25, 0.5]] * 3 + [[0.75, 0.5]] * 3,
            )
            view = render(mesh, texture, pixel_projection())
            np.testing.assert_array_equal(view.image[view.covered], np.tile(colour, (view.covered.sum(), 1)))

    def test_perspective_correct_barycentrics(self):
        proj = Projection.perspective(50.0, 6.0, azimuth=30.0, elevation=12.0)
        triangle = np.array([[-1.0, -0.5, 0.3], [1.2, -0.2, -0.8], [0.1, 1.0, 0.5]])
        beta = np.array([0.2, 0.3, 0.5])
        screen, w = project_points(np.vstack([triangle, beta @ triangle]), proj)
        a, b, c, p = screen
        solved = np.linalg.solve(np.column_stack([b - a, c - a]), p - a)
        screen_bary = np.array([1.0 - solved.sum(), solved[0], solved[1]])
        np.testing.assert_allclose(perspective_correct(screen_bary, 1.0 / w[:3]), beta, atol=1e-12)

    def test_rendering_is_deterministic(self):
        mesh, proj = tilted_quad()
        first = render(mesh, self.texture, proj)
        second = render(mesh, self.texture, proj)
        self.assertEqual(first.image.tobytes(), second.image.tobytes())
        np.testing.assert_array_equal(first.raster.face_ids, second.raster.face_ids)


class TextureGradientTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)
        self.mesh, self.proj = tilted_quad()
        self.texture = self.rng.uniform(size=(8, 8, 3))
        self.grad_image = self.rng.normal(size=(16, 16, 3))

    def test_finite_differences(self):
        view = render(self.mesh, self.texture, self.proj)
        self.assertGreater(view.covered.sum(), 40)
        analytic = render_backward(view, self.grad_image)

        numeric = np.zeros_like(self.texture)
        h = 1e-4
        for index in np.ndindex(*self.texture.shape):
            bump = np.zeros_like(self.texture)
            bump[index] = h
            upper = np.sum(render(self.mesh, self.texture + bump, self.proj).image * self.grad_image)
            lower = np.sum(render(self.mesh, self.texture - bump, self.proj).image * self.grad_image)
            numeric[index] = (upper - lower) / (2.0 * h)
        error = np.linalg.norm(analytic - numeric) / (np.linalg.norm(analytic) + np.linalg.norm(numeric))
        self.assertLess(error, 1e-4)

    def test_adjoint_identity(self):
        delta = self.rng.normal(size=self.texture.shape) * 1e-3
        base = render(self.mesh, self.texture, self.proj)
        moved = render(self.mesh, self.texture + delta, self.proj)
        lhs = np.sum((moved.image - base.image) * self.grad_image)
        rhs = np.sum(delta * render_backward(base, self.grad_image))
        self.assertLess(abs(lhs - rhs), 1e-6 * abs(rhs))

    def test_sampling_matrix_reproduces_image(self):
        view = render(self.mesh, self.texture, self.proj)
        linear = (view.sampling_matrix @ self.texture.reshape(-1, 3)).reshape(16, 16, 3)
        np.testing.assert_allclose(linear[view.covered], view.image[view.covered], atol=1e-12)
        np.testing.assert_array_equal(linear[~view.covered], 0.0)


class ViewTests(SimpleTestCase):
    def test_views_stay_in_range(self):
        rng = np.random.default_rng(3)
        draws = np.array([sample_view(rng) for _ in range(100_000)])
        self.assertTrue(np.all(np.abs(draws[:, 0]) <= 30.0))
        self.assertTrue(np.all(np.abs(draws[:, 1]) <= 20.0))
        sigma = np.array([60.0, 40.0]) / np.sqrt(12.0) / np.sqrt(len(draws))
        self.assertTrue(np.all(np.abs(draws.mean(axis=0)) < 3.0 * sigma))

    def test_same_seed_same_views(self):
        a, b = np.random.default_rng(7), np.random.default_rng(7)
        self.assertEqual([sample_view(a) for _ in range(20)], [sample_view(b) for _ in range(20)])

    def test_threaded_rendering_matches_sequential(self):
        mesh, proj = tilted_quad()
        texture = np.random.default_rng(4).uniform(size=(8, 8, 3))
        views = [(-20.0, 5.0), (0.0, 0.0), (15.0, -10.0)]
        sequential = render_views(mesh, texture, proj, views, threads=1)
        threaded = render_views(mesh, texture, proj, views, threads=3)
        for a, b in zip(sequential, threaded):
            np.testing.assert_array_equal(a.image, b.image)

    def test_contact_sheet_layout(self):
        images = [np.full((4, 4, 3), i / 9.0) for i in range(9)]
        sheet = contact_sheet(images, columns=3, padding=2)
        self.assertEqual(sheet.shape, (20, 20, 3))
        np.testing.assert_array_equal(sheet[2:6, 8:12], images[1])


class ImageFileTests(SimpleTestCase):
    def test_png_round_trip(self):
        image = np.random.default_rng(5).uniform(size=(6, 7, 3))
        with tempfile.TemporaryDirectory() as tmp:
            loaded = read_image(write_image(image, Path(tmp) / "img.png"))
        self.assertEqual(loaded.shape, (6, 7, 3))
        self.assertLessEqual(np.abs(loaded - image).max(), 0.5 / 255 + 1e-12)
