import tempfile
from pathlib import Path

import numpy as np
import pandas as pd
import pytest
from django.test import SimpleTestCase
from scipy.optimize import linear_sum_assignment

from autodiff import ops
from autodiff.checks import grad_check
from facesculpt.exceptions import FaceSculptError, FeatureFileError, NonFiniteError, ShapeMismatchError
from meshes.models import Projection, TriMesh
from pipeline.assets import content_texture, style_image, toy_face_mesh, toy_projection
from rendering.rasterizer import rasterize, render, texture_footprint
from stylization.features import (
    CHANNELS_PER_LEVEL,
    DERIVATIVE_DIRECTIONS,
    ExtractorSpec,
    FeatureStack,
    HypercolumnOperator,
    extract_hypercolumns,
    sample_pixels,
)
from stylization.losses import cosine_cost, remd_style_loss, self_similarity_content_loss, texture_loss
from stylization.optimizer import StyleConfig, optimize_texture, stylize_flat_texture

EPS = 1e-8


def unit(v):
    return v / np.sqrt(np.sum(v**2) + EPS**2)


def scene(uv_scale=1.0):
    """A unit quad filling most of a 16 x 16 orthographic frame."""
    vertices = [[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [1.0, 1.0, 0.0], [-1.0, 1.0, 0.0]]
    uvs = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]]) * uv_scale
    mesh = TriMesh(vertices, [[0, 1, 2], [0, 2, 3]], uvs)
    return mesh, Projection.orthographic(6.0, offset=(8.0, 8.0), image_size=16)


class FeatureTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)

    def test_constant_image_gives_identical_columns(self):
        image = np.tile([0.2, 0.5, 0.9], (12, 10, 1))
        stack = extract_hypercolumns(image, ExtractorSpec(k_max=64), self.rng)
        np.testing.assert_allclose(stack.vectors, np.tile(stack.vectors[0], (stack.k, 1)), atol=1e-12)

    def test_shape_contract(self):
        small = extract_hypercolumns(self.rng.uniform(size=(8, 8, 3)), ExtractorSpec(k_max=100), self.rng)
        self.assertEqual((small.k, small.d), (64, 39))
        large = extract_hypercolumns(self.rng.uniform(size=(16, 16, 3)), ExtractorSpec(k_max=100), self.rng)
        self.assertEqual((large.k, large.d), (100, 3 * CHANNELS_PER_LEVEL))
        self.assertEqual(len(np.unique(large.pixel_coords, axis=0)), 100)
        self.assertEqual(large.image_size, (16, 16))

    def test_spec_validation(self):
        with self.assertRaises(FaceSculptError):
            ExtractorSpec(k_max=32)
        with self.assertRaises(FaceSculptError):
            ExtractorSpec(mode="vgg")
        with self.assertRaises(FaceSculptError):
            ExtractorSpec(mode="external")

    def test_external_round_trip(self):
        image = self.rng.uniform(size=(9, 11, 3))
        stack = extract_hypercolumns(image, ExtractorSpec(k_max=64), self.rng)
        with tempfile.TemporaryDirectory() as tmp:
            stem = Path(tmp) / "style"
            stack.save(stem)
            loaded = extract_hypercolumns(image, ExtractorSpec(mode="external", path=str(stem)))
            self.assertEqual(loaded.vectors.tobytes(), stack.vectors.tobytes())
            np.testing.assert_array_equal(loaded.pixel_coords, stack.pixel_coords)
            with self.assertRaises(FeatureFileError):
                extract_hypercolumns(np.zeros((8, 8, 3)), ExtractorSpec(mode="external", path=str(stem)))
            Path(tmp, "style.bin").write_bytes(b"\0" * 16)
            with self.assertRaises(FeatureFileError):
                FeatureStack.load(stem)

    def test_oriented_derivatives_of_a_ramp(self):
        a, b = 0.03, -0.02
        rows, cols = np.mgrid[0:12, 0:12]
        grey = 0.5 + a * cols + b * rows
        features = HypercolumnOperator((12, 12), 1).apply(np.repeat(grey[..., None], 3, axis=-1).reshape(-1, 3))
        maps = features.value.reshape(12, 12, CHANNELS_PER_LEVEL)
        for i, (c, s) in enumerate(DERIVATIVE_DIRECTIONS):
            interior = maps[1:-1, 1:-1, 9 + i]
            np.testing.assert_allclose(interior, a * c + b * s, atol=1e-10)

    def test_sample_pixels(self):
        pixels = sample_pixels((10, 10), 64, np.random.default_rng(3))
        self.assertEqual(pixels.size, 64)
        self.assertTrue(np.all(np.diff(pixels) > 0))
        np.testing.assert_array_equal(pixels, sample_pixels((10, 10), 64, np.random.default_rng(3)))


class CostTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(1)

    def test_equal_and_antiparallel(self):
        a = self.rng.normal(size=(1, 5))
        cost = cosine_cost(np.vstack([a, -a]), a).value
        self.assertAlmostEqual(cost[0, 0], 0.0, delta=1e-12)
        self.assertAlmostEqual(cost[1, 0], 2.0, delta=1e-12)

    def test_matches_double_loop(self):
        A, B = self.rng.normal(size=(7, 6)), self.rng.normal(size=(5, 6))
        expected = np.array([[1.0 - unit(a) @ unit(b) for b in B] for a in A])
        np.testing.assert_allclose(cosine_cost(A, B).value, expected, atol=1e-10)


class StyleLossTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_self_distance_is_zero(self):
        A = self.rng.normal(size=(20, 8))
        self.assertAlmostEqual(remd_style_loss(A, A).item(), 0.0, delta=1e-12)

    def test_single_pair(self):
        a, b = self.rng.normal(size=(1, 4)), self.rng.normal(size=(1, 4))
        self.assertAlmostEqual(remd_style_loss(a, b).item(), 1.0 - unit(a[0]) @ unit(b[0]), delta=1e-12)

    def test_lower_bound_of_exact_transport(self):
        for _ in range(50):
            k = int(self.rng.integers(1, 9))
            A, B = self.rng.normal(size=(k, 5)), self.rng.normal(size=(k, 5))
            cost = cosine_cost(A, B).value
            rows, cols = linear_sum_assignment(cost)
            emd = cost[rows, cols].mean()
            remd = remd_style_loss(A, B).item()
            self.assertGreaterEqual(remd, -1e-12)
            self.assertLessEqual(remd, emd + 1e-12)


class ContentLossTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(3)

    def test_identical_stacks(self):
        A = self.rng.normal(size=(12, 6))
        self.assertEqual(self_similarity_content_loss(A, A).item(), 0.0)

    def test_orthogonal_invariance(self):
        A = self.rng.normal(size=(15, 6))
        q, _ = np.linalg.qr(self.rng.normal(size=(6, 6)))
        self.assertLess(self_similarity_content_loss(A, A @ q).item(), 1e-10)

    def test_matches_double_loop(self):
        A, B = self.rng.normal(size=(9, 4)), self.rng.normal(size=(9, 4))

        def similarity(X):
            D = np.array([[1.0 - unit(x) @ unit(z) for z in X] for x in X])
            return D / (D.sum(axis=0, keepdims=True) + EPS)

        expected = np.mean(np.abs(similarity(A) - similarity(B)))
        self.assertAlmostEqual(self_similarity_content_loss(A, B).item(), expected, delta=1e-8)

    def test_mismatched_sizes(self):
        with self.assertRaises(ShapeMismatchError):
            self_similarity_content_loss(np.ones((4, 3)), np.ones((5, 3)))


class TextureLossTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(4)
        self.spec = ExtractorSpec(k_max=64)
        self.image_z = self.rng.uniform(size=(8, 8, 3))
        self.image_c = self.rng.uniform(size=(8, 8, 3))
        self.style = self.rng.uniform(size=(10, 10, 3))

    def test_zero_beta_is_style_alone(self):
        total, style, _ = texture_loss(self.image_z, self.image_c, self.style, self.spec, 0.0, np.random.default_rng(5))
        self.assertEqual(total.item(), style.item())

    def test_identical_images(self):
        total, _, _ = texture_loss(self.image_c, self.image_c, self.image_c, self.spec, 1.0, np.random.default_rng(6))
        self.assertAlmostEqual(total.item(), 0.0, delta=1e-12)

    def test_linear_in_beta(self):
        losses = {}
        for beta in (0.0, 2.0):
            losses[beta] = texture_loss(
                self.image_z, self.image_c, self.style, self.spec, beta, np.random.default_rng(7)
            )
        content = losses[2.0][2].item()
        self.assertAlmostEqual(losses[2.0][0].item() - losses[0.0][0].item(), 2.0 * content, delta=1e-10)
        self.assertGreater(content, 0.0)

    def test_gradient_through_render_and_features(self):
        mesh, proj = scene()
        raster = rasterize(mesh, proj.with_view(12.0, -5.0), 16)
        sampling = texture_footprint(raster, (4, 4)).sampling_matrix
        background = np.where(raster.covered.reshape(-1, 1), 0.0, 0.5) * np.ones((1, 3))
        t_x = self.rng.uniform(size=(16, 3))
        image_c = (sampling @ t_x + background).reshape(16, 16, 3)
        pixels = sample_pixels((16, 16), 64, self.rng)
        style = extract_hypercolumns(self.style, self.spec, self.rng)

        def loss(texture):
            image_z = ops.add(ops.linear_map(sampling, texture), background)
            return texture_loss(image_z, image_c, style, self.spec, 1.0, pixels=pixels)[0]

        start = np.clip(t_x + self.rng.normal(size=t_x.shape) * 0.1, 0.0, 1.0)
        self.assertLess(grad_check(loss, start), 1e-3)


class OptimizeTextureTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(8)
        self.texture = self.rng.uniform(size=(8, 8, 3))
        self.style = self.rng.uniform(size=(12, 12, 3))
        self.spec = ExtractorSpec(k_max=64)
        self.cfg = StyleConfig(iterations=4, lr=0.05, seed=11)

    def run_scene(self, uv_scale=1.0, **kwargs):
        mesh, proj = scene(uv_scale)
        return optimize_texture(mesh, self.texture, self.style, proj, self.spec, self.cfg, **kwargs)

    def test_fixed_seed_is_bitwise_reproducible(self):
        first = self.run_scene().texture
        second = self.run_scene().texture
        self.assertEqual(first.tobytes(), second.tobytes())
        self.assertFalse(np.array_equal(first, self.texture))

    def test_values_stay_in_unit_range_and_trace_is_written(self):
        with tempfile.TemporaryDirectory() as tmp:
            trace_path = Path(tmp) / "trace.csv"
            result = self.run_scene(trace_path=trace_path)
            frame = pd.read_csv(trace_path)
        self.assertTrue(np.all((result.texture >= 0.0) & (result.texture <= 1.0)))
        self.assertEqual(list(frame.columns), ["iteration", "style", "content", "total"])
        self.assertEqual(len(frame), 4)
        self.assertAlmostEqual(frame["content"][0], 0.0, delta=1e-12)
        np.testing.assert_allclose(frame["total"], frame["style"] + frame["content"], rtol=1e-12)

    def test_texels_outside_every_footprint_are_untouched(self):
        # UVs in [0, 0.4]^2 only ever read texel columns 0-3 and rows 4-7.
        result = self.run_scene(uv_scale=0.4)
        untouched = np.ones((8, 8), dtype=bool)
        untouched[4:, :4] = False
        self.assertEqual(result.texture[untouched].tobytes(), self.texture[untouched].tobytes())
        self.assertFalse(np.array_equal(result.texture[~untouched], self.texture[~untouched]))

    def test_non_finite_loss_aborts(self):
        self.cfg = StyleConfig(iterations=3, background=float("nan"))
        with self.assertRaises(NonFiniteError) as caught:
            self.run_scene()
        self.assertEqual(caught.exception.details["iteration"], 0)

    def test_rejects_out_of_range_texture(self):
        self.texture = self.texture + 1.0
        with self.assertRaises(FaceSculptError):
            self.run_scene()

    def test_flat_baseline(self):
        result = stylize_flat_texture(self.texture, self.style, self.spec, StyleConfig(mode="flat", iterations=3))
        self.assertEqual(result.texture.shape, self.texture.shape)
        self.assertEqual(len(result.trace), 3)
        self.assertTrue(np.all((result.texture >= 0.0) & (result.texture <= 1.0)))
        self.cfg = StyleConfig(mode="flat", iterations=3)
        self.assertEqual(self.run_scene().texture.tobytes(), result.texture.tobytes())

    def test_config_validation(self):
        with self.assertRaises(FaceSculptError):
            StyleConfig(beta=-0.1)
        with self.assertRaises(FaceSculptError):
            StyleConfig(mode="gram")


@pytest.mark.slow
class ToyFaceStylizationTests(SimpleTestCase):
    """Fifty iterations on the toy face at 64 x 64 with 256 hypercolumns."""

    def setUp(self):
        self.mesh = toy_face_mesh()
        self.proj = toy_projection(self.mesh, 64)
        self.texture = content_texture(64, self.mesh)
        self.spec = ExtractorSpec(k_max=256)
        self.cfg = StyleConfig(iterations=50, seed=0)

    def stylize(self, y):
        return optimize_texture(self.mesh, self.texture, y, self.proj, self.spec, self.cfg)

    def change(self, result):
        return float(np.sqrt(np.mean((result.texture - self.texture) ** 2)))

    def test_foreign_style_reduces_the_loss(self):
        result = self.stylize(style_image(64, np.random.default_rng(1)))
        late = np.mean([row["total"] for row in result.trace[-10:]])
        self.assertLessEqual(late, 0.8 * result.initial_loss)

    def test_own_render_as_style_barely_moves_the_texture(self):
        y = render(self.mesh, self.texture, self.proj, img_size=64).image
        own = self.change(self.stylize(y))
        foreign = self.change(self.stylize(style_image(64, np.random.default_rng(1))))
        self.assertLess(own, 0.05)
        self.assertLess(own, 0.5 * foreign)
