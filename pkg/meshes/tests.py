import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from facesculpt.exceptions import BehindCameraError, FaceSculptError, ObjParseError
from meshes.laplacian import graph_laplacian
from meshes.models import Projection, TriMesh
from meshes.obj import load_obj, parse_obj, save_obj, sidecar_path
from meshes.projection import project, project_points

TRIANGLE_OBJ = """\
# one triangle
v 0 0 0
v 1 0 0
v 0 1 0
vt 0 0
vt 1 0
vt 0 1
f 1/1 2/2 3/3
"""


def grid_mesh(rows=4, cols=5, rng=None):
    """A triangulated grid, optionally with jittered heights."""
    ys, xs = np.mgrid[0:rows, 0:cols]
    z = np.zeros(xs.size) if rng is None else rng.normal(size=xs.size) * 0.1
    vertices = np.column_stack([xs.ravel(), ys.ravel(), z]).astype(float)
    uvs = np.column_stack([xs.ravel() / (cols - 1), ys.ravel() / (rows - 1)])
    faces = []
    for r in range(rows - 1):
        for c in range(cols - 1):
            a = r * cols + c
            faces.append([a, a + 1, a + cols + 1])
            faces.append([a, a + cols + 1, a + cols])
    return TriMesh(vertices, np.array(faces), uvs)


class TriMeshTests(SimpleTestCase):
    def test_rejects_out_of_range_faces(self):
        with self.assertRaises(FaceSculptError):
            TriMesh(np.zeros((3, 3)), [[0, 1, 3]], np.zeros((3, 2)))

    def test_rejects_degenerate_faces(self):
        with self.assertRaises(FaceSculptError):
            TriMesh(np.eye(3), [[0, 1, 1]], np.zeros((3, 2)))

    def test_rejects_repeated_landmark_ids(self):
        with self.assertRaises(FaceSculptError):
            TriMesh(np.eye(3), [[0, 1, 2]], np.zeros((3, 2)), landmark_ids=[0, 0])

    def test_with_vertices_keeps_topology(self):
        mesh = grid_mesh()
        moved = mesh.with_vertices(mesh.vertices + 1.0)
        np.testing.assert_array_equal(moved.faces, mesh.faces)
        np.testing.assert_array_equal(moved.uvs, mesh.uvs)
        self.assertFalse(mesh.vertices.flags.writeable)


class ObjTests(SimpleTestCase):
    def test_single_triangle(self):
        vertices, faces, uvs = parse_obj(TRIANGLE_OBJ)
        self.assertEqual(vertices.shape, (3, 3))
        np.testing.assert_array_equal(faces, [[0, 1, 2]])
        np.testing.assert_array_equal(uvs, [[0, 0], [1, 0], [0, 1]])

    def test_quad_is_fan_triangulated(self):
        text = "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 1 1\nvt 0 1\nf 1/1 2/2 3/3 4/4\n"
        _, faces, _ = parse_obj(text)
        np.testing.assert_array_equal(faces, [[0, 1, 2], [0, 2, 3]])

    def test_negative_indices_and_normals(self):
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nvn 0 0 1\nvt 0 0\nvt 1 0\nvt 0 1\nf -3/-3/1 -2/-2/1 -1/-1/1\n"
        _, faces, _ = parse_obj(text)
        np.testing.assert_array_equal(faces, [[0, 1, 2]])

    def test_errors_carry_line_numbers(self):
        cases = {
            "v 0 0\n": 1,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1/1 2/1 4/1\n": 5,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nf 1 2 3\n": 5,
            "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 1\nf 1/1 2/1 3/1\nf 1/2 3/1 2/1\n": 7,
            "v 0 0 0\nbogus 1\n": 2,
        }
        for text, line in cases.items():
            with self.subTest(text=text):
                with self.assertRaises(ObjParseError) as ctx:
                    parse_obj(text)
                self.assertEqual(ctx.exception.line, line)

    def test_missing_texture_coordinates(self):
        with self.assertRaises(ObjParseError):
            parse_obj("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")

    def test_round_trip_with_sidecar(self):
        rng = np.random.default_rng(0)
        mesh = grid_mesh(rng=rng)
        mesh = TriMesh(mesh.vertices * np.pi, mesh.faces, mesh.uvs, landmark_ids=[3, 0, 7])
        with tempfile.TemporaryDirectory() as tmp:
            path = save_obj(mesh, Path(tmp) / "face.obj")
            self.assertTrue(sidecar_path(path).exists())
            loaded = load_obj(path)
            again = load_obj(save_obj(loaded, Path(tmp) / "again.obj"))
        np.testing.assert_allclose(loaded.vertices, mesh.vertices, atol=1e-6)
        np.testing.assert_allclose(loaded.uvs, mesh.uvs, atol=1e-6)
        np.testing.assert_array_equal(loaded.faces, mesh.faces)
        np.testing.assert_array_equal(loaded.landmark_ids, [3, 0, 7])
        np.testing.assert_array_equal(again.vertices, loaded.vertices)
        np.testing.assert_array_equal(again.faces, loaded.faces)


class LaplacianTests(SimpleTestCase):
    def test_single_triangle(self):
        mesh = TriMesh(np.eye(3), [[0, 1, 2]], np.zeros((3, 2)))
        expected = np.array([[2, -1, -1], [-1, 2, -1], [-1, -1, 2]], dtype=float)
        np.testing.assert_array_equal(graph_laplacian(mesh).toarray(), expected)

    def test_constant_null_vector_and_symmetry(self):
        L = graph_laplacian(grid_mesh(6, 7))
        np.testing.assert_allclose(L @ np.ones(L.shape[0]), 0.0, atol=1e-12)
        self.assertEqual(abs(L - L.T).max(), 0.0)

    def test_rows_match_adjacency_lists(self):
        rng = np.random.default_rng(1)
        n = 30
        faces = [rng.choice(n, size=3, replace=False) for _ in range(60)]
        mesh = TriMesh(rng.normal(size=(n, 3)), faces, np.zeros((n, 2)))
        neighbours = {i: set() for i in range(n)}
        for a, b, c in faces:
            for i, j in ((a, b), (b, c), (c, a)):
                neighbours[i].add(j)
                neighbours[j].add(i)
        L = graph_laplacian(mesh).toarray()
        for i in range(n):
            expected = np.zeros(n)
            expected[list(neighbours[i])] = -1.0
            expected[i] = len(neighbours[i])
            np.testing.assert_array_equal(L[i], expected)


class ProjectionTests(SimpleTestCase):
    def setUp(self):
        self.rng = np.random.default_rng(2)

    def test_identity_like_matrix_drops_z(self):
        proj = Projection(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 0, 0, 1.0]]))
        self.assertTrue(proj.is_affine)
        np.testing.assert_array_equal(project([1.5, -2.0, 7.0], proj), [1.5, -2.0])

    def test_translation_shifts_every_point(self):
        base = np.array([[2.0, 0, 0.5, 0], [0, 3.0, 0, 0], [0, 0, 0, 1.0]])
        shifted = base.copy()
        shifted[:2, 3] = [4.0, -1.0]
        points = self.rng.normal(size=(10, 3))
        a, _ = project_points(points, Projection(base))
        b, _ = project_points(points, Projection(shifted))
        np.testing.assert_allclose(b - a, np.tile([4.0, -1.0], (10, 1)), atol=1e-12)

    def test_matches_direct_multiply_and_divide(self):
        for _ in range(20):
            base = self.rng.normal(size=(3, 4))
            base[2, 3] += 10.0
            proj = Projection(base)
            v = self.rng.normal(size=3)
            h = base @ np.append(v, 1.0)
            np.testing.assert_allclose(project(v, proj), h[:2] / h[2], rtol=1e-12, atol=1e-12)

    def test_centre_is_fixed_by_view_rotation(self):
        center = np.array([0.3, -0.2, 1.0])
        proj = Projection.perspective(focal=200.0, distance=10.0, center=center)
        rotated = proj.with_view(25.0, -15.0)
        np.testing.assert_allclose(project(center, rotated), project(center, proj), atol=1e-9)
        point = center + np.array([1.0, 0.0, 0.0])
        self.assertFalse(np.allclose(project(point, rotated), project(point, proj)))

    def test_behind_camera(self):
        proj = Projection.perspective(focal=100.0, distance=5.0)
        with self.assertRaises(BehindCameraError):
            project([0.0, 0.0, 5.0], proj)
        with self.assertRaises(BehindCameraError) as caught:
            project_points(np.array([[0.0, 0.0, 0.0], [0.2, 0.1, 7.0]]), proj)
        self.assertEqual(caught.exception.details["points"], [1])

    def test_depth_orders_nearer_first(self):
        points = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, -1.0]])
        for proj in (Projection.orthographic(10.0), Projection.perspective(100.0, 5.0)):
            _, depth = project_points(points, proj)
            self.assertLess(depth[0], depth[1])

    def test_rank_and_json_round_trip(self):
        with self.assertRaises(FaceSculptError):
            Projection(np.zeros((3, 4)))
        proj = Projection.perspective(120.0, 8.0, center=[0.1, 0.2, 0.3], azimuth=12.5, elevation=-3.0)
        with tempfile.TemporaryDirectory() as tmp:
            loaded = Projection.load(proj.save(Path(tmp) / "proj.json"))
        np.testing.assert_array_equal(loaded.base, proj.base)
        np.testing.assert_array_equal(loaded.center, proj.center)
        self.assertEqual((loaded.azimuth, loaded.elevation, loaded.image_size), (12.5, -3.0, 256))
