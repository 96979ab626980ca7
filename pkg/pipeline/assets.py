"""Procedural smoke assets: a toy face mesh, synthetic landmark corpora and images.

The landmark template follows the iBUG-68 layout in a canonical frame with
``y`` pointing down: jaw 0-16, brows 17-26, nose 27-35, eyes 36-47 and
mouth 48-67. Art faces are normal faces pushed along one of two
exaggeration modes.
"""

import json
import logging
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy.spatial import Delaunay

from landmarks.io import write_landmark_dir, write_landmarks
from landmarks.models import LEFT_EYE, MOUTH, RIGHT_EYE, LandmarkSet
from meshes.models import Projection, TriMesh
from meshes.obj import save_obj
from meshes.projection import project_points
from rendering.images import write_image

logger = logging.getLogger(__name__)

JAW = np.arange(0, 17)
EXAGGERATION_MODES = ("big_eyes_narrow_jaw", "wide_mouth_long_chin")
SKIN = np.array([0.86, 0.69, 0.58])


def _ellipse(center, rx, ry, angles):
    cx, cy = center
    return np.column_stack([cx + rx * np.cos(angles), cy - ry * np.sin(angles)])


def template_landmarks():
    theta = np.linspace(0.0, np.pi, 17)
    jaw = np.column_stack([-0.72 * np.cos(theta), -0.15 + 0.8 * np.sin(theta)])
    arch = 0.06 * np.sin(np.linspace(0.0, np.pi, 5))
    left_brow = np.column_stack([np.linspace(-0.55, -0.12, 5), -0.45 - arch])
    right_brow = np.column_stack([np.linspace(0.12, 0.55, 5), -0.45 - arch])
    bridge = np.column_stack([np.zeros(4), np.linspace(-0.32, 0.05, 4)])
    nostrils = np.column_stack([np.linspace(-0.14, 0.14, 5), 0.12 + 0.03 * np.sin(np.linspace(0.0, np.pi, 5))])
    eye_angles = np.array([np.pi, 2 * np.pi / 3, np.pi / 3, 0.0, -np.pi / 3, -2 * np.pi / 3])
    left_eye = _ellipse((-0.32, -0.28), 0.12, 0.05, eye_angles)
    right_eye = _ellipse((0.32, -0.28), 0.12, 0.05, eye_angles)
    outer = _ellipse((0.0, 0.38), 0.28, 0.1, np.pi - 2 * np.pi * np.arange(12) / 12)
    inner = _ellipse((0.0, 0.38), 0.18, 0.04, np.pi - 2 * np.pi * np.arange(8) / 8)
    return LandmarkSet(np.vstack([jaw, left_brow, right_brow, bridge, nostrils, left_eye, right_eye, outer, inner]))


def _scale_about(points, index, factors):
    centre = points[index].mean(axis=0)
    points[index] = centre + (points[index] - centre) * factors


def exaggerate(points, mode, strength):
    """Push a canonical face along exaggeration ``mode`` (0 or 1) by ``strength`` in [0, 1]."""
    points = np.array(points, dtype=np.float64)
    if mode == 0:
        _scale_about(points, LEFT_EYE, 1.0 + 0.8 * strength)
        _scale_about(points, RIGHT_EYE, 1.0 + 0.8 * strength)
        lower = JAW[points[JAW, 1] > 0.0]
        points[lower, 0] *= 1.0 - 0.25 * strength
    elif mode == 1:
        _scale_about(points, MOUTH, np.array([1.0 + 0.7 * strength, 1.0]))
        points[JAW, 1] += 0.3 * strength * np.clip(points[JAW, 1], 0.0, None)
    else:
        raise ValueError(f"Unknown exaggeration mode {mode}")
    return points


def _random_shape(rng, template):
    widths = np.array([rng.normal(1.0, 0.05), rng.normal(1.0, 0.05)])
    return template.points * widths + rng.normal(size=(68, 2)) * 0.015


def _random_pose(rng, points, image_size):
    angle = np.deg2rad(rng.normal(0.0, 5.0))
    rotation = np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])
    scale = rng.uniform(0.3, 0.42) * image_size
    shift = image_size / 2.0 + rng.normal(size=2) * 0.03 * image_size
    return LandmarkSet(points @ rotation.T * scale + shift)


def normal_face(rng, template=None, image_size=256):
    template = template_landmarks() if template is None else template
    return _random_pose(rng, _random_shape(rng, template), image_size)


def art_face(rng, mode, template=None, image_size=256):
    template = template_landmarks() if template is None else template
    shape = exaggerate(_random_shape(rng, template), mode, rng.uniform(0.6, 1.0))
    return _random_pose(rng, shape, image_size)


def landmark_corpora(n_normal, n_art, rng, image_size=256):
    """Normal faces, art faces and the exaggeration mode of each art face."""
    template = template_landmarks()
    normal = [normal_face(rng, template, image_size) for _ in range(n_normal)]
    modes = rng.integers(0, len(EXAGGERATION_MODES), size=n_art)
    art = [art_face(rng, int(mode), template, image_size) for mode in modes]
    return normal, art, modes


def _height(points):
    x, y = points[:, 0], points[:, 1]
    dome = 0.6 * np.sqrt(np.clip(1.0 - (x / 1.1) ** 2 - (y / 1.3) ** 2, 0.0, None))
    nose = 0.18 * np.exp(-(x**2 + (y + 0.05) ** 2) / 0.02)
    return dome + nose


def toy_face_mesh(resolution=31):
    """Height-field face over ``[-1, 1]²`` whose first 68 vertices are the template landmarks."""
    landmarks = template_landmarks().points * np.array([1.0, -1.0])
    axis = np.linspace(-1.0, 1.0, resolution)
    grid = np.stack(np.meshgrid(axis, axis), axis=-1).reshape(-1, 2)
    spacing = axis[1] - axis[0]
    nearest = np.min(np.linalg.norm(grid[:, None, :] - landmarks[None, :, :], axis=2), axis=1)
    points = np.vstack([landmarks, grid[nearest > 0.5 * spacing]])
    faces = Delaunay(points).simplices
    vertices = np.column_stack([points, _height(points)])
    uvs = (points + 1.0) / 2.0
    return TriMesh(vertices, faces, uvs, landmark_ids=np.arange(68))


def toy_projection(mesh, image_size=256):
    return Projection.orthographic(
        0.4 * image_size, offset=(image_size / 2.0, image_size / 2.0), image_size=image_size, center=mesh.centroid()
    )


def style_image(size, rng):
    """Diagonal two-colour stripes under a few soft colour blobs."""
    rows, cols = np.mgrid[0:size, 0:size] / float(size)
    stripes = 0.5 + 0.5 * np.sin(2.0 * np.pi * (6.0 * cols + 3.0 * rows))
    palette = np.array([[0.12, 0.2, 0.55], [0.95, 0.78, 0.2]])
    image = palette[0] + stripes[..., None] * (palette[1] - palette[0])
    for _ in range(4):
        centre = rng.uniform(0.0, 1.0, size=2)
        weight = np.exp(-((rows - centre[0]) ** 2 + (cols - centre[1]) ** 2) / 0.02)[..., None]
        image = image * (1.0 - 0.7 * weight) + 0.7 * weight * rng.uniform(0.0, 1.0, size=3)
    return np.clip(image, 0.0, 1.0)


def content_texture(size, mesh):
    """Skin tone with darker spots where the eyes and mouth land in UV space."""
    rows, cols = np.mgrid[0:size, 0:size] + 0.5
    u, v = cols / size, 1.0 - rows / size
    texture = np.tile(SKIN, (size, size, 1)) * (0.9 + 0.1 * v)[..., None]
    for index in (LEFT_EYE, RIGHT_EYE, MOUTH):
        centre = mesh.uvs[mesh.landmark_ids[index]].mean(axis=0)
        spot = np.exp(-((u - centre[0]) ** 2 + (v - centre[1]) ** 2) / 0.002)[..., None]
        texture = texture * (1.0 - 0.6 * spot)
    return np.clip(texture, 0.0, 1.0)


def smoke_config(image_size, texture_size=64):
    """Pipeline config scaled down so the whole chain runs in minutes."""
    return {
        "paths": {
            "mesh": "mesh.obj",
            "projection": "projection.json",
            "texture": "texture.png",
            "style_image": "style.png",
            "portrait_landmarks": "portrait.csv",
            "exemplar_landmarks": "exemplar.csv",
            "normal_dir": "landmarks/normal",
            "art_dir": "landmarks/art",
            "output_dir": "out",
        },
        "seed": settings.FACE_SCULPT["SEED"],
        "stats": {"clusters": len(EXAGGERATION_MODES)},
        "train": {"epochs": 20, "classifier_epochs": 20, "hidden_width": 32},
        "deform": {"iterations": 200},
        "render": {"image_size": image_size, "texture_size": texture_size, "contact_sheet_views": 4},
        "extractor": {"k_max": 256},
        "style": {"iterations": 50},
    }


def generate_assets(directory, n_normal=200, n_art=200, image_size=64, texture_size=64, seed=0):
    """Write the smoke asset pack under ``directory``; returns the written paths by name."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    mesh = toy_face_mesh()
    proj = toy_projection(mesh, image_size)
    xy, _ = project_points(mesh.vertices[mesh.landmark_ids], proj)
    normal, art, modes = landmark_corpora(n_normal, n_art, rng, image_size)
    exemplar = art_face(rng, 0, image_size=image_size)

    paths = {
        "mesh": save_obj(mesh, directory / "mesh.obj"),
        "projection": proj.save(directory / "projection.json"),
        "texture": write_image(content_texture(texture_size, mesh), directory / "texture.png"),
        "style_image": write_image(style_image(texture_size, rng), directory / "style.png"),
        "portrait_landmarks": write_landmarks(LandmarkSet(xy), directory / "portrait.csv"),
        "exemplar_landmarks": write_landmarks(exemplar, directory / "exemplar.csv"),
    }
    write_landmark_dir(normal, directory / "landmarks" / "normal", prefix="normal")
    write_landmark_dir(art, directory / "landmarks" / "art", prefix="art")
    (directory / "landmarks" / "art_modes.json").write_text(json.dumps(modes.tolist()))
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(smoke_config(image_size, texture_size), indent=2))
    paths["config"] = config_path
    logger.info(
        "assets_generated dir=%s vertices=%d faces=%d normal=%d art=%d",
        directory,
        mesh.n_vertices,
        mesh.n_faces,
        n_normal,
        n_art,
    )
    return paths
