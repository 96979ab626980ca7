"""Random camera views and multi-view rendering."""

import logging
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from django.conf import settings

from rendering.rasterizer import render

logger = logging.getLogger(__name__)


def sample_view(rng, azimuth_range=None, elevation_range=None):
    """``(azimuth, elevation)`` in degrees, uniform in ``±azimuth_range`` and ``±elevation_range``."""
    render_cfg = settings.FACE_SCULPT["RENDER"]
    azimuth_range = render_cfg["AZIMUTH_RANGE"] if azimuth_range is None else azimuth_range
    elevation_range = render_cfg["ELEVATION_RANGE"] if elevation_range is None else elevation_range
    azimuth = float(rng.uniform(-azimuth_range, azimuth_range))
    elevation = float(rng.uniform(-elevation_range, elevation_range))
    return azimuth, elevation


def view_grid(count, azimuth_range=None, elevation_range=None):
    """Evenly spread views covering the sampling range, row-major from top-left."""
    render_cfg = settings.FACE_SCULPT["RENDER"]
    azimuth_range = render_cfg["AZIMUTH_RANGE"] if azimuth_range is None else azimuth_range
    elevation_range = render_cfg["ELEVATION_RANGE"] if elevation_range is None else elevation_range
    columns = int(np.ceil(np.sqrt(count)))
    rows = int(np.ceil(count / columns))
    azimuths = np.linspace(-azimuth_range, azimuth_range, columns) if columns > 1 else np.zeros(1)
    elevations = np.linspace(elevation_range, -elevation_range, rows) if rows > 1 else np.zeros(1)
    return [(float(a), float(e)) for e in elevations for a in azimuths][:count]


def thread_count():
    return max(1, int(settings.FACE_SCULPT.get("THREADS", 1)))


def render_views(mesh, texture, proj, views, img_size=None, background=0.5, threads=None):
    """Render one image per ``(azimuth, elevation)``; results keep the order of ``views``."""
    threads = thread_count() if threads is None else max(1, int(threads))

    def _one(angles):
        return render(mesh, texture, proj.with_view(*angles), img_size=img_size, background=background)

    if threads == 1 or len(views) < 2:
        return [_one(angles) for angles in views]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(_one, views))


def contact_sheet(images, columns=None, padding=2, fill=1.0):
    """Tile equally sized ``H x W x 3`` images into one sheet."""
    images = [np.asarray(image, dtype=np.float64) for image in images]
    if not images:
        return np.full((1, 1, 3), fill)
    h, w, c = images[0].shape
    columns = columns or int(np.ceil(np.sqrt(len(images))))
    rows = int(np.ceil(len(images) / columns))
    sheet = np.full((rows * h + (rows + 1) * padding, columns * w + (columns + 1) * padding, c), fill)
    for i, image in enumerate(images):
        r, col = divmod(i, columns)
        top = padding + r * (h + padding)
        left = padding + col * (w + padding)
        sheet[top : top + h, left : left + w] = image
    return sheet
