"""PNG textures and images as ``H x W x 3`` floats in [0, 1] (8-bit values / 255, no gamma)."""

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from facesculpt.exceptions import FaceSculptError


def read_image(path, size=None):
    path = Path(path)
    try:
        with Image.open(path) as handle:
            image = handle.convert("RGB")
            if size is not None:
                image = image.resize((size, size), Image.Resampling.BILINEAR)
            return np.asarray(image, dtype=np.float64) / 255.0
    except (OSError, UnidentifiedImageError) as exc:
        raise FaceSculptError(f"Cannot read image {path}: {exc}", details={"path": str(path)}) from exc


def to_uint8(image):
    return np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(image, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(to_uint8(image)).save(path, format="PNG")
    return path
