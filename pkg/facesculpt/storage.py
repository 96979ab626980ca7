"""Array bundles on disk: a JSON manifest next to a flat binary blob.

``<stem>.json`` lists every array by name, shape and element offset and may
carry arbitrary metadata; ``<stem>.bin`` holds the arrays back to back as
little-endian floats (64-bit unless the manifest says otherwise).
"""

import json
import logging
from pathlib import Path

import numpy as np

from facesculpt.exceptions import FaceSculptError

logger = logging.getLogger(__name__)

_DTYPES = {"float64": "<f8", "float32": "<f4"}


def bundle_paths(stem):
    stem = Path(stem)
    if stem.suffix in (".json", ".bin"):
        stem = stem.with_suffix("")
    return stem.with_suffix(".json"), stem.with_suffix(".bin")


def save_bundle(stem, arrays, metadata=None, dtype="float64"):
    """Write ``arrays`` (name -> ndarray) and ``metadata`` under ``stem``."""
    manifest_path, blob_path = bundle_paths(stem)
    manifest_path.parent.mkdir(parents=True, exist_ok=True)
    entries = []
    offset = 0
    chunks = []
    for name, value in arrays.items():
        value = np.ascontiguousarray(value, dtype=_DTYPES[dtype])
        entries.append({"name": name, "shape": list(value.shape), "offset": offset})
        offset += value.size
        chunks.append(value.ravel())
    manifest = {
        "format": "face-sculpt-bundle/1",
        "dtype": dtype,
        "byteorder": "little",
        "arrays": entries,
        "metadata": metadata or {},
    }
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype=_DTYPES[dtype])
    blob_path.write_bytes(blob.astype(_DTYPES[dtype]).tobytes())
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.debug("bundle_saved path=%s arrays=%d values=%d", manifest_path, len(entries), offset)
    return manifest_path


def load_bundle(stem):
    """Return ``(arrays, metadata)`` previously written by :func:`save_bundle`."""
    manifest_path, blob_path = bundle_paths(stem)
    try:
        manifest = json.loads(manifest_path.read_text())
        blob = np.frombuffer(blob_path.read_bytes(), dtype=_DTYPES[manifest["dtype"]])
    except (OSError, ValueError, KeyError) as exc:
        raise FaceSculptError(f"Cannot read bundle {manifest_path}: {exc}") from exc
    arrays = {}
    for entry in manifest["arrays"]:
        size = int(np.prod(entry["shape"], dtype=np.int64))
        start = entry["offset"]
        if start + size > blob.size:
            raise FaceSculptError(f"Bundle {blob_path} is truncated at array {entry['name']!r}")
        arrays[entry["name"]] = blob[start : start + size].astype(np.float64).reshape(entry["shape"])
    return arrays, manifest.get("metadata", {})
