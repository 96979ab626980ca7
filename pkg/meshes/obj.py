"""Wavefront OBJ reading and writing.

Only ``v``, ``vt`` and ``f`` records matter. Every face corner must name a
texture coordinate, and a vertex may carry a single UV: a seam that maps one
vertex to two UVs is rejected. Polygons are fan-triangulated. Landmark vertex
ids live in a sidecar text file of 0-based integers, one per line.
"""

import logging
from pathlib import Path

import numpy as np

from facesculpt.exceptions import FaceSculptError, ObjParseError
from meshes.models import TriMesh

logger = logging.getLogger(__name__)

IGNORED_RECORDS = {"vn", "vp", "o", "g", "s", "usemtl", "mtllib", "l"}


def sidecar_path(path):
    path = Path(path)
    return path.with_name(path.stem + ".landmarks.txt")


def _resolve(token, count, line, path, kind):
    try:
        index = int(token)
    except ValueError:
        raise ObjParseError(f"Invalid {kind} index {token!r}", line=line, path=path) from None
    # OBJ indices are 1-based; negative ones count back from the latest record.
    resolved = index - 1 if index > 0 else count + index
    if index == 0 or not 0 <= resolved < count:
        raise ObjParseError(f"{kind} index {index} out of range (have {count})", line=line, path=path)
    return resolved


def _floats(fields, n, line, path, record):
    if len(fields) < n:
        raise ObjParseError(f"'{record}' record needs {n} values, got {len(fields)}", line=line, path=path)
    try:
        return [float(x) for x in fields[:n]]
    except ValueError:
        raise ObjParseError(f"Malformed '{record}' record", line=line, path=path) from None


def parse_obj(text, path=None):
    """Return ``(vertices, faces, uvs)`` parsed from OBJ text."""
    positions = []
    texcoords = []
    corners = []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        record, *fields = line.split()
        if record == "v":
            positions.append(_floats(fields, 3, number, path, "v"))
        elif record == "vt":
            texcoords.append(_floats(fields, 2, number, path, "vt"))
        elif record == "f":
            if len(fields) < 3:
                raise ObjParseError("Face needs at least three corners", line=number, path=path)
            polygon = []
            for corner in fields:
                parts = corner.split("/")
                if len(parts) < 2 or not parts[1]:
                    raise ObjParseError(f"Face corner {corner!r} has no texture coordinate", line=number, path=path)
                v = _resolve(parts[0], len(positions), number, path, "vertex")
                t = _resolve(parts[1], len(texcoords), number, path, "texture")
                polygon.append((v, t, number))
            for i in range(1, len(polygon) - 1):
                corners.append((polygon[0], polygon[i], polygon[i + 1]))
        elif record not in IGNORED_RECORDS:
            raise ObjParseError(f"Unknown record {record!r}", line=number, path=path)

    if corners and not texcoords:
        raise ObjParseError("Mesh has no texture coordinates", path=path)

    vertices = np.array(positions, dtype=np.float64).reshape(-1, 3)
    texcoords = np.array(texcoords, dtype=np.float64).reshape(-1, 2)
    uvs = np.zeros((vertices.shape[0], 2))
    assigned = np.full(vertices.shape[0], -1, dtype=np.int64)
    faces = np.zeros((len(corners), 3), dtype=np.int64)
    for f, triangle in enumerate(corners):
        for c, (v, t, number) in enumerate(triangle):
            if assigned[v] < 0:
                assigned[v] = t
                uvs[v] = texcoords[t]
            elif assigned[v] != t and not np.allclose(texcoords[assigned[v]], texcoords[t], rtol=0.0, atol=1e-12):
                raise ObjParseError(
                    f"Vertex {v + 1} is used with two different texture coordinates", line=number, path=path
                )
            faces[f, c] = v
        if len({v for v, _, _ in triangle}) < 3:
            raise ObjParseError("Degenerate face repeats a vertex", line=triangle[0][2], path=path)
    return vertices, faces, uvs


def read_landmark_ids(path):
    path = Path(path)
    try:
        tokens = path.read_text().split()
        ids = np.array([int(token) for token in tokens], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise FaceSculptError(f"Cannot read landmark ids from {path}: {exc}", details={"path": str(path)}) from exc
    return ids


def write_landmark_ids(ids, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(f"{int(i)}\n" for i in ids))
    return path


def load_obj(path, landmarks_path=None):
    """Load a textured triangle mesh; landmark ids come from ``landmarks_path`` or the default sidecar."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ObjParseError(str(exc), path=path) from exc
    vertices, faces, uvs = parse_obj(text, path=path)
    if landmarks_path is None and sidecar_path(path).exists():
        landmarks_path = sidecar_path(path)
    landmark_ids = read_landmark_ids(landmarks_path) if landmarks_path is not None else np.zeros(0, dtype=np.int64)
    mesh = TriMesh(vertices, faces, uvs, landmark_ids)
    logger.info(
        "mesh_loaded path=%s vertices=%d faces=%d landmarks=%d",
        path,
        mesh.n_vertices,
        mesh.n_faces,
        mesh.landmark_ids.size,
    )
    return mesh


def save_obj(mesh, path, write_sidecar=True):
    """Write one ``vt`` per vertex so vertex and texture indices coincide."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [f"# face-sculpt mesh: {mesh.n_vertices} vertices, {mesh.n_faces} faces"]
    lines.extend(f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist())
    lines.extend(f"vt {u!r} {v!r}" for u, v in mesh.uvs.tolist())
    lines.extend(f"f {a + 1}/{a + 1} {b + 1}/{b + 1} {c + 1}/{c + 1}" for a, b, c in mesh.faces.tolist())
    path.write_text("\n".join(lines) + "\n")
    if write_sidecar and mesh.landmark_ids.size:
        write_landmark_ids(mesh.landmark_ids, sidecar_path(path))
    return path
