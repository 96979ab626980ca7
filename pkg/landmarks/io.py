"""Landmark CSV files: 68 rows of ``x,y`` with no header."""

from pathlib import Path

import numpy as np
import pandas as pd

from facesculpt.exceptions import InvalidLandmarksError
from landmarks.models import N_LANDMARKS, LandmarkSet


def read_landmarks(path):
    path = Path(path)
    try:
        frame = pd.read_csv(path, header=None, names=["x", "y"], dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise InvalidLandmarksError(f"{path}: {exc}", details={"path": str(path)}) from exc
    if len(frame) != N_LANDMARKS:
        raise InvalidLandmarksError(
            f"{path}: expected {N_LANDMARKS} rows, found {len(frame)}",
            details={"path": str(path), "rows": len(frame)},
        )
    try:
        return LandmarkSet(frame[["x", "y"]].to_numpy())
    except InvalidLandmarksError as exc:
        raise InvalidLandmarksError(f"{path}: {exc.message}", details={"path": str(path)}) from exc


def write_landmarks(landmarks, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(landmarks.points, columns=["x", "y"])
    frame.to_csv(path, header=False, index=False, float_format="%.17g")
    return path


def landmark_files(directory):
    return sorted(Path(directory).glob("*.csv"))


def read_landmark_dir(directory):
    files = landmark_files(directory)
    if not files:
        raise InvalidLandmarksError(f"No landmark CSV files in {directory}", details={"path": str(directory)})
    return [read_landmarks(path) for path in files]


def write_landmark_dir(samples, directory, prefix="face"):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    return [write_landmarks(sample, directory / f"{prefix}_{i:05d}.csv") for i, sample in enumerate(samples)]
