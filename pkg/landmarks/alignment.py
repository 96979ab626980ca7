import logging

import numpy as np

from facesculpt.exceptions import DegenerateAnchorError
from landmarks.models import AlignmentTransform, LandmarkSet

logger = logging.getLogger(__name__)


def _anchor_transform(source_anchors, target_anchors):
    """The unique affine map taking three source anchors onto three target anchors."""
    system = np.hstack([source_anchors, np.ones((3, 1))])
    spread = max(np.ptp(source_anchors, axis=0).max(), 1.0)
    if abs(np.linalg.det(system)) <= 1e-12 * spread**2:
        raise DegenerateAnchorError(
            "Alignment anchors are collinear",
            details={"anchors": source_anchors.tolist()},
        )
    solution = np.linalg.solve(system, target_anchors)
    return AlignmentTransform(solution.T)


def align_to_average(landmarks, average):
    """Affinely map ``landmarks`` so its eye and mouth centres land on ``average``'s."""
    transform = _anchor_transform(landmarks.anchors(), average.anchors())
    return LandmarkSet(transform.apply(landmarks.points)), transform


def average_face(samples, passes=3):
    """Mean face after repeatedly aligning every sample to the running mean."""
    if not samples:
        raise DegenerateAnchorError("Cannot average an empty landmark corpus")
    mean = samples[0]
    for i in range(passes):
        aligned = [align_to_average(sample, mean)[0] for sample in samples]
        mean = LandmarkSet(np.mean([s.points for s in aligned], axis=0))
        logger.debug("average_face pass=%d samples=%d", i + 1, len(samples))
    return mean


def align_corpus(samples, average):
    return [align_to_average(sample, average)[0] for sample in samples]


def normalize_landmarks(landmarks):
    """Centre on the origin and scale to unit RMS distance from it."""
    centred = landmarks.points - landmarks.points.mean(axis=0)
    rms = np.sqrt(np.mean(np.sum(centred**2, axis=1)))
    if rms <= 0:
        raise DegenerateAnchorError("Cannot normalize a landmark set collapsed to one point")
    return LandmarkSet(centred / rms)
