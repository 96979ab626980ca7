"""Error types shared by every stage of the pipeline.

Each error carries a short machine-readable ``code`` so the command line can
emit a JSON report instead of a traceback.
"""


class FaceSculptError(Exception):
    code = "face_sculpt_error"

    def __init__(self, message, details=None):
        super().__init__(message)
        self.message = message
        self.details = details

    def as_report(self):
        report = {"error": self.code, "message": self.message}
        if self.details is not None:
            report["details"] = self.details
        return report


class InvalidLandmarksError(FaceSculptError):
    code = "invalid_landmarks"


class DegenerateAnchorError(FaceSculptError):
    code = "degenerate_anchor"


class RankError(FaceSculptError):
    code = "rank_deficient"


class InsufficientSamplesError(FaceSculptError):
    code = "insufficient_samples"


class ShapeMismatchError(FaceSculptError):
    code = "shape_mismatch"


class MissingGradientError(FaceSculptError):
    code = "missing_gradient"


class NonScalarLossError(FaceSculptError):
    code = "non_scalar_loss"


class NonFiniteError(FaceSculptError):
    code = "non_finite"


class ObjParseError(FaceSculptError):
    code = "obj_parse_error"

    def __init__(self, message, line=None, path=None):
        location = f"{path}:{line}" if path and line else (f"line {line}" if line else path)
        super().__init__(
            f"{location}: {message}" if location else message,
            details={"line": line, "path": str(path) if path else None},
        )
        self.line = line


class BehindCameraError(FaceSculptError):
    code = "behind_camera"


class DivergenceError(FaceSculptError):
    code = "diverged"


class EmptyMeshError(FaceSculptError):
    code = "empty_mesh"


class FeatureFileError(FaceSculptError):
    code = "feature_file_error"


class ConfigValidationError(FaceSculptError):
    code = "invalid_config"

    def __init__(self, errors):
        super().__init__("Pipeline configuration is invalid.", details=errors)
        self.errors = errors
