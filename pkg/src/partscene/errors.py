"""Exception types raised across the package."""

from __future__ import annotations


class PartSceneError(Exception):
    """Base class for all package errors."""


class PreconditionError(PartSceneError, ValueError):
    pass


class DegenerateGeometryError(PartSceneError, ValueError):
    pass


class InvalidPolygonError(PartSceneError, ValueError):
    pass


class NoConvergenceError(PartSceneError, RuntimeError):
    pass


class FittingFailedError(PartSceneError, RuntimeError):
    pass


class DisconnectedStructureError(PartSceneError, ValueError):
    """Some parts cannot be reached from the chosen root."""

    def __init__(self, unreachable, message: str | None = None):
        self.unreachable = sorted(unreachable)
        super().__init__(message or f"parts unreachable from root: {', '.join(self.unreachable)}")


class NamingCollisionError(PartSceneError, ValueError):
    def __init__(self, names):
        self.names = sorted(names)
        super().__init__(f"sanitized name collision: {', '.join(self.names)}")


class SchemaError(PartSceneError, ValueError):
    """A document does not follow the expected schema; ``path`` points at the field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class VoxelizationError(PartSceneError, ValueError):
    pass


class ConfigError(PartSceneError, ValueError):
    pass


class GeometryWarning(UserWarning):
    pass


class SceneWarning(UserWarning):
    """Recoverable scene-level problem, such as a floating object."""


class LabelMismatchError(PartSceneError, ValueError):
    """Prediction and annotation disagree on object or part labels."""
