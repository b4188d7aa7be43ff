"""lineweave: shared-repository collaborative editing with per-line
change tracking, live conflict awareness, and explicit commit promotion."""

from .model import (
    TOMBSTONE,
    AnnotatedDocument,
    AnnotatedLine,
    BaseVersion,
    CommitResult,
    Conflict,
    ConflictError,
    EditOutcome,
    LineStatus,
    LineweaveError,
    ViewMode,
)
from .project import Engine, Project

__all__ = [
    "TOMBSTONE",
    "AnnotatedDocument",
    "AnnotatedLine",
    "BaseVersion",
    "CommitResult",
    "Conflict",
    "ConflictError",
    "EditOutcome",
    "Engine",
    "LineStatus",
    "LineweaveError",
    "Project",
    "ViewMode",
]

__version__ = "0.1.0"
