"""Domain types shared across the engine, store, server, and client."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from fractions import Fraction

# The reserved owner marker for base-version lines. User names may never
# equal it, and may not contain control characters (NUL is used internally
# as a separator in scribe names).
BASE_OWNER = "__base__"

OrderKey = tuple[Fraction, ...]

# Pending-record content: a text line, or TOMBSTONE marking deletion.
TOMBSTONE = None
Content = str | None


class LineweaveError(Exception):
    """Error with a machine-readable code (mirrored on the wire)."""

    code = "error"

    def __init__(self, detail: str = ""):
        super().__init__(detail or self.code)
        self.detail = detail or self.code


class DuplicateName(LineweaveError):
    code = "duplicate_name"


class InvalidName(LineweaveError):
    code = "invalid_name"


class UnknownProject(LineweaveError):
    code = "unknown_project"


class FileExists(LineweaveError):
    code = "file_exists"


class UnknownFile(LineweaveError):
    code = "unknown_file"


class UnknownLine(LineweaveError):
    code = "unknown_line"


class LineDeleted(LineweaveError):
    """The line was removed from the base by a committed deletion."""

    code = "line_deleted"


class NotMember(LineweaveError):
    code = "not_member"


class MemberGrouped(LineweaveError):
    code = "member_grouped"


class NotGrouped(LineweaveError):
    code = "not_grouped"


class MembersConflict(LineweaveError):
    code = "members_conflict"


class GroupTooSmall(LineweaveError):
    code = "group_too_small"


class VersionUnknown(LineweaveError):
    code = "version_unknown"


class DuplicateVersion(LineweaveError):
    code = "duplicate_version"


class BadRequest(LineweaveError):
    code = "bad_request"


class AuthFailed(LineweaveError):
    code = "auth_failed"


class SequenceGap(LineweaveError):
    code = "sequence_gap"


class CorruptEntry(LineweaveError):
    code = "corrupt_entry"

    def __init__(self, seq: int, detail: str = ""):
        super().__init__(detail)
        self.seq = seq


class ConflictError(LineweaveError):
    """Materialization aborted; carries the blocking conflicts."""

    code = "conflict"

    def __init__(self, conflicts: list["Conflict"]):
        super().__init__(f"{len(conflicts)} conflicted line(s)")
        self.conflicts = conflicts


class ViewMode(enum.Enum):
    """The five per-collaborator display modes, in the canonical order."""

    FULL = "full"
    LOCATION = "location"
    CONFLICTS = "conflicts"
    HIDDEN = "hidden"
    INTERWEAVE = "interweave"


# Lower rank reveals more. Interweave shows everything (shared records
# additionally render as Own because the observer co-owns them).
_VISIBILITY_RANK = {
    ViewMode.FULL: 0,
    ViewMode.INTERWEAVE: 0,
    ViewMode.LOCATION: 1,
    ViewMode.CONFLICTS: 2,
    ViewMode.HIDDEN: 3,
}


def visibility_rank(mode: ViewMode) -> int:
    return _VISIBILITY_RANK[mode]


class LineStatus(enum.Enum):
    UNCHANGED = "unchanged"
    OWN = "own"
    OTHER = "other"
    CONFLICT = "conflict"
    LOCATION = "location"


@dataclass(frozen=True)
class Record:
    """One pending version of a line: who holds it and what they made of it."""

    owners: frozenset[str]
    content: Content  # TOMBSTONE (None) marks deletion

    def holds(self, user: str) -> bool:
        return user in self.owners


@dataclass
class Line:
    """A line slot with stable identity; survives edits, deletion, rollback."""

    id: str
    key: OrderKey
    scribe: str  # block name of the creator ("" for imported base lines)
    base: Content = TOMBSTONE  # base text; TOMBSTONE = not in the base
    records: list[Record] = field(default_factory=list)
    ever_based: bool = False  # distinguishes committed deletions from unknowns

    @property
    def in_base(self) -> bool:
        return self.base is not TOMBSTONE

    @property
    def dead(self) -> bool:
        """Retired slot: not in base and nobody holds a pending record."""
        return not self.in_base and not self.records

    def record_of(self, user: str) -> Record | None:
        for rec in self.records:
            if rec.holds(user):
                return rec
        return None


@dataclass(frozen=True)
class Conflict:
    file: str
    line: str
    base: Content
    variants: tuple[tuple[frozenset[str], Content], ...]  # >= 2 entries

    def variant_texts(self) -> list[Content]:
        return [content for _, content in self.variants]


@dataclass(frozen=True)
class AnnotatedLine:
    line: str
    text: str
    status: LineStatus
    users: frozenset[str] = frozenset()  # for OTHER / LOCATION
    variants: tuple[tuple[frozenset[str], Content], ...] | None = None

    def to_payload(self) -> dict:
        payload: dict = {
            "line": self.line,
            "text": self.text,
            "status": self.status.value,
        }
        if self.users:
            payload["users"] = sorted(self.users)
        if self.variants is not None:
            payload["variants"] = [
                {"owners": sorted(owners), "text": content}
                for owners, content in self.variants
            ]
        return payload


@dataclass(frozen=True)
class AnnotatedDocument:
    file: str
    lines: tuple[AnnotatedLine, ...]

    def to_payload(self) -> dict:
        return {"file": self.file, "lines": [l.to_payload() for l in self.lines]}


@dataclass(frozen=True)
class BaseVersion:
    """Numbered snapshot of the base, rich enough to restore line identity."""

    number: int
    parent: int | None
    content: dict[str, tuple[tuple[str, OrderKey, str], ...]]  # file -> (id, key, text)

    def text(self) -> dict[str, list[str]]:
        return {f: [t for _, _, t in rows] for f, rows in self.content.items()}


@dataclass(frozen=True)
class CommitResult:
    number: int
    promoted: int
    skipped: tuple[str, ...]  # conflicted line ids left out of the base


@dataclass(frozen=True)
class EditOutcome:
    line: str
    created: bool
    cancelled: bool
    conflicts_created: tuple[Conflict, ...]
    conflicts_removed: tuple[str, ...]


def validate_user_name(name: str) -> str:
    if not name or name == BASE_OWNER or any(ord(c) < 32 for c in name):
        raise InvalidName(f"invalid user name: {name!r}")
    return name
