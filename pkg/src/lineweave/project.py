"""The authoritative state machine for one shared project.

All line records live here; edits, conflict detection, view composition,
materialization, commits, interweave groups, and rollbacks are methods on
:class:`Project`. Commands are applied strictly serially; reads never
mutate. :class:`Engine` manages the projects of one deployment and applies
serialized commands (the same schema the wire protocol and the durable log
use).
"""

from __future__ import annotations

import json
from bisect import insort
from dataclasses import dataclass, field
from fractions import Fraction

from .model import (
    TOMBSTONE,
    AnnotatedDocument,
    AnnotatedLine,
    BadRequest,
    BaseVersion,
    CommitResult,
    Conflict,
    ConflictError,
    Content,
    DuplicateName,
    EditOutcome,
    FileExists,
    GroupTooSmall,
    InvalidName,
    Line,
    LineDeleted,
    LineStatus,
    LineweaveError,
    MemberGrouped,
    MembersConflict,
    NotGrouped,
    NotMember,
    OrderKey,
    Record,
    UnknownFile,
    UnknownLine,
    UnknownProject,
    VersionUnknown,
    ViewMode,
    validate_user_name,
    visibility_rank,
)
from .order import TOP, child_key, is_child, key_to_wire, slot_between

Snapshot = dict[str, list[str]]  # file -> plain text lines


def user_sees(line: Line, user: str) -> bool:
    """Whether the line is part of the user's own document."""
    rec = line.record_of(user)
    if rec is not None:
        return rec.content is not TOMBSTONE
    return line.in_base


@dataclass
class FileState:
    name: str
    lines: dict[str, Line] = field(default_factory=dict)
    _order: list[tuple[OrderKey, str]] = field(default_factory=list)

    def add(self, line: Line) -> None:
        self.lines[line.id] = line
        insort(self._order, (line.key, line.id))

    def in_order(self):
        for _, line_id in self._order:
            yield self.lines[line_id]

    def children_of(self, parent: OrderKey) -> list[Line]:
        """Direct children (one level below parent), in document order.

        Dead slots are included on purpose: their position still anchors
        sibling placement, keeping insertion deterministic across replays.
        """
        out = []
        for key, line_id in self._order:
            if key <= parent:
                continue
            if key[: len(parent)] != parent:
                break
            if is_child(key, parent):
                out.append(self.lines[line_id])
        return out

    def place_after(self, anchor: Line | None, scribe: str, viewer: str) -> OrderKey:
        """Key for a new line inserted after `anchor` by `viewer`.

        The new line becomes the anchor's child, placed before every child
        the viewer can see (so it lands immediately after the anchor in
        their own document) and ordered by scribe name among siblings the
        viewer cannot see (blind concurrent inserts at one position line
        up per owner instead of interleaving).
        """
        parent = anchor.key if anchor is not None else TOP
        siblings = self.children_of(parent)
        idx = len(siblings)
        for i, child in enumerate(siblings):
            if user_sees(child, viewer) or child.scribe > scribe:
                idx = i
                break
        left = siblings[idx - 1].key[-1] if idx > 0 else None
        right = siblings[idx].key[-1] if idx < len(siblings) else None
        return child_key(parent, slot_between(left, right))


MODE_CONFLICT_CAPABLE = (0, 2)  # visibility ranks that may surface Conflict


class Project:
    def __init__(self, name: str):
        self.name = name
        self.base_number = 0
        self.base_parent: int | None = None
        self.members: set[str] = set()
        self.files: dict[str, FileState] = {}
        self.prefs: dict[str, dict[str, ViewMode]] = {}
        self.groups: list[frozenset[str]] = []
        self.archive: dict[int, BaseVersion] = {}
        self._line_seq = 0

    # ------------------------------------------------------------------
    # membership and groups

    def add_member(self, user: str) -> None:
        validate_user_name(user)
        self.members.add(user)

    def _require_member(self, user: str) -> None:
        if user not in self.members:
            raise NotMember(f"unknown user: {user}")

    def group_of(self, user: str) -> frozenset[str] | None:
        for group in self.groups:
            if user in group:
                return group
        return None

    def scribe_set(self, user: str) -> frozenset[str]:
        return self.group_of(user) or frozenset((user,))

    @staticmethod
    def scribe_name(scribe: frozenset[str]) -> str:
        return "+".join(sorted(scribe))

    def interweave_start(self, members: set[str] | frozenset[str]) -> frozenset[str]:
        group = frozenset(members)
        if len(group) < 2:
            raise GroupTooSmall("interweave needs at least two members")
        for user in group:
            self._require_member(user)
            if self.group_of(user) is not None:
                raise MemberGrouped(f"{user} is already in an active group")
        # Validate before mutating: members' pendings must agree per line.
        merges: list[tuple[Line, list[Record]]] = []
        for fs in self.files.values():
            for line in fs.in_order():
                touched = [r for r in line.records if r.owners & group]
                if not touched:
                    continue
                if len({r.content for r in touched}) > 1:
                    raise MembersConflict(
                        f"members hold differing versions of line {line.id}"
                    )
                merges.append((line, touched))
        for line, touched in merges:
            owners = frozenset().union(*(r.owners for r in touched)) | group
            merged = Record(owners=owners, content=touched[0].content)
            line.records = [r for r in line.records if not (r.owners & group)]
            line.records.append(merged)
        self.groups.append(group)
        return group

    def interweave_stop(self, member: str) -> frozenset[str]:
        self._require_member(member)
        group = self.group_of(member)
        if group is None:
            raise NotGrouped(f"{member} is not in an active group")
        self.groups.remove(group)
        return group

    # ------------------------------------------------------------------
    # files and edits

    def import_base(self, file: str, lines: list[str]) -> BaseVersion:
        if file in self.files:
            raise FileExists(f"file already present: {file}")
        for text in lines:
            self._check_text(text)
        fs = FileState(file)
        for i, text in enumerate(lines, start=1):
            line = Line(
                id=self._new_line_id(),
                key=(Fraction(i),),
                scribe="",
                base=text,
            )
            line.ever_based = True
            fs.add(line)
        self.files[file] = fs
        return self.base_version()

    def _new_line_id(self) -> str:
        self._line_seq += 1
        return f"l{self._line_seq}"

    @staticmethod
    def _check_text(text) -> str:
        if not isinstance(text, str) or "\n" in text or "\r" in text:
            raise BadRequest("line text must be a single-line string")
        return text

    def _file(self, file: str) -> FileState:
        fs = self.files.get(file)
        if fs is None:
            raise UnknownFile(f"unknown file: {file}")
        return fs

    def _target_line(self, fs: FileState, line_id: str, user: str) -> Line:
        line = fs.lines.get(line_id)
        if line is None:
            raise UnknownLine(f"unknown line: {line_id}")
        if not user_sees(line, user):
            if line.ever_based and not line.in_base:
                raise LineDeleted(f"line {line_id} was deleted from the base")
            raise UnknownLine(f"line {line_id} is not in {user}'s view")
        return line

    def apply_edit(
        self,
        user: str,
        file: str,
        op: str,
        line_id: str | None = None,
        text: str | None = None,
    ) -> EditOutcome:
        self._require_member(user)
        fs = self._file(file)
        scribe = self.scribe_set(user)

        if op == "insert_after":
            anchor = None
            if line_id is not None:
                anchor = self._target_line(fs, line_id, user)
            new = Line(
                id=self._new_line_id(),
                key=fs.place_after(anchor, self.scribe_name(scribe), user),
                scribe=self.scribe_name(scribe),
            )
            new.records.append(Record(owners=scribe, content=self._check_text(text)))
            fs.add(new)
            conflict = self._conflict_on(file, new)
            return EditOutcome(
                line=new.id,
                created=True,
                cancelled=False,
                conflicts_created=(conflict,) if conflict else (),
                conflicts_removed=(),
            )

        if op not in ("replace", "delete"):
            raise BadRequest(f"unknown edit op: {op}")
        if line_id is None:
            raise BadRequest("replace/delete require a line id")
        line = self._target_line(fs, line_id, user)
        desired: Content = TOMBSTONE if op == "delete" else self._check_text(text)

        before = self._conflict_on(file, line)
        # Detach the scribe set from whatever records it appears in; any
        # co-owners left behind keep the old content as their own record.
        kept = []
        for rec in line.records:
            rest = rec.owners - scribe
            if rest == rec.owners:
                kept.append(rec)
            elif rest:
                kept.append(Record(owners=rest, content=rec.content))
        line.records = kept
        cancelled = desired == line.base  # edit back to base cancels
        if not cancelled:
            line.records.append(Record(owners=scribe, content=desired))
        after = self._conflict_on(file, line)
        return EditOutcome(
            line=line.id,
            created=False,
            cancelled=cancelled,
            conflicts_created=(after,) if after and not before else (),
            conflicts_removed=(line.id,) if before and not after else (),
        )

    # ------------------------------------------------------------------
    # conflicts

    def _conflict_on(self, file: str, line: Line) -> Conflict | None:
        if len(line.records) < 2:
            return None
        if len({r.content for r in line.records}) < 2:
            return None
        variants = tuple(
            sorted(
                ((r.owners, r.content) for r in line.records),
                key=lambda v: min(v[0]),
            )
        )
        return Conflict(file=file, line=line.id, base=line.base, variants=variants)

    def conflicts(self, file: str | None = None) -> list[Conflict]:
        names = [file] if file is not None else sorted(self.files)
        out = []
        for name in names:
            fs = self._file(name)
            for line in fs.in_order():
                conflict = self._conflict_on(name, line)
                if conflict:
                    out.append(conflict)
        return out

    # ------------------------------------------------------------------
    # views

    def set_prefs(self, observer: str, modes: dict[str, ViewMode | str]) -> dict[str, ViewMode]:
        self._require_member(observer)
        parsed: dict[str, ViewMode] = {}
        for user, mode in modes.items():
            if user == observer:
                raise BadRequest("own changes are always shown")
            parsed[user] = mode if isinstance(mode, ViewMode) else ViewMode(mode)
        stored = self.prefs.setdefault(observer, {})
        stored.update(parsed)
        return dict(stored)

    def prefs_of(self, observer: str) -> dict[str, ViewMode]:
        return dict(self.prefs.get(observer, {}))

    def render_view(
        self,
        file: str,
        observer: str,
        prefs: dict[str, ViewMode] | None = None,
    ) -> AnnotatedDocument:
        self._require_member(observer)
        fs = self._file(file)
        if prefs is None:
            prefs = self.prefs.get(observer, {})
        out = []
        for line in fs.in_order():
            rendered = self._render_line(line, observer, prefs)
            if rendered is not None:
                out.append(rendered)
        return AnnotatedDocument(file=file, lines=tuple(out))

    def _render_line(
        self, line: Line, observer: str, prefs: dict[str, ViewMode]
    ) -> AnnotatedLine | None:
        own = line.record_of(observer)
        if own is not None and own.content is TOMBSTONE:
            return None  # own deletion hides the line

        def rank_of(rec: Record) -> int:
            return min(
                visibility_rank(prefs.get(u, ViewMode.HIDDEN)) for u in rec.owners
            )

        overlays = [
            (rank_of(rec), rec) for rec in line.records if not rec.holds(observer)
        ]

        if own is not None:
            conflicting = [
                rec
                for rank, rec in overlays
                if rank in MODE_CONFLICT_CAPABLE and rec.content != own.content
            ]
            if conflicting:
                involved = [own] + conflicting
                variants = tuple(
                    sorted(
                        ((r.owners, r.content) for r in involved),
                        key=lambda v: min(v[0]),
                    )
                )
                users = frozenset().union(*(r.owners for r in conflicting))
                return AnnotatedLine(
                    line=line.id,
                    text=own.content,
                    status=LineStatus.CONFLICT,
                    users=users,
                    variants=variants,
                )
            return AnnotatedLine(line=line.id, text=own.content, status=LineStatus.OWN)

        full = [rec for rank, rec in overlays if rank == 0]
        located = [rec for rank, rec in overlays if rank == 1]
        if full:
            shown = min(full, key=lambda r: (r.content is TOMBSTONE, min(r.owners)))
            text = shown.content if shown.content is not TOMBSTONE else line.base
            if text is TOMBSTONE:
                return None
            users = frozenset().union(*(r.owners for r in full))
            return AnnotatedLine(
                line=line.id, text=text, status=LineStatus.OTHER, users=users
            )
        if located:
            users = frozenset().union(*(r.owners for r in located))
            text = line.base if line.in_base else ""
            return AnnotatedLine(
                line=line.id, text=text, status=LineStatus.LOCATION, users=users
            )
        if not line.in_base:
            return None
        return AnnotatedLine(line=line.id, text=line.base, status=LineStatus.UNCHANGED)

    # ------------------------------------------------------------------
    # materialization

    def materialize(
        self,
        include: set[str] | frozenset[str],
        observer_wins: str | None = None,
    ) -> Snapshot:
        include = frozenset(include)
        for user in include:
            self._require_member(user)
        if observer_wins is not None and observer_wins not in include:
            raise BadRequest("observer_wins must be part of the include set")
        snapshot: Snapshot = {}
        blockers: list[Conflict] = []
        for name in sorted(self.files):
            fs = self.files[name]
            rows: list[str] = []
            for line in fs.in_order():
                recs = [r for r in line.records if r.owners & include]
                contents = {r.content for r in recs}
                if len(contents) > 1:
                    if observer_wins is None:
                        variants = tuple(
                            sorted(
                                ((r.owners, r.content) for r in recs),
                                key=lambda v: min(v[0]),
                            )
                        )
                        blockers.append(
                            Conflict(
                                file=name,
                                line=line.id,
                                base=line.base,
                                variants=variants,
                            )
                        )
                        continue
                    winner = line.record_of(observer_wins)
                    content = winner.content if winner is not None else line.base
                elif recs:
                    content = recs[0].content
                else:
                    content = line.base
                if content is not TOMBSTONE:
                    rows.append(content)
            snapshot[name] = rows
        if blockers:
            raise ConflictError(blockers)
        return snapshot

    # ------------------------------------------------------------------
    # commit / versions

    def base_version(self) -> BaseVersion:
        content = {
            name: tuple(
                (line.id, line.key, line.base)
                for line in fs.in_order()
                if line.in_base
            )
            for name, fs in sorted(self.files.items())
        }
        return BaseVersion(
            number=self.base_number, parent=self.base_parent, content=content
        )

    def commit(self, user: str) -> CommitResult:
        self._require_member(user)
        previous = self.base_version()
        promoted = 0
        skipped: list[str] = []
        for name in sorted(self.files):
            fs = self.files[name]
            for line in fs.in_order():
                rec = line.record_of(user)
                if rec is None:
                    continue
                if self._conflict_on(name, line) is not None:
                    skipped.append(line.id)
                    continue
                line.base = rec.content
                if line.in_base:
                    line.ever_based = True
                promoted += 1
                # The promoted record now equals the base, as does any
                # other record carrying the same content: prune them all.
                line.records = [r for r in line.records if r.content != line.base]
        if promoted:
            self.archive[previous.number] = previous
            self.base_number = previous.number + 1
            self.base_parent = previous.number
        return CommitResult(
            number=self.base_number, promoted=promoted, skipped=tuple(skipped)
        )

    def versions(self) -> list[int]:
        return sorted(set(self.archive) | {self.base_number})

    def fetch_version(self, number: int) -> BaseVersion:
        if number == self.base_number:
            return self.base_version()
        if number in self.archive:
            return self.archive[number]
        raise VersionUnknown(f"no base version {number}")

    def rollback(self, version: int) -> BaseVersion:
        source = self.fetch_version(version)
        previous = self.base_version()
        self.archive[previous.number] = previous
        for name, fs in self.files.items():
            restored = {
                line_id: text for line_id, _, text in source.content.get(name, ())
            }
            for line in fs.in_order():
                line.records = []
                line.base = restored.get(line.id, TOMBSTONE)
                if line.in_base:
                    line.ever_based = True
        self.base_number = previous.number + 1
        self.base_parent = version
        return self.base_version()

    # ------------------------------------------------------------------
    # introspection

    def state_fingerprint(self) -> str:
        """Canonical JSON of the full project state (for equality checks)."""
        files = {}
        for name, fs in sorted(self.files.items()):
            rows = []
            for line in fs.in_order():
                rows.append(
                    {
                        "id": line.id,
                        "key": key_to_wire(line.key),
                        "scribe": line.scribe,
                        "base": line.base,
                        "records": sorted(
                            ([sorted(r.owners), r.content] for r in line.records),
                        ),
                    }
                )
            files[name] = rows
        state = {
            "name": self.name,
            "number": self.base_number,
            "parent": self.base_parent,
            "members": sorted(self.members),
            "groups": sorted(sorted(g) for g in self.groups),
            "prefs": {
                o: {u: m.value for u, m in sorted(modes.items())}
                for o, modes in sorted(self.prefs.items())
            },
            "files": files,
            "seq": self._line_seq,
            "versions": self.versions(),
        }
        return json.dumps(state, sort_keys=True, separators=(",", ":"))


class Engine:
    """All projects of one deployment, plus serialized command dispatch."""

    def __init__(self):
        self.projects: dict[str, Project] = {}

    def create_project(self, name: str) -> Project:
        if not name or not isinstance(name, str):
            raise InvalidName("project name must be a non-empty string")
        if name in self.projects:
            raise DuplicateName(f"project already exists: {name}")
        project = Project(name)
        self.projects[name] = project
        return project

    def project(self, name: str) -> Project:
        project = self.projects.get(name)
        if project is None:
            raise UnknownProject(f"unknown project: {name}")
        return project

    def apply_command(self, command: dict) -> dict:
        """Apply one serialized command; returns a JSON-compatible result.

        This is the single write path shared by the server, the log
        replayer, and tests; anything not listed here cannot change state.
        """
        kind = command.get("cmd")
        if kind == "create":
            self.create_project(command["project"])
            return {"project": command["project"]}
        project = self.project(command["project"])
        if kind == "join":
            project.add_member(command["user"])
            return {"members": sorted(project.members)}
        if kind == "import":
            base = project.import_base(command["file"], command["lines"])
            return {"file": command["file"], "number": base.number}
        if kind == "edit":
            outcome = project.apply_edit(
                command["user"],
                command["file"],
                command["op"],
                line_id=command.get("line"),
                text=command.get("text"),
            )
            return {
                "line": outcome.line,
                "created": outcome.created,
                "cancelled": outcome.cancelled,
                "conflicts_created": [
                    conflict_payload(c) for c in outcome.conflicts_created
                ],
                "conflicts_removed": list(outcome.conflicts_removed),
            }
        if kind == "set_prefs":
            stored = project.set_prefs(command["user"], command["modes"])
            return {"modes": {u: m.value for u, m in sorted(stored.items())}}
        if kind == "commit":
            result = project.commit(command["user"])
            return {
                "number": result.number,
                "promoted": result.promoted,
                "skipped": list(result.skipped),
            }
        if kind == "interweave_start":
            group = project.interweave_start(set(command["members"]))
            return {"group": sorted(group), "groups": group_payload(project)}
        if kind == "interweave_stop":
            group = project.interweave_stop(command["member"])
            return {"group": sorted(group), "groups": group_payload(project)}
        if kind == "rollback":
            base = project.rollback(command["version"])
            return {"number": base.number, "parent": base.parent}
        raise BadRequest(f"unknown command: {kind!r}")


def group_payload(project: Project) -> list[list[str]]:
    return sorted(sorted(g) for g in project.groups)


def conflict_payload(conflict: Conflict) -> dict:
    return {
        "file": conflict.file,
        "line": conflict.line,
        "base": conflict.base,
        "variants": [
            {"owners": sorted(owners), "text": content}
            for owners, content in conflict.variants
        ],
    }
