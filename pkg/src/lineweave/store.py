"""Durable persistence: per-project command log, base archive, metadata.

Layout under the data directory:

    <data-dir>/<project>/log.bin       length-prefixed JSON command frames
    <data-dir>/<project>/bases/<n>.snap archived base version n (JSON, UTF-8, LF)
    <data-dir>/<project>/meta.json     informational state snapshot

The log is the source of truth: replaying it into a fresh Engine
reconstructs the exact pre-shutdown state. Archive snapshots and meta.json
are written for direct inspection and cheap reads; replay never needs them.
"""

from __future__ import annotations

import json
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path

from .model import (
    BaseVersion,
    CorruptEntry,
    DuplicateVersion,
    SequenceGap,
    VersionUnknown,
)
from .order import key_from_wire, key_to_wire
from .project import Engine, Project

_FRAME_HEADER = struct.Struct(">I")


@dataclass(frozen=True)
class LogEntry:
    seq: int
    project: str
    command: dict
    timestamp_ms: int


def _project_dir(data_dir: Path, project: str) -> Path:
    # Project names become directory names; keep them filesystem-safe.
    safe = project.replace("/", "_").replace("\\", "_").replace("..", "_")
    return data_dir / safe


class ProjectLog:
    """Append-only command log for one project, flushed per append."""

    def __init__(self, data_dir: str | Path, project: str, sync: bool = True):
        self.project = project
        self.sync = sync
        self.path = _project_dir(Path(data_dir), project) / "log.bin"
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.last_seq = 0
        for entry in self.scan():
            self.last_seq = entry.seq
        self._fh = open(self.path, "ab")

    def append(self, entry: LogEntry) -> int:
        if entry.seq != self.last_seq + 1:
            raise SequenceGap(
                f"expected seq {self.last_seq + 1}, got {entry.seq}"
            )
        payload = json.dumps(
            {
                "seq": entry.seq,
                "project": entry.project,
                "command": entry.command,
                "ts": entry.timestamp_ms,
            },
            sort_keys=True,
            separators=(",", ":"),
        ).encode("utf-8")
        self._fh.write(_FRAME_HEADER.pack(len(payload)) + payload)
        self._fh.flush()
        if self.sync:
            os.fsync(self._fh.fileno())
        self.last_seq = entry.seq
        return entry.seq

    def append_command(self, command: dict) -> int:
        return self.append(
            LogEntry(
                seq=self.last_seq + 1,
                project=self.project,
                command=command,
                timestamp_ms=int(time.time() * 1000),
            )
        )

    def scan(self) -> list[LogEntry]:
        """All well-formed entries; raises CorruptEntry on a broken tail."""
        entries: list[LogEntry] = []
        if not self.path.exists():
            return entries
        data = self.path.read_bytes()
        offset = 0
        while offset < len(data):
            seq = entries[-1].seq + 1 if entries else 1
            if offset + _FRAME_HEADER.size > len(data):
                raise CorruptEntry(seq, f"truncated frame header at seq {seq}")
            (length,) = _FRAME_HEADER.unpack_from(data, offset)
            offset += _FRAME_HEADER.size
            if offset + length > len(data):
                raise CorruptEntry(seq, f"truncated frame body at seq {seq}")
            try:
                obj = json.loads(data[offset : offset + length].decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                raise CorruptEntry(seq, f"undecodable frame at seq {seq}: {exc}")
            offset += length
            if obj.get("seq") != seq:
                raise CorruptEntry(seq, f"sequence gap in log at seq {seq}")
            entries.append(
                LogEntry(
                    seq=obj["seq"],
                    project=obj["project"],
                    command=obj["command"],
                    timestamp_ms=obj["ts"],
                )
            )
        return entries

    def close(self) -> None:
        self._fh.close()


class Store:
    """Filesystem-backed persistence for every project of a deployment."""

    def __init__(self, data_dir: str | Path, sync: bool = True):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sync = sync
        self._logs: dict[str, ProjectLog] = {}

    def log(self, project: str) -> ProjectLog:
        if project not in self._logs:
            self._logs[project] = ProjectLog(self.data_dir, project, sync=self.sync)
        return self._logs[project]

    def list_projects(self) -> list[str]:
        if not self.data_dir.exists():
            return []
        return sorted(
            p.name for p in self.data_dir.iterdir() if (p / "log.bin").exists()
        )

    # ------------------------------------------------------------------
    # replay

    def replay(self, project: str, engine: Engine | None = None) -> Engine:
        """Rebuild state by applying the project's log to a fresh engine."""
        engine = engine or Engine()
        for entry in self.log(project).scan():
            engine.apply_command(entry.command)
        return engine

    def replay_all(self) -> Engine:
        engine = Engine()
        for project in self.list_projects():
            self.replay(project, engine)
        return engine

    # ------------------------------------------------------------------
    # base archive

    def archive_base(self, project: str, base: BaseVersion) -> None:
        path = _project_dir(self.data_dir, project) / "bases" / f"{base.number}.snap"
        path.parent.mkdir(parents=True, exist_ok=True)
        if path.exists():
            existing = self.fetch_base(project, base.number)
            if existing.content == base.content:
                return
            raise DuplicateVersion(
                f"base {base.number} already archived with different content"
            )
        payload = {
            "number": base.number,
            "parent": base.parent,
            "files": {
                name: [[lid, key_to_wire(key), text] for lid, key, text in rows]
                for name, rows in base.content.items()
            },
        }
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
            fh.flush()
            if self.sync:
                os.fsync(fh.fileno())
        os.replace(tmp, path)

    def fetch_base(self, project: str, number: int) -> BaseVersion:
        path = _project_dir(self.data_dir, project) / "bases" / f"{number}.snap"
        if not path.exists():
            raise VersionUnknown(f"no archived base {number} for {project}")
        payload = json.loads(path.read_text(encoding="utf-8"))
        content = {
            name: tuple((lid, key_from_wire(key), text) for lid, key, text in rows)
            for name, rows in payload["files"].items()
        }
        return BaseVersion(
            number=payload["number"], parent=payload["parent"], content=content
        )

    def list_bases(self, project: str) -> list[int]:
        bases = _project_dir(self.data_dir, project) / "bases"
        if not bases.exists():
            return []
        return sorted(int(p.stem) for p in bases.glob("*.snap"))

    def sync_archive(self, project_state: Project) -> None:
        """Persist any in-memory archived bases not yet on disk."""
        on_disk = set(self.list_bases(project_state.name))
        for number, base in sorted(project_state.archive.items()):
            if number not in on_disk:
                self.archive_base(project_state.name, base)

    # ------------------------------------------------------------------
    # metadata

    def write_meta(self, project_state: Project) -> None:
        path = _project_dir(self.data_dir, project_state.name) / "meta.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        meta = {
            "name": project_state.name,
            "base_number": project_state.base_number,
            "base_parent": project_state.base_parent,
            "members": sorted(project_state.members),
            "groups": sorted(sorted(g) for g in project_state.groups),
            "prefs": {
                o: {u: m.value for u, m in sorted(modes.items())}
                for o, modes in sorted(project_state.prefs.items())
            },
            "files": sorted(project_state.files),
        }
        tmp = path.with_suffix(".tmp")
        tmp.write_text(
            json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        os.replace(tmp, path)

    def close(self) -> None:
        for log in self._logs.values():
            log.close()
        self._logs.clear()


def export_snapshot(snapshot: dict[str, list[str]], out_dir: str | Path) -> None:
    """Write a materialized snapshot as plain text files (UTF-8, LF)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, lines in snapshot.items():
        target = out / name
        target.parent.mkdir(parents=True, exist_ok=True)
        body = "\n".join(lines) + ("\n" if lines else "")
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(body)


def read_snapshot_dir(src_dir: str | Path) -> dict[str, list[str]]:
    """Read an exported snapshot directory back into file -> lines."""
    src = Path(src_dir)
    snapshot: dict[str, list[str]] = {}
    for path in sorted(src.rglob("*")):
        if not path.is_file():
            continue
        rel = path.relative_to(src).as_posix()
        text = path.read_text(encoding="utf-8")
        snapshot[rel] = text.split("\n")[:-1] if text.endswith("\n") else (
            text.split("\n") if text else []
        )
    return snapshot
