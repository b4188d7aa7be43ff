"""Network service: authenticates members, serializes commands per
project, broadcasts change/presence/chat events, and answers view and
materialization queries.

One listen port carries two framings of the same message schema:
newline-delimited JSON for headless clients, and WebSocket (path /ws)
for browsers; the first request line decides which. Plain GETs on other
paths serve the bundled web editor's static files when configured.
"""

from __future__ import annotations

import asyncio
import json
import threading
from pathlib import Path

from websockets.frames import Opcode
from websockets.http11 import Request
from websockets.server import ServerProtocol

from .model import (
    AuthFailed,
    BadRequest,
    ConflictError,
    LineweaveError,
    UnknownFile,
    UnknownProject,
)
from .project import Engine, Project, conflict_payload, group_payload
from .store import Store

_HTTP_METHODS = (b"GET ", b"POST ", b"HEAD ", b"OPTIONS ", b"PUT ", b"DELETE ")

_CONTENT_TYPES = {
    ".html": "text/html; charset=utf-8",
    ".js": "text/javascript; charset=utf-8",
    ".mjs": "text/javascript; charset=utf-8",
    ".css": "text/css; charset=utf-8",
    ".json": "application/json",
    ".map": "application/json",
    ".png": "image/png",
    ".svg": "image/svg+xml",
}


def message(type_: str, seq: int, payload: dict) -> dict:
    return {"type": type_, "seq": seq, "payload": payload}


class Session:
    _next_id = 0

    def __init__(self, send, peer: str):
        Session._next_id += 1
        self.id = Session._next_id
        self.peer = peer
        self.user: str | None = None
        self.project: str | None = None
        self.files: set[str] = set()
        self._send = send
        self.closed = False

    def send(self, msg: dict) -> None:
        if self.closed:
            return
        try:
            self._send(msg)
        except Exception:
            self.closed = True


class SyncServer:
    def __init__(
        self,
        data_dir: str | Path,
        tokens: dict[str, str] | None = None,
        static_dir: str | Path | None = None,
        sync_log: bool = True,
    ):
        self.store = Store(data_dir, sync=sync_log)
        self.engine: Engine = self.store.replay_all()
        self.tokens = tokens
        self.static_dir = Path(static_dir) if static_dir else None
        self.sessions: dict[int, Session] = {}
        self._locks: dict[str, asyncio.Lock] = {}
        self._server: asyncio.AbstractServer | None = None
        self.port: int | None = None

    # ------------------------------------------------------------------
    # lifecycle

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> int:
        self._server = await asyncio.start_server(self._handle_conn, host, port)
        self.port = self._server.sockets[0].getsockname()[1]
        return self.port

    async def serve_forever(self) -> None:
        assert self._server is not None
        async with self._server:
            await self._server.serve_forever()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        self.store.close()

    def _lock(self, project: str) -> asyncio.Lock:
        return self._locks.setdefault(project, asyncio.Lock())

    # ------------------------------------------------------------------
    # connection plumbing

    async def _handle_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        peer = str(writer.get_extra_info("peername"))
        try:
            first = await reader.readline()
        except (ConnectionError, asyncio.IncompleteReadError):
            writer.close()
            return
        if not first:
            writer.close()
            return
        try:
            if first.startswith(_HTTP_METHODS):
                await self._handle_http(first, reader, writer, peer)
            else:
                await self._handle_jsonl(first, reader, writer, peer)
        except (ConnectionError, asyncio.IncompleteReadError):
            pass
        finally:
            writer.close()

    async def _handle_jsonl(self, first: bytes, reader, writer, peer: str):
        def send(msg: dict) -> None:
            writer.write(json.dumps(msg, separators=(",", ":")).encode("utf-8") + b"\n")

        session = Session(send, peer)
        self.sessions[session.id] = session
        try:
            line = first
            while line:
                line = line.strip()
                if line:
                    await self._dispatch_raw(session, line.decode("utf-8", "replace"))
                    await writer.drain()
                line = await reader.readline()
        finally:
            await self._drop_session(session)

    async def _handle_http(self, first: bytes, reader, writer, peer: str):
        head = first
        while b"\r\n\r\n" not in head:
            chunk = await reader.readline()
            if not chunk:
                return
            head += chunk
            if head.endswith(b"\r\n\r\n") or chunk in (b"\r\n", b"\n"):
                break
        request_line = first.decode("latin-1").strip()
        parts = request_line.split(" ")
        path = parts[1] if len(parts) > 1 else "/"
        headers = {}
        for raw in head.split(b"\r\n")[1:]:
            if b":" in raw:
                k, v = raw.split(b":", 1)
                headers[k.decode("latin-1").strip().lower()] = v.decode("latin-1").strip()

        if path.split("?")[0] == "/ws" and "websocket" in headers.get("upgrade", "").lower():
            await self._handle_ws(head, reader, writer, peer)
        else:
            self._serve_static(path.split("?")[0], writer)
            await writer.drain()

    def _serve_static(self, path: str, writer) -> None:
        body = None
        ctype = "text/plain; charset=utf-8"
        status = "404 Not Found"
        if self.static_dir is not None:
            rel = "index.html" if path in ("", "/") else path.lstrip("/")
            target = (self.static_dir / rel).resolve()
            root = self.static_dir.resolve()
            if str(target).startswith(str(root)) and target.is_file():
                body = target.read_bytes()
                ctype = _CONTENT_TYPES.get(target.suffix, "application/octet-stream")
                status = "200 OK"
        if body is None:
            if path in ("", "/"):
                body = b"lineweave sync server\n"
                status = "200 OK"
            else:
                body = b"not found\n"
        writer.write(
            (
                f"HTTP/1.1 {status}\r\n"
                f"Content-Type: {ctype}\r\n"
                f"Content-Length: {len(body)}\r\n"
                "Connection: close\r\n\r\n"
            ).encode("latin-1")
            + body
        )

    async def _handle_ws(self, head: bytes, reader, writer, peer: str):
        proto = ServerProtocol()
        proto.receive_data(head)
        events = proto.events_received()
        if not events or not isinstance(events[0], Request):
            return
        response = proto.accept(events[0])
        proto.send_response(response)
        self._flush_ws(proto, writer)
        if response.status_code != 101:
            return

        def send(msg: dict) -> None:
            proto.send_text(json.dumps(msg, separators=(",", ":")).encode("utf-8"))
            self._flush_ws(proto, writer)

        session = Session(send, peer)
        self.sessions[session.id] = session
        fragments: list[bytes] = []
        try:
            while True:
                data = await reader.read(65536)
                if not data:
                    break
                proto.receive_data(data)
                for frame in proto.events_received():
                    if frame.opcode is Opcode.CLOSE:
                        self._flush_ws(proto, writer)
                        return
                    if frame.opcode is Opcode.PING:
                        self._flush_ws(proto, writer)
                        continue
                    if frame.opcode in (Opcode.TEXT, Opcode.CONT):
                        fragments.append(frame.data)
                        if frame.fin:
                            text = b"".join(fragments).decode("utf-8", "replace")
                            fragments = []
                            await self._dispatch_raw(session, text)
                self._flush_ws(proto, writer)
                await writer.drain()
                if proto.close_expected():
                    break
        finally:
            await self._drop_session(session)

    @staticmethod
    def _flush_ws(proto: ServerProtocol, writer) -> None:
        for chunk in proto.data_to_send():
            if chunk:
                writer.write(chunk)

    async def _drop_session(self, session: Session) -> None:
        session.closed = True
        self.sessions.pop(session.id, None)
        if session.project:
            self._broadcast_presence(session.project)

    # ------------------------------------------------------------------
    # message dispatch

    async def _dispatch_raw(self, session: Session, raw: str) -> None:
        try:
            msg = json.loads(raw)
            assert isinstance(msg, dict)
        except (json.JSONDecodeError, AssertionError):
            session.send(message("error", 0, {"code": "bad_request", "detail": "unparseable message"}))
            return
        seq = msg.get("seq")
        if not isinstance(seq, int) or seq < 1:
            session.send(message("error", 0, {"code": "bad_request", "detail": "requests need seq >= 1"}))
            return
        mtype = msg.get("type")
        payload = msg.get("payload") or {}
        try:
            await self._dispatch(session, mtype, seq, payload)
        except ConflictError as exc:
            session.send(
                message(
                    "error",
                    seq,
                    {
                        "code": exc.code,
                        "detail": exc.detail,
                        "conflicts": [conflict_payload(c) for c in exc.conflicts],
                    },
                )
            )
        except LineweaveError as exc:
            session.send(message("error", seq, {"code": exc.code, "detail": exc.detail}))
        except Exception as exc:  # keep the connection alive on server bugs
            session.send(message("error", seq, {"code": "internal", "detail": repr(exc)}))

    async def _dispatch(self, session: Session, mtype: str, seq: int, payload: dict) -> None:
        if mtype == "hello":
            session.send(message("hello", seq, {"server": "lineweave", "protocol": 1}))
            return
        if mtype == "join":
            await self._on_join(session, seq, payload)
            return
        if session.project is None:
            raise BadRequest("join a project first")
        handler = {
            "open_file": self._on_open_file,
            "edit": self._on_edit,
            "set_prefs": self._on_set_prefs,
            "commit": self._on_commit,
            "interweave": self._on_interweave,
            "chat": self._on_chat,
            "materialize": self._on_materialize,
        }.get(mtype)
        if handler is None:
            raise BadRequest(f"unknown message type: {mtype!r}")
        await handler(session, seq, payload)

    # ------------------------------------------------------------------
    # join / presence / chat

    def _check_token(self, project: str, token: str | None) -> None:
        if self.tokens is None:
            return
        expected = self.tokens.get(project)
        if expected is None or token != expected:
            raise AuthFailed(f"bad token for project {project!r}")

    async def _on_join(self, session: Session, seq: int, payload: dict) -> None:
        project_name = payload.get("project")
        user = payload.get("user")
        if not isinstance(project_name, str) or not isinstance(user, str):
            raise BadRequest("join needs project and user")
        self._check_token(project_name, payload.get("token"))
        async with self._lock(project_name):
            if project_name not in self.engine.projects:
                if not payload.get("create"):
                    raise UnknownProject(f"unknown project: {project_name}")
                self._apply_logged({"cmd": "create", "project": project_name})
            project = self.engine.project(project_name)
            if user not in project.members:
                self._apply_logged(
                    {"cmd": "join", "project": project_name, "user": user}
                )
            session.user = user
            session.project = project_name
            session.send(
                message(
                    "join",
                    seq,
                    {
                        "project": project_name,
                        "user": user,
                        "base_number": project.base_number,
                        "online": self._online(project_name),
                        "members": sorted(project.members),
                        "files": sorted(project.files),
                        "groups": group_payload(project),
                        "modes": {
                            u: m.value for u, m in project.prefs_of(user).items()
                        },
                    },
                )
            )
        self._broadcast_presence(project_name)

    def _online(self, project: str) -> list[str]:
        return sorted(
            {
                s.user
                for s in self.sessions.values()
                if s.project == project and s.user and not s.closed
            }
        )

    def _broadcast_presence(self, project: str) -> None:
        payload = {"online": self._online(project)}
        for s in self._project_sessions(project):
            s.send(message("presence", 0, payload))

    def _project_sessions(self, project: str) -> list[Session]:
        return [
            s
            for s in self.sessions.values()
            if s.project == project and not s.closed
        ]

    async def _on_chat(self, session: Session, seq: int, payload: dict) -> None:
        text = payload.get("text")
        if not isinstance(text, str):
            raise BadRequest("chat needs text")
        session.send(message("chat", seq, {"ok": True}))
        relay = {"from": session.user, "text": text}
        for s in self._project_sessions(session.project):
            s.send(message("chat", 0, relay))

    # ------------------------------------------------------------------
    # state-changing commands

    def _apply_logged(self, command: dict) -> dict:
        """Apply a command, then append it to the durable log.

        Validation happens inside apply (which raises without mutating),
        so the log only ever contains commands that succeeded; replay is
        therefore unconditional. Effects are broadcast only after the log
        write returns.
        """
        result = self.engine.apply_command(command)
        self.store.log(command["project"]).append_command(command)
        project = self.engine.project(command["project"])
        self.store.sync_archive(project)
        self.store.write_meta(project)
        return result

    def _recipients(self, project_name: str, only_user: str | None) -> list[Session]:
        return [
            s
            for s in self._project_sessions(project_name)
            if only_user is None or s.user == only_user
        ]

    def _capture_views(
        self, project: Project, files: set[str], only_user: str | None
    ) -> dict[tuple[int, str], dict]:
        views = {}
        for s in self._recipients(project.name, only_user):
            for file in s.files & files:
                views[(s.id, file)] = {
                    line.line: line for line in project.render_view(file, s.user).lines
                }
        return views

    def _broadcast_diffs(
        self,
        project: Project,
        files: set[str],
        before: dict[tuple[int, str], dict],
        only_user: str | None,
    ) -> None:
        for s in self._recipients(project.name, only_user):
            for file in sorted(s.files & files):
                old = before.get((s.id, file), {})
                doc = project.render_view(file, s.user)
                changes = []
                new_ids = {line.line for line in doc.lines}
                for line_id in old:
                    if line_id not in new_ids:
                        changes.append({"op": "remove", "line": line_id})
                prev = None
                for line in doc.lines:
                    if old.get(line.line) != line:
                        changes.append(
                            {"op": "upsert", "after": prev, "line": line.to_payload()}
                        )
                    prev = line.line
                if changes:
                    s.send(
                        message("remote_change", 0, {"file": file, "changes": changes})
                    )

    async def _run_command(
        self,
        session: Session,
        command: dict,
        touched: set[str] | None = None,
        observer_only: bool = False,
    ) -> dict:
        """Serialize, apply, log, broadcast per-recipient diffs."""
        project_name = session.project
        only_user = session.user if observer_only else None
        async with self._lock(project_name):
            project = self.engine.project(project_name)
            files = touched if touched is not None else set(project.files)
            views = self._capture_views(project, files, only_user)
            result = self._apply_logged(command)
            self._broadcast_diffs(project, files, views, only_user)
            return result

    async def _on_open_file(self, session: Session, seq: int, payload: dict) -> None:
        file = payload.get("file")
        if not isinstance(file, str):
            raise BadRequest("open_file needs a file name")
        async with self._lock(session.project):
            project = self.engine.project(session.project)
            if file not in project.files:
                if not payload.get("create"):
                    raise UnknownFile(f"unknown file: {file}")
                self._apply_logged(
                    {
                        "cmd": "import",
                        "project": session.project,
                        "file": file,
                        "lines": payload.get("lines") or [],
                    }
                )
            session.files.add(file)
            doc = project.render_view(file, session.user)
            session.send(
                message(
                    "view_update",
                    seq,
                    {
                        "file": file,
                        "base_number": project.base_number,
                        "lines": [line.to_payload() for line in doc.lines],
                    },
                )
            )

    async def _on_edit(self, session: Session, seq: int, payload: dict) -> None:
        file = payload.get("file")
        op = payload.get("op")
        command = {
            "cmd": "edit",
            "project": session.project,
            "user": session.user,
            "file": file,
            "op": op,
            "line": payload.get("line"),
            "text": payload.get("text"),
        }
        result = await self._run_command(session, command, touched={file})
        session.send(message("edit_ack", seq, result))

    async def _on_set_prefs(self, session: Session, seq: int, payload: dict) -> None:
        modes = payload.get("modes")
        if not isinstance(modes, dict):
            raise BadRequest("set_prefs needs a modes map")
        command = {
            "cmd": "set_prefs",
            "project": session.project,
            "user": session.user,
            "modes": modes,
        }
        result = await self._run_command(session, command, observer_only=True)
        session.send(message("set_prefs", seq, result))

    async def _on_commit(self, session: Session, seq: int, payload: dict) -> None:
        command = {"cmd": "commit", "project": session.project, "user": session.user}
        result = await self._run_command(session, command)
        session.send(message("commit_result", seq, result))
        event = dict(result, by=session.user)
        for s in self._project_sessions(session.project):
            if s.id != session.id:
                s.send(message("commit_result", 0, event))

    async def _on_interweave(self, session: Session, seq: int, payload: dict) -> None:
        action = payload.get("action")
        if action == "start":
            members = payload.get("members")
            if not isinstance(members, list):
                raise BadRequest("interweave start needs members")
            command = {
                "cmd": "interweave_start",
                "project": session.project,
                "members": members,
            }
        elif action == "stop":
            command = {
                "cmd": "interweave_stop",
                "project": session.project,
                "member": session.user,
            }
        else:
            raise BadRequest("interweave action must be start or stop")
        result = await self._run_command(session, command)
        session.send(message("interweave", seq, result))
        event = dict(result, by=session.user, action=action)
        for s in self._project_sessions(session.project):
            if s.id != session.id:
                s.send(message("interweave", 0, event))

    async def _on_materialize(self, session: Session, seq: int, payload: dict) -> None:
        include = payload.get("include")
        if not isinstance(include, list):
            raise BadRequest("materialize needs an include list")
        policy = payload.get("policy", "fail")
        winner = payload.get("winner")
        async with self._lock(session.project):
            project = self.engine.project(session.project)
            if policy == "observer_wins":
                snapshot = project.materialize(set(include), observer_wins=winner)
            elif policy == "fail":
                snapshot = project.materialize(set(include))
            else:
                raise BadRequest("policy must be fail or observer_wins")
        session.send(
            message(
                "snapshot",
                seq,
                {"files": snapshot, "base_number": project.base_number},
            )
        )


# ----------------------------------------------------------------------
# embedding helpers


class ServerThread:
    """Run a SyncServer on a background event loop (tests, tooling)."""

    def __init__(self, **kwargs):
        self.server = SyncServer(**kwargs)
        self.loop = asyncio.new_event_loop()
        self.port: int | None = None
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._started = threading.Event()

    def _run(self):
        asyncio.set_event_loop(self.loop)
        self.port = self.loop.run_until_complete(self.server.start())
        self._started.set()
        self.loop.run_forever()
        # Let connection handlers run their cleanup before closing the loop.
        pending = asyncio.all_tasks(self.loop)
        for task in pending:
            task.cancel()
        if pending:
            self.loop.run_until_complete(
                asyncio.gather(*pending, return_exceptions=True)
            )
        self.loop.close()

    def start(self) -> int:
        self._thread.start()
        self._started.wait(timeout=10)
        assert self.port is not None
        return self.port

    def stop(self):
        async def _shutdown():
            await self.server.stop()
            self.loop.stop()

        asyncio.run_coroutine_threadsafe(_shutdown(), self.loop)
        self._thread.join(timeout=10)
