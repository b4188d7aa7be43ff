"""Headless client: a synchronous connection that mirrors the member's
annotated view from the broadcast stream and wraps the wire schema in
typed calls. One client = one logical event loop; not safe for
simultaneous use from two threads."""

from __future__ import annotations

import json
import socket
import time


class ServerError(Exception):
    def __init__(self, code: str, detail: str = "", conflicts=None):
        super().__init__(f"{code}: {detail}")
        self.code = code
        self.detail = detail
        self.conflicts = conflicts or []


class FileMirror:
    """Ordered annotated lines for one open file."""

    def __init__(self):
        self.lines: list[dict] = []

    def replace_all(self, lines: list[dict]) -> None:
        self.lines = [dict(line) for line in lines]

    def apply_changes(self, changes: list[dict]) -> None:
        for change in changes:
            if change["op"] == "remove":
                self.lines = [l for l in self.lines if l["line"] != change["line"]]
                continue
            line = dict(change["line"])
            idx = self._index_of(line["line"])
            if idx is not None:
                self.lines[idx] = line
                continue
            after = change.get("after")
            if after is None:
                self.lines.insert(0, line)
            else:
                anchor = self._index_of(after)
                pos = anchor + 1 if anchor is not None else len(self.lines)
                self.lines.insert(pos, line)

    def _index_of(self, line_id: str) -> int | None:
        for i, line in enumerate(self.lines):
            if line["line"] == line_id:
                return i
        return None

    def ids(self) -> list[str]:
        return [l["line"] for l in self.lines]

    def texts(self) -> list[str]:
        return [l["text"] for l in self.lines]

    def by_id(self, line_id: str) -> dict | None:
        idx = self._index_of(line_id)
        return self.lines[idx] if idx is not None else None

    def at_rank(self, rank: int) -> dict:
        return self.lines[rank - 1]


class Client:
    """Synchronous lineweave client over the JSON-lines framing."""

    def __init__(self, host: str, port: int, timeout: float = 10.0):
        self.host = host
        self.port = port
        self.timeout = timeout
        self.user: str | None = None
        self.project: str | None = None
        self.token: str | None = None
        self.base_number: int | None = None
        self.online: list[str] = []
        self.members: list[str] = []
        self.groups: list[list[str]] = []
        self.files: dict[str, FileMirror] = {}
        self.chat_log: list[dict] = []
        self.events: list[dict] = []  # every seq-0 broadcast, in arrival order
        self._seq = 0
        self._sock: socket.socket | None = None
        self._buf = b""

    # ------------------------------------------------------------------
    # connection

    def connect(self, user: str, project: str, token: str | None = None, create: bool = False) -> dict:
        self._sock = socket.create_connection((self.host, self.port), timeout=self.timeout)
        self._buf = b""
        self.user, self.project, self.token = user, project, token
        self.request("hello", {"protocol": 1})
        joined = self.request(
            "join",
            {"project": project, "user": user, "token": token, "create": create},
        )
        self.base_number = joined["base_number"]
        self.online = joined["online"]
        self.members = joined["members"]
        self.groups = joined.get("groups", [])
        return joined

    def reconnect(self) -> None:
        """Full resync: rejoin and reopen every mirrored file."""
        files = list(self.files)
        self.close()
        self.files = {}
        self.connect(self.user, self.project, token=self.token)
        for file in files:
            self.open_file(file)

    def close(self) -> None:
        if self._sock is not None:
            try:
                self._sock.close()
            finally:
                self._sock = None

    # ------------------------------------------------------------------
    # request/reply and broadcast handling

    def request(self, mtype: str, payload: dict) -> dict:
        self._seq += 1
        seq = self._seq
        raw = json.dumps(
            {"type": mtype, "seq": seq, "payload": payload}, separators=(",", ":")
        )
        self._sock.sendall(raw.encode("utf-8") + b"\n")
        deadline = time.monotonic() + self.timeout
        while True:
            line = self._read_line(deadline - time.monotonic())
            if line is None:
                raise TimeoutError(f"no reply to {mtype} (seq {seq})")
            msg = json.loads(line)
            if msg.get("seq") == 0:
                self._apply_event(msg)
                continue
            if msg.get("seq") != seq:
                continue  # stale reply from a preempted request
            if msg["type"] == "error":
                p = msg["payload"]
                raise ServerError(p.get("code", "error"), p.get("detail", ""), p.get("conflicts"))
            return msg["payload"]

    def pump(self, idle: float = 0.05) -> int:
        """Apply queued broadcasts; returns how many were processed."""
        count = 0
        while True:
            line = self._read_line(idle)
            if line is None:
                return count
            msg = json.loads(line)
            if msg.get("seq") == 0:
                self._apply_event(msg)
                count += 1

    def _read_line(self, timeout: float) -> bytes | None:
        while b"\n" not in self._buf:
            if timeout <= 0 and b"\n" not in self._buf:
                # A non-positive timeout still polls once.
                timeout = 0.001
            self._sock.settimeout(timeout)
            try:
                chunk = self._sock.recv(65536)
            except (socket.timeout, TimeoutError):
                return None
            if not chunk:
                raise ConnectionError("server closed the connection")
            self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def _apply_event(self, msg: dict) -> None:
        self.events.append(msg)
        mtype = msg["type"]
        payload = msg["payload"]
        if mtype == "remote_change":
            mirror = self.files.get(payload["file"])
            if mirror is not None:
                mirror.apply_changes(payload["changes"])
        elif mtype == "view_update":
            mirror = self.files.setdefault(payload["file"], FileMirror())
            mirror.replace_all(payload["lines"])
            self.base_number = payload["base_number"]
        elif mtype == "presence":
            self.online = payload["online"]
        elif mtype == "chat":
            self.chat_log.append(payload)
        elif mtype == "commit_result":
            self.base_number = payload["number"]
        elif mtype == "interweave":
            self.groups = payload.get("groups", self.groups)

    # ------------------------------------------------------------------
    # typed operations

    def open_file(self, file: str, create: bool = False, lines: list[str] | None = None) -> FileMirror:
        payload: dict = {"file": file}
        if create:
            payload["create"] = True
            if lines is not None:
                payload["lines"] = lines
        reply = self.request("open_file", payload)
        mirror = self.files.setdefault(file, FileMirror())
        mirror.replace_all(reply["lines"])
        self.base_number = reply["base_number"]
        return mirror

    def edit(self, file: str, op: str, line: str | None = None, text: str | None = None) -> dict:
        return self.request(
            "edit", {"file": file, "op": op, "line": line, "text": text}
        )

    def replace(self, file: str, line: str, text: str) -> dict:
        return self.edit(file, "replace", line, text)

    def insert_after(self, file: str, line: str | None, text: str) -> dict:
        return self.edit(file, "insert_after", line, text)

    def delete(self, file: str, line: str) -> dict:
        return self.edit(file, "delete", line)

    def commit(self) -> dict:
        reply = self.request("commit", {})
        self.base_number = reply["number"]
        return reply

    def set_prefs(self, modes: dict[str, str]) -> dict:
        return self.request("set_prefs", {"modes": modes})

    def chat(self, text: str) -> dict:
        return self.request("chat", {"text": text})

    def interweave_start(self, members: list[str]) -> dict:
        reply = self.request("interweave", {"action": "start", "members": members})
        self.groups = reply.get("groups", self.groups)
        return reply

    def interweave_stop(self) -> dict:
        reply = self.request("interweave", {"action": "stop"})
        self.groups = reply.get("groups", self.groups)
        return reply

    def materialize(self, include: list[str], policy: str = "fail", winner: str | None = None) -> dict:
        payload: dict = {"include": include, "policy": policy}
        if winner is not None:
            payload["winner"] = winner
        return self.request("materialize", payload)

    def resync_view(self, file: str) -> list[dict]:
        """Verification query: the server's current full render."""
        reply = self.request("open_file", {"file": file})
        return reply["lines"]
