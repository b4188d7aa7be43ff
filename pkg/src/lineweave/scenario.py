"""Scenario scripts: a JSON array of timed client actions with assertions
on line statuses, conflicts, and base numbers, executed against a running
server by a fleet of headless clients."""

from __future__ import annotations

import json
from pathlib import Path

from .client import Client, ServerError


class ScenarioFailure(Exception):
    def __init__(self, step_index: int, detail: str):
        super().__init__(f"step {step_index}: {detail}")
        self.step_index = step_index
        self.detail = detail


class ScenarioRunner:
    def __init__(self, script: dict, host: str, port: int, token: str | None = None):
        self.script = script
        self.host = host
        self.port = port
        self.token = token if token is not None else script.get("token")
        self.clients: dict[str, Client] = {}
        self.vars: dict[str, str] = {}
        self.report: list[dict] = []

    # ------------------------------------------------------------------

    def run(self) -> list[dict]:
        project = self.script.get("project", "scenario")
        create = bool(self.script.get("create"))
        for i, name in enumerate(self.script["clients"]):
            client = Client(self.host, self.port)
            client.connect(name, project, token=self.token, create=create and i == 0)
            self.clients[name] = client
        try:
            for index, step in enumerate(self.script["steps"]):
                self._run_step(index, step)
                self.report.append({"step": index, "ok": True, "desc": _describe(step)})
        finally:
            for client in self.clients.values():
                client.close()
        return self.report

    def _run_step(self, index: int, step: dict) -> None:
        try:
            if "assert" in step:
                self._drain_all()
                self._check_assert(step["assert"])
            else:
                self._run_action(step)
        except ScenarioFailure:
            raise
        except AssertionError as exc:
            raise ScenarioFailure(index, str(exc))
        except (ServerError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise ScenarioFailure(index, repr(exc))

    def _drain_all(self) -> None:
        for client in self.clients.values():
            client.pump()

    def _client(self, name: str) -> Client:
        if name not in self.clients:
            raise AssertionError(f"unknown client {name!r}")
        return self.clients[name]

    def _resolve_line(self, client: Client, file: str, ref) -> str | None:
        if ref is None:
            return None
        if isinstance(ref, int):
            return client.files[file].at_rank(ref)["line"]
        if isinstance(ref, str) and ref.startswith("$"):
            if ref not in self.vars:
                raise AssertionError(f"unbound line variable {ref}")
            return self.vars[ref]
        return ref

    # ------------------------------------------------------------------
    # actions

    def _run_action(self, step: dict) -> None:
        client = self._client(step["client"])
        action = step["action"]
        expect = step.get("expect")
        try:
            if action == "open_file":
                client.open_file(
                    step["file"],
                    create=bool(step.get("create")),
                    lines=step.get("lines"),
                )
                result: dict = {"ok": True}
            elif action == "edit":
                line = self._resolve_line(client, step.get("file"), step.get("line"))
                result = client.edit(
                    step["file"], step["op"], line=line, text=step.get("text")
                )
                if step.get("bind"):
                    self.vars[step["bind"]] = result["line"]
            elif action == "commit":
                result = client.commit()
            elif action == "set_prefs":
                result = client.set_prefs(step["modes"])
            elif action == "chat":
                result = client.chat(step["text"])
            elif action == "interweave":
                if step.get("mode", "start") == "start":
                    result = client.interweave_start(step["members"])
                else:
                    result = client.interweave_stop()
            elif action == "materialize":
                result = client.materialize(
                    step["include"],
                    policy=step.get("policy", "fail"),
                    winner=step.get("winner"),
                )
            elif action == "pump":
                client.pump(idle=float(step.get("idle", 0.1)))
                result = {"ok": True}
            else:
                raise AssertionError(f"unknown action {action!r}")
        except ServerError as exc:
            if expect and expect.get("error"):
                assert exc.code == expect["error"], (
                    f"expected error {expect['error']}, got {exc.code}"
                )
                return
            raise
        if expect:
            assert not expect.get("error"), (
                f"expected error {expect.get('error')}, got success"
            )
            self._check_expect(expect, result)

    @staticmethod
    def _check_expect(expect: dict, result: dict) -> None:
        for key, want in expect.items():
            if key == "skipped_count":
                got = len(result.get("skipped", []))
            elif key == "snapshot_contains":
                got = None
                for lines in result.get("files", {}).values():
                    if want in lines:
                        got = want
                        break
            else:
                got = result.get(key)
            assert got == want, f"expect {key}: wanted {want!r}, got {got!r}"

    # ------------------------------------------------------------------
    # assertions

    def _check_assert(self, check: dict) -> None:
        client = self._client(check["client"])
        if "online" in check:
            assert sorted(client.online) == sorted(check["online"]), (
                f"online {client.online} != {check['online']}"
            )
        if "base_number" in check:
            assert client.base_number == check["base_number"], (
                f"base number {client.base_number} != {check['base_number']}"
            )
        if "chat_contains" in check:
            texts = [entry["text"] for entry in client.chat_log]
            assert check["chat_contains"] in texts, (
                f"chat log {texts} missing {check['chat_contains']!r}"
            )
        file = check.get("file")
        if file is None:
            return
        mirror = client.files[file]
        if "line_count" in check:
            assert len(mirror.lines) == check["line_count"], (
                f"{file}: {len(mirror.lines)} lines != {check['line_count']}"
            )
        if check.get("all_unchanged"):
            statuses = {l["status"] for l in mirror.lines}
            assert statuses <= {"unchanged"}, f"{file} not clean: {statuses}"
        if "conflicts" in check:
            got = sum(1 for l in mirror.lines if l["status"] == "conflict")
            assert got == check["conflicts"], (
                f"{file}: {got} conflicted lines != {check['conflicts']}"
            )
        ref = check.get("line")
        if ref is None:
            return
        line_id = self._resolve_line(client, file, ref)
        line = mirror.by_id(line_id)
        assert line is not None, f"line {ref} ({line_id}) not visible in {file}"
        for key in ("status", "text"):
            if key in check:
                assert line[key] == check[key], (
                    f"line {ref}: {key}={line[key]!r} != {check[key]!r}"
                )
        if "users" in check:
            assert sorted(line.get("users", [])) == sorted(check["users"]), (
                f"line {ref}: users {line.get('users')} != {check['users']}"
            )


def _describe(step: dict) -> str:
    if "assert" in step:
        bits = [f"{k}={v!r}" for k, v in step["assert"].items()]
        return "assert " + " ".join(bits)
    return f"{step.get('client')} {step.get('action')}"


def load_script(path: str | Path) -> dict:
    return json.loads(Path(path).read_text(encoding="utf-8"))


def run_scenario_file(path: str | Path, host: str, port: int, token: str | None = None) -> list[dict]:
    runner = ScenarioRunner(load_script(path), host, port, token=token)
    return runner.run()
