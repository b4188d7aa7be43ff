"""Operator entry points: run the server, run scenario scripts, move
snapshots in and out, inspect conflicts and versions.

Every command is a thin shell over the SDK, the store, or the server;
no project semantics live here. Exit codes: 0 ok, 1 assertion/conflict
failure, 2 usage error, 3 I/O or network error.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys
from pathlib import Path

from .model import LineweaveError
from .project import conflict_payload
from .scenario import ScenarioFailure, run_scenario_file
from .server import SyncServer
from .store import Store, export_snapshot, read_snapshot_dir

ENV_PREFIX = "LINEWEAVE_"


def _env(name: str, default=None):
    return os.environ.get(ENV_PREFIX + name, default)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lineweave",
        description="Shared-repository collaborative editing service and tools.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="run the sync server")
    serve.add_argument("--host", default=_env("HOST", "127.0.0.1"))
    serve.add_argument("--port", type=int, default=int(_env("PORT", "4747")))
    serve.add_argument("--data-dir", default=_env("DATA_DIR", "./lineweave-data"))
    serve.add_argument("--token-file", default=_env("TOKEN_FILE"))
    serve.add_argument("--static-dir", default=_env("STATIC_DIR"))
    serve.add_argument(
        "--no-sync",
        action="store_true",
        help="skip fsync per log append (batching knob; durability off)",
    )

    scenario = sub.add_parser("scenario", help="scenario script tools")
    scen_sub = scenario.add_subparsers(dest="scenario_command", required=True)
    run = scen_sub.add_parser("run", help="run a scenario script against a server")
    run.add_argument("script")
    run.add_argument("--server", default=_env("SERVER", "127.0.0.1:4747"))
    run.add_argument("--token", default=_env("TOKEN"))
    run.add_argument("--json", action="store_true", help="machine-readable report")

    exp = sub.add_parser("export", help="write a project snapshot as text files")
    exp.add_argument("project")
    exp.add_argument("out_dir")
    exp.add_argument("--data-dir", default=_env("DATA_DIR", "./lineweave-data"))
    exp.add_argument(
        "--include", default="", help="comma-separated users to overlay on the base"
    )

    imp = sub.add_parser("import", help="import a directory of text files")
    imp.add_argument("project")
    imp.add_argument("src_dir")
    imp.add_argument("--data-dir", default=_env("DATA_DIR", "./lineweave-data"))

    versions = sub.add_parser("versions", help="list archived base versions")
    versions.add_argument("project")
    versions.add_argument("--data-dir", default=_env("DATA_DIR", "./lineweave-data"))
    versions.add_argument("--json", action="store_true")

    conflicts = sub.add_parser("conflicts", help="print the conflict table")
    conflicts.add_argument("project")
    conflicts.add_argument("--file")
    conflicts.add_argument("--data-dir", default=_env("DATA_DIR", "./lineweave-data"))
    conflicts.add_argument("--json", action="store_true")

    return parser


# ----------------------------------------------------------------------


def cmd_serve(args) -> int:
    tokens = None
    if args.token_file:
        try:
            tokens = json.loads(Path(args.token_file).read_text(encoding="utf-8"))
        except OSError as exc:
            print(f"cannot read token file: {exc}", file=sys.stderr)
            return 3
    server = SyncServer(
        args.data_dir,
        tokens=tokens,
        static_dir=args.static_dir,
        sync_log=not args.no_sync,
    )

    async def main() -> int:
        try:
            port = await server.start(args.host, args.port)
        except OSError as exc:
            print(f"bind failed on {args.host}:{args.port}: {exc}", file=sys.stderr)
            return 3
        print(f"lineweave serving on {args.host}:{port}", flush=True)
        try:
            await server.serve_forever()
        except asyncio.CancelledError:
            pass
        return 0

    try:
        return asyncio.run(main())
    except KeyboardInterrupt:
        return 0


def cmd_scenario_run(args) -> int:
    host, _, port = args.server.rpartition(":")
    try:
        report = run_scenario_file(args.script, host or "127.0.0.1", int(port), token=args.token)
    except ScenarioFailure as exc:
        if args.json:
            print(json.dumps({"ok": False, "failed_step": exc.step_index, "detail": exc.detail}))
        else:
            print(f"FAIL at step {exc.step_index}: {exc.detail}", file=sys.stderr)
        return 1
    except (ConnectionError, OSError, TimeoutError) as exc:
        print(f"cannot reach server {args.server}: {exc}", file=sys.stderr)
        return 3
    if args.json:
        print(json.dumps({"ok": True, "steps": report}))
    else:
        for row in report:
            print(f"ok {row['step']:3d}  {row['desc']}")
        print(f"PASS ({len(report)} steps)")
    return 0


def _replayed_project(args):
    store = Store(args.data_dir, sync=False)
    engine = store.replay(args.project)
    return store, engine.project(args.project)


def cmd_export(args) -> int:
    try:
        _, project = _replayed_project(args)
        include = {u for u in args.include.split(",") if u}
        snapshot = project.materialize(include)
    except LineweaveError as exc:
        print(f"{exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    export_snapshot(snapshot, args.out_dir)
    print(f"exported {len(snapshot)} file(s) to {args.out_dir}")
    return 0


def cmd_import(args) -> int:
    src = Path(args.src_dir)
    if not src.is_dir():
        print(f"not a directory: {src}", file=sys.stderr)
        return 3
    snapshot = read_snapshot_dir(src)
    store = Store(args.data_dir, sync=True)
    engine = store.replay(args.project)
    try:
        if args.project not in engine.projects:
            command = {"cmd": "create", "project": args.project}
            engine.apply_command(command)
            store.log(args.project).append_command(command)
        for file in sorted(snapshot):
            command = {
                "cmd": "import",
                "project": args.project,
                "file": file,
                "lines": snapshot[file],
            }
            engine.apply_command(command)
            store.log(args.project).append_command(command)
    except LineweaveError as exc:
        print(f"{exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    project = engine.project(args.project)
    store.sync_archive(project)
    store.write_meta(project)
    print(f"imported {len(snapshot)} file(s) into {args.project}")
    return 0


def cmd_versions(args) -> int:
    try:
        _, project = _replayed_project(args)
    except LineweaveError as exc:
        print(f"{exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    rows = [
        {
            "number": n,
            "current": n == project.base_number,
            "parent": project.fetch_version(n).parent,
        }
        for n in project.versions()
    ]
    if args.json:
        print(json.dumps(rows))
    else:
        for row in rows:
            marker = "*" if row["current"] else " "
            parent = "-" if row["parent"] is None else row["parent"]
            print(f"{marker} {row['number']:4d}  parent {parent}")
    return 0


def cmd_conflicts(args) -> int:
    try:
        _, project = _replayed_project(args)
        found = project.conflicts(args.file)
    except LineweaveError as exc:
        print(f"{exc.code}: {exc.detail}", file=sys.stderr)
        return 1
    if args.json:
        print(json.dumps([conflict_payload(c) for c in found]))
    else:
        if not found:
            print("no conflicts")
        for c in found:
            print(f"{c.file} line {c.line} (base {c.base!r})")
            for owners, content in c.variants:
                shown = "<deleted>" if content is None else content
                print(f"    {','.join(sorted(owners))}: {shown!r}")
    return 0


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    if args.command == "serve":
        return cmd_serve(args)
    if args.command == "scenario":
        return cmd_scenario_run(args)
    if args.command == "export":
        return cmd_export(args)
    if args.command == "import":
        return cmd_import(args)
    if args.command == "versions":
        return cmd_versions(args)
    if args.command == "conflicts":
        return cmd_conflicts(args)
    return 2


if __name__ == "__main__":
    sys.exit(main())
