/** Client-side mirror of the member's annotated view, fed exclusively by
 * server messages; plus request/reply correlation over a transport. The
 * mirror never recomputes CM state locally: with the network down it
 * simply freezes. */

import type {
  AnnotatedLine,
  CommitResult,
  Message,
  RemoteChange,
  ViewMode,
} from "./protocol.js";
import { parseMessage } from "./protocol.js";

export class FileMirror {
  lines: AnnotatedLine[] = [];

  replaceAll(lines: AnnotatedLine[]): void {
    this.lines = lines.map((l) => ({ ...l }));
  }

  applyChanges(changes: RemoteChange[]): void {
    for (const change of changes) {
      if (change.op === "remove") {
        const id = change.line as string;
        this.lines = this.lines.filter((l) => l.line !== id);
        continue;
      }
      const line = { ...(change.line as AnnotatedLine) };
      const existing = this.lines.findIndex((l) => l.line === line.line);
      if (existing >= 0) {
        this.lines[existing] = line;
        continue;
      }
      if (change.after == null) {
        this.lines.unshift(line);
      } else {
        const anchor = this.lines.findIndex((l) => l.line === change.after);
        this.lines.splice(anchor >= 0 ? anchor + 1 : this.lines.length, 0, line);
      }
    }
  }

  byId(id: string): AnnotatedLine | undefined {
    return this.lines.find((l) => l.line === id);
  }
}

export interface ChatEntry {
  from: string;
  text: string;
}

export class ClientMirror {
  user = "";
  project = "";
  baseNumber: number | null = null;
  online: string[] = [];
  members: string[] = [];
  files = new Map<string, FileMirror>();
  fileNames: string[] = [];
  chatLog: ChatEntry[] = [];
  groups: string[][] = [];
  modes: Record<string, ViewMode> = {};
  lastCommit: CommitResult | null = null;

  file(name: string): FileMirror {
    let mirror = this.files.get(name);
    if (!mirror) {
      mirror = new FileMirror();
      this.files.set(name, mirror);
    }
    return mirror;
  }

  /** Apply one server-initiated event (seq 0). */
  applyEvent(msg: Message): void {
    const payload = msg.payload as Record<string, unknown>;
    switch (msg.type) {
      case "remote_change":
        this.file(payload["file"] as string).applyChanges(
          payload["changes"] as RemoteChange[],
        );
        break;
      case "view_update": {
        this.file(payload["file"] as string).replaceAll(
          payload["lines"] as AnnotatedLine[],
        );
        this.baseNumber = payload["base_number"] as number;
        break;
      }
      case "presence":
        this.online = payload["online"] as string[];
        break;
      case "chat":
        this.chatLog.push({
          from: payload["from"] as string,
          text: payload["text"] as string,
        });
        break;
      case "commit_result":
        this.lastCommit = payload as unknown as CommitResult;
        this.baseNumber = (payload as { number: number }).number;
        break;
      case "interweave":
        this.groups = (payload["groups"] as string[][]) ?? this.groups;
        break;
      default:
        break;
    }
  }

  myGroup(): string[] | null {
    for (const group of this.groups) {
      if (group.includes(this.user)) return group;
    }
    return null;
  }
}

export function commitSummary(result: CommitResult): string {
  const skipped = result.skipped.length
    ? `skipped ${result.skipped.length} conflicted line(s): ${result.skipped.join(", ")}`
    : "nothing skipped";
  return `commit -> base ${result.number}; promoted ${result.promoted}; ${skipped}`;
}

export interface Transport {
  send(raw: string): void;
}

export class ServerErrorReply extends Error {
  code: string;
  detail: string;
  conflicts: unknown[];

  constructor(code: string, detail: string, conflicts: unknown[] = []) {
    super(`${code}: ${detail}`);
    this.code = code;
    this.detail = detail;
    this.conflicts = conflicts;
  }
}

type Pending = {
  resolve: (payload: Record<string, unknown>) => void;
  reject: (err: ServerErrorReply) => void;
};

/** Request/reply correlation plus event routing into the mirror. */
export class Connection {
  readonly mirror: ClientMirror;
  private transport: Transport;
  private seq = 0;
  private pending = new Map<number, Pending>();
  onEvent: ((msg: Message) => void) | null = null;

  constructor(transport: Transport, mirror: ClientMirror = new ClientMirror()) {
    this.transport = transport;
    this.mirror = mirror;
  }

  request(type: string, payload: Record<string, unknown>): Promise<Record<string, unknown>> {
    this.seq += 1;
    const seq = this.seq;
    const raw = JSON.stringify({ type, seq, payload });
    return new Promise((resolve, reject) => {
      this.pending.set(seq, { resolve, reject });
      this.transport.send(raw);
    });
  }

  /** Feed one raw frame from the socket. */
  receive(raw: string): void {
    const msg = parseMessage(raw);
    if (!msg) return;
    if (msg.seq === 0) {
      this.mirror.applyEvent(msg);
      this.onEvent?.(msg);
      return;
    }
    const pending = this.pending.get(msg.seq);
    if (!pending) return;
    this.pending.delete(msg.seq);
    if (msg.type === "error") {
      const p = msg.payload as { code?: string; detail?: string; conflicts?: unknown[] };
      pending.reject(
        new ServerErrorReply(p.code ?? "error", p.detail ?? "", p.conflicts ?? []),
      );
      return;
    }
    // Correlated view_update replies also refresh the mirror.
    if (msg.type === "view_update") {
      this.mirror.applyEvent({ ...msg, seq: 0 });
    }
    pending.resolve(msg.payload);
  }

  // ------------------------------------------------------------------
  // typed calls

  async join(project: string, user: string, token?: string, create = false) {
    await this.request("hello", { protocol: 1 });
    const reply = await this.request("join", { project, user, token, create });
    this.mirror.user = user;
    this.mirror.project = project;
    this.mirror.baseNumber = reply["base_number"] as number;
    this.mirror.online = reply["online"] as string[];
    this.mirror.members = reply["members"] as string[];
    this.mirror.groups = (reply["groups"] as string[][]) ?? [];
    this.mirror.modes = (reply["modes"] as Record<string, ViewMode>) ?? {};
    this.mirror.fileNames = (reply["files"] as string[]) ?? [];
    return reply;
  }

  async openFile(file: string): Promise<void> {
    await this.request("open_file", { file });
    if (!this.mirror.fileNames.includes(file)) this.mirror.fileNames.push(file);
  }

  edit(file: string, op: string, line: string | null, text?: string) {
    return this.request("edit", { file, op, line, text: text ?? null });
  }

  async commit(): Promise<CommitResult> {
    const reply = (await this.request("commit", {})) as unknown as CommitResult;
    this.mirror.lastCommit = reply;
    this.mirror.baseNumber = reply.number;
    return reply;
  }

  async setPrefs(modes: Record<string, ViewMode>) {
    const reply = await this.request("set_prefs", { modes });
    this.mirror.modes = reply["modes"] as Record<string, ViewMode>;
    return reply;
  }

  chat(text: string) {
    return this.request("chat", { text });
  }

  async interweave(action: "start" | "stop", members?: string[]) {
    const payload: Record<string, unknown> = { action };
    if (members) payload["members"] = members;
    const reply = await this.request("interweave", payload);
    this.mirror.groups = (reply["groups"] as string[][]) ?? this.mirror.groups;
    return reply;
  }

  materialize(include: string[], policy: "fail" | "observer_wins" = "fail", winner?: string) {
    const payload: Record<string, unknown> = { include, policy };
    if (winner) payload["winner"] = winner;
    return this.request("materialize", payload);
  }
}
