/** Browser entry: connects over /ws, renders the mirror, and wires the
 * controls. All state comes from the server; rendering is a pure
 * projection of the mirror. */

import { gutterState } from "./gutter.js";
import { ClientMirror, Connection, ServerErrorReply, commitSummary } from "./mirror.js";
import type { Transport } from "./mirror.js";
import type { ViewMode } from "./protocol.js";
import { VIEW_MODES } from "./protocol.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

let conn: Connection | null = null;
let socket: WebSocket | null = null;
let currentFile: string | null = null;
let editingLine: string | null = null;

function toast(text: string): void {
  const box = $("toasts");
  const el = document.createElement("div");
  el.className = "toast";
  el.textContent = text;
  box.appendChild(el);
  setTimeout(() => el.remove(), 4000);
}

function showError(err: unknown): void {
  if (err instanceof ServerErrorReply) {
    toast(`${err.code}: ${err.detail}`);
    if (err.code === "conflict" && err.conflicts.length) {
      renderConflictResult(err.conflicts);
    }
  } else {
    toast(String(err));
  }
}

// ----------------------------------------------------------------------
// connection

function connect(): void {
  const user = ($("login-user") as HTMLInputElement).value.trim();
  const project = ($("login-project") as HTMLInputElement).value.trim();
  const token = ($("login-token") as HTMLInputElement).value;
  if (!user || !project) {
    toast("need user and project");
    return;
  }
  const url = `${location.protocol === "https:" ? "wss" : "ws"}://${location.host}/ws`;
  socket = new WebSocket(url);
  const transport: Transport = { send: (raw) => socket?.send(raw) };
  const mirror = new ClientMirror();
  conn = new Connection(transport, mirror);
  conn.onEvent = () => render();

  socket.onmessage = (ev) => conn?.receive(String(ev.data));
  socket.onopen = async () => {
    try {
      await conn!.join(project, user, token || undefined, true);
      $("banner").classList.add("hidden");
      $("login").classList.add("hidden");
      if (mirror.fileNames.length) {
        await openFile(mirror.fileNames[0]);
      }
      render();
    } catch (err) {
      showError(err);
      socket?.close();
    }
  };
  socket.onclose = () => {
    $("banner").classList.remove("hidden");
  };
}

async function openFile(name: string): Promise<void> {
  if (!conn) return;
  try {
    await conn.openFile(name);
    currentFile = name;
    render();
  } catch (err) {
    showError(err);
  }
}

// ----------------------------------------------------------------------
// rendering

function render(): void {
  if (!conn) return;
  const mirror = conn.mirror;
  $("ide-version").textContent = `IDE (${mirror.baseNumber ?? "-"})`;
  $("project-name").textContent = mirror.project;

  const presence = $("presence");
  presence.replaceChildren(
    ...mirror.online.map((name) => {
      const li = document.createElement("li");
      li.textContent = name === mirror.user ? `${name} (you)` : name;
      return li;
    }),
  );

  const chat = $("chat-log");
  chat.replaceChildren(
    ...mirror.chatLog.slice(-100).map((entry) => {
      const div = document.createElement("div");
      div.innerHTML = `<b></b> <span></span>`;
      (div.firstChild as HTMLElement).textContent = entry.from;
      (div.lastChild as HTMLElement).textContent = entry.text;
      return div;
    }),
  );
  chat.scrollTop = chat.scrollHeight;

  const tabs = $("file-tabs");
  tabs.replaceChildren(
    ...mirror.fileNames.map((name) => {
      const btn = document.createElement("button");
      btn.textContent = name;
      btn.className = name === currentFile ? "tab active" : "tab";
      btn.onclick = () => void openFile(name);
      return btn;
    }),
  );

  renderPrefs();
  renderGroupState();
  renderPane();
}

function renderPrefs(): void {
  const mirror = conn!.mirror;
  const box = $("prefs");
  box.replaceChildren(
    ...mirror.members
      .filter((m) => m !== mirror.user)
      .map((member) => {
        const row = document.createElement("div");
        row.className = "pref-row";
        const label = document.createElement("span");
        label.textContent = member;
        const select = document.createElement("select");
        for (const mode of VIEW_MODES) {
          const opt = document.createElement("option");
          opt.value = mode;
          opt.textContent = mode;
          select.appendChild(opt);
        }
        select.value = mirror.modes[member] ?? "hidden";
        select.onchange = () => {
          void conn!
            .setPrefs({ [member]: select.value as ViewMode })
            .then(() => render())
            .catch(showError);
        };
        row.append(label, select);
        return row;
      }),
  );
}

function renderGroupState(): void {
  const mirror = conn!.mirror;
  const group = mirror.myGroup();
  $("interweave-state").textContent = group
    ? `interweaving with ${group.filter((m) => m !== mirror.user).join(", ")}`
    : "not interweaving";
  ($("interweave-btn") as HTMLButtonElement).textContent = group
    ? "stop interweave"
    : "start interweave";
}

function renderPane(): void {
  const pane = $("code-pane");
  const mirror = conn!.mirror;
  if (!currentFile) {
    pane.replaceChildren();
    return;
  }
  const lines = mirror.file(currentFile).lines;
  const rows: HTMLElement[] = [];
  rows.push(insertRow(null));
  for (const line of lines) {
    const row = document.createElement("div");
    row.className = "code-line";
    const gutter = document.createElement("span");
    const state = gutterState(line);
    gutter.className = `gutter gutter-${state.color}`;
    if (state.tooltip) gutter.title = state.tooltip;
    const text = document.createElement("span");
    text.className = "code-text";
    text.textContent = line.text || " ";

    if (editingLine === line.line) {
      const input = document.createElement("input");
      input.className = "line-editor";
      input.value = line.text;
      input.onkeydown = (ev) => {
        if (ev.key === "Enter") {
          editingLine = null;
          void conn!
            .edit(currentFile!, "replace", line.line, input.value)
            .then(() => render())
            .catch((err) => {
              showError(err);
              render();
            });
        } else if (ev.key === "Escape") {
          editingLine = null;
          render();
        }
      };
      row.append(gutter, input);
      queueMicrotask(() => input.focus());
    } else {
      text.onclick = () => {
        if (line.status === "location") {
          toast("location marker: the text is hidden by your view mode");
          return;
        }
        editingLine = line.line;
        render();
      };
      const del = document.createElement("button");
      del.className = "line-btn";
      del.textContent = "×";
      del.title = "delete line";
      del.onclick = () => {
        void conn!
          .edit(currentFile!, "delete", line.line)
          .then(() => render())
          .catch(showError);
      };
      row.append(gutter, text, del);
    }
    rows.push(row);
    rows.push(insertRow(line.line));
  }
  pane.replaceChildren(...rows);
}

function insertRow(after: string | null): HTMLElement {
  const row = document.createElement("div");
  row.className = "insert-row";
  const btn = document.createElement("button");
  btn.className = "line-btn";
  btn.textContent = "+";
  btn.title = after === null ? "insert at top" : "insert after this line";
  btn.onclick = () => {
    const text = prompt("new line text", "");
    if (text === null || !currentFile) return;
    void conn!
      .edit(currentFile, "insert_after", after, text)
      .then(() => render())
      .catch(showError);
  };
  row.appendChild(btn);
  return row;
}

// ----------------------------------------------------------------------
// bottom frame results

function renderCommitResult(result: { number: number; promoted: number; skipped: string[] }): void {
  $("results").textContent = commitSummary(result);
}

function renderConflictResult(conflicts: unknown[]): void {
  const frame = $("results");
  const rows = conflicts.map((c) => {
    const conflict = c as { file: string; line: string; variants: { owners: string[]; text: string | null }[] };
    const variants = conflict.variants
      .map((v) => `${v.owners.join("+")}: ${v.text === null ? "<deleted>" : JSON.stringify(v.text)}`)
      .join("  vs  ");
    return `${conflict.file} @ ${conflict.line}: ${variants}`;
  });
  frame.textContent = `materialization blocked by conflicts\n${rows.join("\n")}`;
}

function renderSnapshot(files: Record<string, string[]>): void {
  const frame = $("results");
  const parts: string[] = [];
  for (const [name, lines] of Object.entries(files)) {
    parts.push(`--- ${name} ---`, ...lines);
  }
  frame.textContent = parts.join("\n");
}

// ----------------------------------------------------------------------
// control wiring

function wireControls(): void {
  $("login-btn").onclick = () => connect();
  $("reconnect-btn").onclick = () => connect();

  $("chat-send").onclick = () => {
    const input = $("chat-input") as HTMLInputElement;
    if (!input.value.trim() || !conn) return;
    void conn.chat(input.value).catch(showError);
    input.value = "";
  };

  $("commit-btn").onclick = () => {
    if (!conn) return;
    void conn
      .commit()
      .then((result) => {
        renderCommitResult(result);
        render();
      })
      .catch(showError);
  };

  $("interweave-btn").onclick = () => {
    if (!conn) return;
    const mirror = conn.mirror;
    const action = mirror.myGroup() ? "stop" : "start";
    let members: string[] | undefined;
    if (action === "start") {
      const others = mirror.members.filter((m) => m !== mirror.user);
      const partner = prompt(`interweave with whom? (${others.join(", ")})`, others[0] ?? "");
      if (!partner) return;
      members = [mirror.user, ...partner.split(",").map((s) => s.trim()).filter(Boolean)];
    }
    void conn
      .interweave(action, members)
      .then(() => render())
      .catch(showError);
  };

  $("materialize-btn").onclick = () => {
    if (!conn) return;
    const mirror = conn.mirror;
    const include = mirror.members.filter((m) => {
      const box = document.querySelector<HTMLInputElement>(`#mat-${m}`);
      return box?.checked;
    });
    void conn
      .materialize(include)
      .then((reply) => renderSnapshot(reply["files"] as Record<string, string[]>))
      .catch(showError);
  };

  // Keep the include-set checkboxes in sync with membership.
  const observer = new MutationObserver(() => refreshMaterializeBoxes());
  observer.observe($("presence"), { childList: true });
}

function refreshMaterializeBoxes(): void {
  if (!conn) return;
  const box = $("materialize-users");
  box.replaceChildren(
    ...conn.mirror.members.map((member) => {
      const label = document.createElement("label");
      const input = document.createElement("input");
      input.type = "checkbox";
      input.id = `mat-${member}`;
      input.checked = member === conn!.mirror.user;
      label.append(input, document.createTextNode(member));
      return label;
    }),
  );
}

wireControls();
