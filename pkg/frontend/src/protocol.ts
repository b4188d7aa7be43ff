/** Wire schema shared with the sync server (one schema, ws framing). */

export type LineStatus = "unchanged" | "own" | "other" | "conflict" | "location";

export interface Variant {
  owners: string[];
  text: string | null; // null marks a deletion variant
}

export interface AnnotatedLine {
  line: string;
  text: string;
  status: LineStatus;
  users?: string[];
  variants?: Variant[];
}

export type MessageType =
  | "hello"
  | "join"
  | "open_file"
  | "edit"
  | "edit_ack"
  | "remote_change"
  | "set_prefs"
  | "view_update"
  | "commit"
  | "commit_result"
  | "interweave"
  | "chat"
  | "presence"
  | "materialize"
  | "snapshot"
  | "error";

export interface Message {
  type: MessageType;
  seq: number;
  payload: Record<string, unknown>;
}

export interface RemoteChange {
  op: "upsert" | "remove";
  line: AnnotatedLine | string;
  after?: string | null;
}

export interface CommitResult {
  number: number;
  promoted: number;
  skipped: string[];
  by?: string;
}

export type ViewMode = "full" | "location" | "conflicts" | "hidden" | "interweave";

export const VIEW_MODES: ViewMode[] = [
  "full",
  "location",
  "conflicts",
  "hidden",
  "interweave",
];

export function parseMessage(raw: string): Message | null {
  try {
    const msg = JSON.parse(raw);
    if (msg && typeof msg.type === "string" && typeof msg.seq === "number") {
      return msg as Message;
    }
  } catch {
    /* fall through */
  }
  return null;
}
