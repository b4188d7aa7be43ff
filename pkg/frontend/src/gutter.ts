/** Gutter decoration: a pure function of the line's server-sent status.
 * No client-side diffing or conflict computation happens here, ever. */

import type { AnnotatedLine } from "./protocol.js";

export type GutterColor = "none" | "orange" | "blue" | "red" | "location";

export interface GutterState {
  color: GutterColor;
  tooltip: string;
}

const COLOR_BY_STATUS: Record<AnnotatedLine["status"], GutterColor> = {
  unchanged: "none",
  own: "orange",
  other: "blue",
  conflict: "red",
  location: "location",
};

export function gutterState(line: AnnotatedLine): GutterState {
  const color = COLOR_BY_STATUS[line.status];
  const users = (line.users ?? []).join(", ");
  let tooltip = "";
  switch (line.status) {
    case "own":
      tooltip = "changed by you (uncommitted)";
      break;
    case "other":
      tooltip = users ? `changed by ${users}` : "changed by a collaborator";
      break;
    case "conflict": {
      const variants = (line.variants ?? [])
        .map((v) => `${v.owners.join("+")}: ${v.text === null ? "<deleted>" : v.text}`)
        .join(" | ");
      tooltip = variants ? `conflict — ${variants}` : `conflict with ${users}`;
      break;
    }
    case "location":
      tooltip = users ? `${users} changed this line` : "changed elsewhere";
      break;
    case "unchanged":
      tooltip = "";
      break;
  }
  return { color, tooltip };
}

export function gutterColors(lines: AnnotatedLine[]): GutterColor[] {
  return lines.map((line) => gutterState(line).color);
}
