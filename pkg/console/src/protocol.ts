/** Message schema spoken by the gateway WebSocket endpoint. */

export interface TraceEntry {
  t: number; // elapsed milliseconds (wall-clock sessions)
  s: number; // elapsed seconds
  kind: string;
  [key: string]: unknown;
}

export interface GraphNode {
  id: number;
  name: string;
  args: string;
  status: "issued" | "held" | "executing" | "completed" | "cancelled";
  safety: "safe" | "unsafe";
  deps: number[];
  generation: number;
}

export interface GraphSnapshot {
  type: "graph";
  nodes: GraphNode[];
  committed: boolean;
}

export type ServerMessage =
  | { type: "opened"; session: string }
  | { type: "entry"; entry: TraceEntry }
  | GraphSnapshot
  | { type: "error"; message: string }
  | { type: "closed"; status: "answered" | "failed" | "client" };

export type ClientMessage =
  | { type: "open" }
  | { type: "partial_text"; text: string }
  | { type: "revise"; text: string }
  | { type: "finalize"; text?: string }
  | { type: "close" };
