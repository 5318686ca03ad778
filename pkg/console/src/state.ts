/** Session store: a pure view of the server's message stream.
 *
 * The DAG pane renders the latest graph snapshot verbatim; nothing is
 * inferred client-side. TTFT is computed from server-side timestamps
 * (final update entry -> answer_started entry).
 */

import type { GraphSnapshot, ServerMessage, TraceEntry } from "./protocol.js";

export interface LogRow {
  seconds: number;
  kind: string;
  summary: string;
}

function summarize(entry: TraceEntry): string {
  switch (entry.kind) {
    case "update":
      return `${entry.final ? "final" : "partial"} update: "${entry.text}"`;
    case "action":
      return `${entry.action}${entry.accepted === false ? " (rejected)" : ""}: ${String(
        entry.text,
      ).slice(0, 120)}`;
    case "issue":
    case "edit":
      return `${entry.kind} call ${entry.id} gen ${entry.generation}: ${entry.name}(${entry.args}) [${entry.safety}]`;
    case "dispatch":
      return `dispatch call ${entry.id} (${entry.name}, ${entry.safety})`;
    case "complete":
      return `complete call ${entry.id} ${entry.delivered ? "delivered" : "discarded"}`;
    case "cancel":
      return `cancel call ${entry.id}: ${entry.reason}`;
    case "cancel_notice":
      return `cancel notice for call ${entry.id}`;
    case "information":
      return `information ${entry.id}: ${String(entry.text).slice(0, 80)}`;
    case "plan_hint":
      return `plan hint (${(entry.calls as unknown[]).length} active)`;
    case "error_notice":
      return `error notice: ${entry.reason ?? entry.text}`;
    case "commit":
      return "COMMIT: held side-effecting calls released";
    case "answer_started":
      return "answer started";
    case "interrupted":
      return "generation interrupted";
    case "end":
      return `session ${entry.status}`;
    default:
      return entry.kind;
  }
}

export class SessionStore {
  session: string | null = null;
  entries: TraceEntry[] = [];
  log: LogRow[] = [];
  graph: GraphSnapshot | null = null;
  errors: string[] = [];
  closed: string | null = null;
  private listeners: Array<() => void> = [];

  subscribe(listener: () => void): void {
    this.listeners.push(listener);
  }

  apply(msg: ServerMessage): void {
    switch (msg.type) {
      case "opened":
        this.session = msg.session;
        break;
      case "entry":
        this.entries.push(msg.entry);
        this.log.push({
          seconds: msg.entry.s,
          kind: msg.entry.kind,
          summary: summarize(msg.entry),
        });
        break;
      case "graph":
        this.graph = msg;
        break;
      case "error":
        this.errors.push(msg.message);
        break;
      case "closed":
        this.closed = msg.status;
        break;
    }
    for (const fn of this.listeners) fn();
  }

  private lastEntry(kind: string, pred?: (e: TraceEntry) => boolean): TraceEntry | null {
    for (let i = this.entries.length - 1; i >= 0; i--) {
      const e = this.entries[i];
      if (e.kind === kind && (!pred || pred(e))) return e;
    }
    return null;
  }

  get committed(): boolean {
    return this.graph?.committed ?? false;
  }

  get commitSeconds(): number | null {
    return (this.lastEntry("commit")?.s as number) ?? null;
  }

  get finalUpdateSeconds(): number | null {
    const e = this.lastEntry("update", (x) => x.final === true);
    return e ? (e.s as number) : null;
  }

  get answerStartedSeconds(): number | null {
    // answer starts before the final update belong to rejected answers
    const final = this.finalUpdateSeconds;
    if (final === null) return null;
    const answer = this.lastEntry("action", (x) => x.action === "answer" && x.accepted === true);
    if (!answer) {
      const started = this.lastEntry("answer_started", (x) => (x.s as number) >= final);
      return started ? (started.s as number) : null;
    }
    const started = this.lastEntry(
      "answer_started",
      (x) => x.t <= answer.t && (x.s as number) >= final,
    );
    return started ? (started.s as number) : (answer.s as number);
  }

  get answerText(): string | null {
    const e = this.lastEntry("action", (x) => x.action === "answer" && x.accepted === true);
    if (!e) return null;
    const raw = String(e.text);
    return raw.replace(/^<answer>/, "").replace(/<\/answer>$/, "");
  }

  /** Seconds from the final update to the first answer token. */
  get ttftSeconds(): number | null {
    const final = this.finalUpdateSeconds;
    const started = this.answerStartedSeconds;
    if (final === null || started === null) return null;
    return started - final;
  }

  get thinkStream(): string[] {
    return this.entries
      .filter((e) => e.kind === "action" && e.action === "think")
      .map((e) =>
        String(e.text).replace(/^<think>/, "").replace(/<\/think>$/, ""),
      );
  }
}
