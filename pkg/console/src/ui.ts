/** DOM console: input with word-boundary flushing, think stream, DAG view,
 * event log, commit marker and TTFT readout. The DAG pane is a pure render
 * of the latest server snapshot. */

import { GatewayClient, SocketFactory } from "./client.js";
import type { GraphNode } from "./protocol.js";
import { SessionStore } from "./state.js";
import { DEMO_STEPS, runDemo } from "./demo.js";

const STYLES = `
  .sa-console { font-family: ui-monospace, Menlo, monospace; color: #e2e2ea;
    background: #101018; padding: 14px; border-radius: 8px; }
  .sa-console header { display: flex; gap: 16px; align-items: baseline;
    border-bottom: 1px solid #2a2a3a; padding-bottom: 8px; }
  .sa-console h1 { font-size: 15px; margin: 0; color: #7aa2f7; }
  .sa-status { font-size: 12px; color: #9a9ab0; }
  .sa-ttft { font-size: 13px; color: #9ece6a; margin-left: auto; }
  .sa-controls { display: flex; gap: 8px; margin: 10px 0; }
  .sa-controls input { flex: 1; background: #1a1a26; color: inherit;
    border: 1px solid #2a2a3a; border-radius: 4px; padding: 6px 8px; }
  .sa-controls button { background: #1f2335; color: inherit; border: 1px solid #2a2a3a;
    border-radius: 4px; padding: 6px 10px; cursor: pointer; }
  .sa-controls button:disabled { opacity: 0.4; cursor: default; }
  .sa-panes { display: grid; grid-template-columns: 1fr 1fr; gap: 10px; }
  .sa-pane { background: #14141e; border: 1px solid #2a2a3a; border-radius: 6px;
    padding: 8px; min-height: 140px; max-height: 320px; overflow-y: auto; }
  .sa-pane h2 { font-size: 12px; margin: 0 0 6px; color: #9a9ab0;
    text-transform: uppercase; letter-spacing: 1px; }
  .sa-think div { color: #c0caf5; font-size: 12px; padding: 2px 0; }
  .sa-node { border: 1px solid #2a2a3a; border-left-width: 4px; border-radius: 4px;
    padding: 5px 8px; margin: 4px 0; font-size: 12px; }
  .sa-node .meta { color: #9a9ab0; font-size: 11px; }
  .sa-node.issued { border-left-color: #7aa2f7; }
  .sa-node.held { border-left-color: #e0af68; }
  .sa-node.executing { border-left-color: #bb9af7; }
  .sa-node.completed { border-left-color: #9ece6a; }
  .sa-node.cancelled { border-left-color: #f7768e; opacity: 0.55;
    text-decoration: line-through; }
  .sa-log div { font-size: 11px; color: #9a9ab0; padding: 1px 0; }
  .sa-log .commit { color: #e0af68; font-weight: bold; }
  .sa-log .error_notice { color: #f7768e; }
  .sa-commit-marker { display: none; color: #e0af68; font-size: 12px; margin: 6px 0; }
  .sa-console.committed .sa-commit-marker { display: block; }
  .sa-answer { display: none; background: #1a2b1a; border: 1px solid #9ece6a;
    color: #9ece6a; border-radius: 6px; padding: 8px; margin-top: 10px; }
  .sa-banner { display: none; background: #2b1a1a; border: 1px solid #f7768e;
    color: #f7768e; border-radius: 6px; padding: 6px; margin-top: 8px; font-size: 12px; }
`;

export interface ConsoleHandles {
  client: GatewayClient;
  store: SessionStore;
  root: HTMLElement;
  input: HTMLInputElement;
  reviseButton: HTMLButtonElement;
  finalizeButton: HTMLButtonElement;
  demoButton: HTMLButtonElement;
}

export function mountConsole(
  root: HTMLElement,
  url: string,
  socketFactory?: SocketFactory,
): ConsoleHandles {
  root.innerHTML = `
    <style>${STYLES}</style>
    <div class="sa-console">
      <header>
        <h1>speculative session console</h1>
        <span class="sa-status">connecting…</span>
        <span class="sa-ttft"></span>
      </header>
      <div class="sa-controls">
        <input type="text" placeholder="speak here; words flush on space / enter" />
        <button class="sa-revise" title="replace the last sent increment">revise last</button>
        <button class="sa-finalize">finalize</button>
        <button class="sa-demo">speculate demo</button>
      </div>
      <div class="sa-commit-marker">── commit point: held side-effecting calls released ──</div>
      <div class="sa-panes">
        <section class="sa-pane"><h2>tool-call graph</h2><div class="sa-dag"></div></section>
        <section class="sa-pane"><h2>think stream</h2><div class="sa-think"></div></section>
        <section class="sa-pane" style="grid-column: 1 / span 2"><h2>event log</h2>
          <div class="sa-log"></div></section>
      </div>
      <div class="sa-answer"></div>
      <div class="sa-banner"></div>
    </div>
  `;

  const q = <T extends HTMLElement>(sel: string) => root.querySelector(sel) as T;
  const input = q<HTMLInputElement>("input");
  const reviseButton = q<HTMLButtonElement>(".sa-revise");
  const finalizeButton = q<HTMLButtonElement>(".sa-finalize");
  const demoButton = q<HTMLButtonElement>(".sa-demo");
  const statusEl = q<HTMLElement>(".sa-status");

  const store = new SessionStore();
  let lastIncrement = "";
  const client = new GatewayClient(
    url,
    {
      onMessage: (msg) => store.apply(msg),
      onOpen: () => {
        statusEl.textContent = "connected";
      },
      onClose: () => {
        statusEl.textContent = "disconnected — refresh to reconnect";
      },
      onError: (detail) => {
        const banner = q<HTMLElement>(".sa-banner");
        banner.style.display = "block";
        banner.textContent = detail;
      },
    },
    socketFactory,
  );

  function flushInput(): void {
    const text = input.value.trim();
    input.value = "";
    if (!text || client.isFinalized) return;
    lastIncrement = text;
    client.sendPartial(text);
  }

  input.addEventListener("keydown", (ev) => {
    const key = (ev as KeyboardEvent).key;
    if (key === " " || key === "Enter") {
      ev.preventDefault();
      flushInput();
    }
  });

  reviseButton.addEventListener("click", () => {
    const text = input.value.trim() || lastIncrement;
    input.value = "";
    if (!text || client.isFinalized) return;
    lastIncrement = text;
    client.revise(text);
  });

  finalizeButton.addEventListener("click", () => {
    flushInput();
    client.finalize();
    finalizeButton.disabled = true;
  });

  demoButton.addEventListener("click", () => {
    demoButton.disabled = true;
    runDemo(client, DEMO_STEPS, () => {
      finalizeButton.disabled = true;
    });
  });

  store.subscribe(() => render(root, store, statusEl));
  client.connect();
  return { client, store, root, input, reviseButton, finalizeButton, demoButton };
}

function nodeLabel(node: GraphNode): string {
  const deps = node.deps.length ? ` needs ${node.deps.join(",")}` : "";
  return `${node.id}. ${node.name}(${node.args})`;
}

function render(root: HTMLElement, store: SessionStore, statusEl: HTMLElement): void {
  const q = <T extends HTMLElement>(sel: string) => root.querySelector(sel) as T;
  if (store.session) {
    statusEl.textContent = `connected — session ${store.session}`;
  }
  const consoleEl = q<HTMLElement>(".sa-console");
  consoleEl.classList.toggle("committed", store.committed);

  const dag = q<HTMLElement>(".sa-dag");
  dag.innerHTML = "";
  for (const node of store.graph?.nodes ?? []) {
    const el = document.createElement("div");
    el.className = `sa-node ${node.status}`;
    el.dataset.id = String(node.id);
    el.dataset.status = node.status;
    const meta = `${node.status} · ${node.safety} · gen ${node.generation}` +
      (node.deps.length ? ` · needs ${node.deps.join(",")}` : "");
    el.innerHTML = `<div>${escapeHtml(nodeLabel(node))}</div><div class="meta">${escapeHtml(meta)}</div>`;
    dag.appendChild(el);
  }

  const think = q<HTMLElement>(".sa-think");
  think.innerHTML = "";
  for (const text of store.thinkStream) {
    const el = document.createElement("div");
    el.textContent = `· ${text}`;
    think.appendChild(el);
  }
  think.scrollTop = think.scrollHeight;

  const log = q<HTMLElement>(".sa-log");
  log.innerHTML = "";
  for (const row of store.log) {
    const el = document.createElement("div");
    el.className = row.kind;
    el.textContent = `[${row.seconds.toFixed(2)}s] ${row.summary}`;
    log.appendChild(el);
  }
  log.scrollTop = log.scrollHeight;

  const ttft = q<HTMLElement>(".sa-ttft");
  const value = store.ttftSeconds;
  ttft.textContent = value === null ? "" : `TTFT ${value.toFixed(2)}s`;

  const answer = q<HTMLElement>(".sa-answer");
  if (store.answerText !== null) {
    answer.style.display = "block";
    answer.textContent = `answer: ${store.answerText}`;
  }
  if (store.closed) {
    statusEl.textContent = `session closed (${store.closed})`;
  }
}

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;");
}
