/** Thin WebSocket wrapper speaking the gateway session schema. */

import type { ClientMessage, ServerMessage } from "./protocol.js";

/** The subset of the WebSocket surface we need; satisfied by the browser
 * WebSocket and by the 'ws' package in tests. */
export interface SocketLike {
  send(data: string): void;
  close(): void;
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientHandlers {
  onMessage?: (msg: ServerMessage) => void;
  onOpen?: () => void;
  onClose?: () => void;
  onError?: (detail: string) => void;
}

export class GatewayClient {
  private socket: SocketLike | null = null;
  private finalized = false;

  constructor(
    private readonly url: string,
    private readonly handlers: ClientHandlers = {},
    private readonly socketFactory: SocketFactory = (u) =>
      new WebSocket(u) as unknown as SocketLike,
  ) {}

  get isFinalized(): boolean {
    return this.finalized;
  }

  connect(): void {
    const socket = this.socketFactory(this.url);
    this.socket = socket;
    socket.onopen = () => this.handlers.onOpen?.();
    socket.onclose = () => this.handlers.onClose?.();
    socket.onerror = () => this.handlers.onError?.("connection error");
    socket.onmessage = (ev) => {
      let parsed: ServerMessage;
      try {
        parsed = JSON.parse(String(ev.data)) as ServerMessage;
      } catch {
        this.handlers.onError?.(`malformed server message: ${String(ev.data).slice(0, 80)}`);
        return;
      }
      this.handlers.onMessage?.(parsed);
    };
  }

  private send(msg: ClientMessage): void {
    if (!this.socket) throw new Error("not connected");
    this.socket.send(JSON.stringify(msg));
  }

  sendPartial(text: string): void {
    if (this.finalized) throw new Error("utterance already finalized");
    if (text.trim().length === 0) return;
    this.send({ type: "partial_text", text });
  }

  revise(text: string): void {
    if (this.finalized) throw new Error("utterance already finalized");
    this.send({ type: "revise", text });
  }

  finalize(text?: string): void {
    if (this.finalized) return;
    this.finalized = true;
    this.send(text ? { type: "finalize", text } : { type: "finalize" });
  }

  closeSession(): void {
    this.send({ type: "close" });
  }

  disconnect(): void {
    this.socket?.close();
    this.socket = null;
  }
}
