/** Bundled timed transcript for the "speculate demo" toggle: the utterance
 * streams word by word, the recipient gets revised mid-way, and the send
 * stays held until finalize commits the plan. */

import { GatewayClient } from "./client.js";

export type DemoStep =
  | { kind: "partial"; text: string; delayMs: number }
  | { kind: "revise"; text: string; delayMs: number }
  | { kind: "finalize"; delayMs: number };

const WORD_MS = 280;

export const DEMO_STEPS: DemoStep[] = [
  { kind: "partial", text: "send", delayMs: WORD_MS },
  { kind: "partial", text: "a", delayMs: WORD_MS },
  { kind: "partial", text: "message", delayMs: WORD_MS },
  { kind: "partial", text: "to", delayMs: WORD_MS },
  { kind: "partial", text: "Alice", delayMs: WORD_MS },
  { kind: "revise", text: "Alicia", delayMs: 700 },
  { kind: "partial", text: "saying", delayMs: WORD_MS },
  { kind: "partial", text: "lunch", delayMs: WORD_MS },
  { kind: "partial", text: "is", delayMs: WORD_MS },
  { kind: "partial", text: "ready", delayMs: WORD_MS },
  { kind: "finalize", delayMs: 500 },
];

export function runDemo(
  client: GatewayClient,
  steps: DemoStep[] = DEMO_STEPS,
  onDone?: () => void,
): void {
  let at = 0;
  const next = () => {
    if (at >= steps.length) {
      onDone?.();
      return;
    }
    const step = steps[at++];
    setTimeout(() => {
      if (step.kind === "partial") client.sendPartial(step.text);
      else if (step.kind === "revise") client.revise(step.text);
      else client.finalize();
      next();
    }, step.delayMs);
  };
  next();
}
