"""Wall-clock session service for live interaction.

One WebSocket connection owns one session. Client messages (incremental
utterance text, revisions, the finalize signal) become query-update events
on the session's queue with wall-clock timestamps; every trajectory entry
plus a full graph snapshot is pushed back to the client as it happens.
The action/event handling is the same ``SessionCore`` the simulator runs,
so the commit barrier and speculation rules behave identically; only the
clock differs (real timers, no token budgets: interruption is driven
purely by event arrival). Timestamps: ``t`` carries elapsed milliseconds,
``s`` elapsed seconds.

Client -> server messages:
  {"type": "open"}                  optional greeting, answered with session info
  {"type": "partial_text", "text"}  one utterance increment
  {"type": "revise", "text"}        replaces the previous increment
  {"type": "finalize", "text"?}     end of utterance (optional trailing text)
  {"type": "close"}

Server -> client messages:
  {"type": "opened", "session": id}
  {"type": "entry", "entry": {...trace entry...}}
  {"type": "graph", "nodes": [...], "committed": bool}
  {"type": "error", "message": str}
  {"type": "closed", "status": "answered" | "failed" | "client"}
"""

from __future__ import annotations

import asyncio
import itertools
import random
import time
from dataclasses import dataclass

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import RunConfig, derive_seed
from .environment import ToolRegistry, default_registry, demo_state
from .model import InteractiveDemoModel
from .session import Outcome, SessionCore, StepParser, ToolDone
from .stt import Update
from .trace import Trajectory

GRAPH_ENTRY_KINDS = {"issue", "edit", "cancel", "dispatch", "complete", "commit"}


@dataclass
class _ClientMessage:
    payload: dict


class GatewaySession:
    """Wall-clock driver around a SessionCore for one connection."""

    def __init__(
        self,
        registry: ToolRegistry,
        model,
        send,
        session_id: str,
        pacing_seconds_per_token: float = 0.0,
        seed: int = 0,
    ):
        self.send = send
        self.model = model
        self.pacing = pacing_seconds_per_token
        self.queue: asyncio.Queue = asyncio.Queue()
        self.started = time.monotonic()
        self.pending_tools = 0
        self.latency_rng = random.Random(derive_seed(seed, session_id, "latency"))
        config = RunConfig(mode="speculative", seed=seed)
        trajectory = Trajectory(
            header={
                "seed": seed,
                "rate": None,
                "mode": "wall-clock",
                "sample_id": session_id,
                "dataset": "live",
                "latency": "wall-clock",
                "config_hash": config.hash(),
            }
        )
        self.core = SessionCore(
            config=config,
            registry=registry,
            sim_state=demo_state(),
            trajectory=trajectory,
            timefn=self._now,
            queue_empty_fn=lambda: self.queue.empty() and self.pending_tools == 0,
        )
        self._pushed = 0
        self._finalized = False
        self._closed = False
        self._tool_tasks: set[asyncio.Task] = set()

    def _now(self) -> tuple[int, float]:
        elapsed = time.monotonic() - self.started
        return int(elapsed * 1000), elapsed

    # -- outbound ------------------------------------------------------------

    async def _flush(self) -> None:
        entries = self.core.trajectory.entries
        new = entries[self._pushed :]
        if not new:
            return
        self._pushed = len(entries)
        graph_changed = False
        for entry in new:
            await self.send({"type": "entry", "entry": entry})
            if entry["kind"] in GRAPH_ENTRY_KINDS:
                graph_changed = True
        if graph_changed:
            await self.send(self.graph_snapshot())

    def graph_snapshot(self) -> dict:
        from .protocol import render_args

        nodes = []
        for rec in sorted(self.core.graph.records.values(), key=lambda r: r.id):
            nodes.append(
                {
                    "id": rec.id,
                    "name": rec.name,
                    "args": render_args(rec.args),
                    "status": rec.status.value,
                    "safety": rec.safety.value,
                    "deps": sorted(rec.deps),
                    "generation": rec.generation,
                }
            )
        return {
            "type": "graph",
            "nodes": nodes,
            "committed": self.core.graph.committed,
        }

    # -- inbound -------------------------------------------------------------

    async def handle_client(self, payload: dict) -> None:
        kind = payload.get("type")
        if kind == "open":
            await self.send(self.graph_snapshot())
            return
        if kind in ("partial_text", "revise", "finalize"):
            if self._finalized:
                await self.send(
                    {"type": "error", "message": "utterance already finalized"}
                )
                return
            if kind == "finalize":
                self._finalized = True
            await self.queue.put(_ClientMessage(payload))
            return
        if kind == "close":
            self._closed = True
            await self.queue.put(_ClientMessage(payload))
            return
        await self.send({"type": "error", "message": f"unknown message {kind!r}"})

    def _apply_client_message(self, payload: dict) -> None:
        kind = payload["type"]
        if kind == "close":
            return
        text = payload.get("text", "")
        _, elapsed = self._now()
        if kind == "revise" and self.core.query_parts:
            # replace the previous hypothesis tail; the model still sees a
            # fresh partial update carrying the corrected text
            self.core.query_parts.pop()
        self.core.process_update(
            Update(text=text, arrival_seconds=elapsed, is_final=kind == "finalize"),
            interrupted=False,
        )

    # -- tools ---------------------------------------------------------------

    def _dispatch_ready(self) -> None:
        for item in self.core.take_ready():
            spec = self.core.registry.get(item.name)
            latency = spec.latency_model.draw(self.latency_rng)
            self.core.emit(
                "dispatch",
                id=item.id,
                generation=item.generation,
                name=item.name,
                safety=item.safety.value,
                latency_seconds=latency,
                completes_at=None,
            )
            self.pending_tools += 1
            task = asyncio.create_task(self._complete_later(item, latency))
            self._tool_tasks.add(task)
            task.add_done_callback(self._tool_tasks.discard)

    async def _complete_later(self, item, latency: float) -> None:
        await asyncio.sleep(latency)
        await self.queue.put(ToolDone(item.id, item.generation, item.name, item.resolved_args))

    # -- main loop -------------------------------------------------------------

    async def _process(self, item, interrupted: bool) -> None:
        if isinstance(item, _ClientMessage):
            self._apply_client_message(item.payload)
        elif isinstance(item, ToolDone):
            self.pending_tools -= 1
            self.core.process_tool_done(item, interrupted)
        self._dispatch_ready()
        await self._flush()

    async def _generate(self) -> Outcome:
        core = self.core
        handle = self.model.begin(core.context())
        parser = StepParser()
        emitted = 0
        while True:
            if not self.queue.empty() or self._closed:
                # new information arrived: halt generation immediately
                handle.interrupt()
                if emitted:
                    core.emit("interrupted", text=parser.buffer)
                item = self.queue.get_nowait()
                await self._process(item, interrupted=emitted > 0)
                return Outcome.CONTINUE
            chunk = handle.next_chunk()
            if chunk is None:
                break
            emitted += chunk.tokens
            core.append_model_text(chunk.text)
            actions, err = parser.feed(chunk.text)
            if parser.saw_answer_tag and not core.answer_started:
                core.note_answer_started()
            for action in actions:
                outcome = core.handle_action(action)
                self._dispatch_ready()
                await self._flush()
                if outcome in (Outcome.REJECTED, Outcome.FAILED, Outcome.ANSWERED,
                               Outcome.PAUSE):
                    handle.interrupt()
                    return outcome
            if err is not None:
                handle.interrupt()
                out = core.forbidden(err)
                await self._flush()
                return out
            await self._flush()
            if self.pacing:
                await asyncio.sleep(self.pacing)
        err = parser.finish()
        if err is not None:
            out = core.forbidden(err)
            await self._flush()
            return out
        return Outcome.CONTINUE

    async def run(self) -> str:
        from .session import Phase

        core = self.core
        await self.send(self.graph_snapshot())
        status = "client"
        try:
            while not self._closed:
                if core.phase in (Phase.ANSWERED, Phase.FAILED):
                    break
                # before generating, drain anything already queued
                while not self.queue.empty():
                    await self._process(self.queue.get_nowait(), interrupted=False)
                if self._closed or core.phase in (Phase.ANSWERED, Phase.FAILED):
                    break
                if core.updates_seen == 0:
                    # nothing heard yet: wait for the first utterance text
                    await self._process(await self.queue.get(), interrupted=False)
                    continue
                outcome = await self._generate()
                if outcome == Outcome.PAUSE:
                    await self._process(await self.queue.get(), interrupted=False)
            if core.phase == Phase.ANSWERED:
                status = "answered"
            elif core.phase == Phase.FAILED:
                status = "failed"
            if core.phase in (Phase.ANSWERED, Phase.FAILED):
                core.emit(
                    "end",
                    status=status,
                    reason=core.end_reason,
                    error_count=core.error_count,
                    total_tokens=0,
                )
                await self._flush()
            await self.send({"type": "closed", "status": status})
        finally:
            for task in self._tool_tasks:
                task.cancel()
        return status


# ---------------------------------------------------------------------------
# Service
# ---------------------------------------------------------------------------


def create_app(
    registry: ToolRegistry | None = None,
    model_factory=None,
    pacing_seconds_per_token: float = 0.0,
    seed: int = 0,
) -> FastAPI:
    registry = registry if registry is not None else default_registry()
    model_factory = model_factory or InteractiveDemoModel
    app = FastAPI()
    counter = itertools.count(1)

    @app.get("/healthz")
    async def healthz():
        return {"status": "ok"}

    @app.websocket("/session")
    async def session_endpoint(ws: WebSocket):
        await ws.accept()
        session_id = f"live-{next(counter)}"
        session = GatewaySession(
            registry=registry,
            model=model_factory(),
            send=ws.send_json,
            session_id=session_id,
            pacing_seconds_per_token=pacing_seconds_per_token,
            seed=seed,
        )
        await ws.send_json({"type": "opened", "session": session_id})
        runner = asyncio.create_task(session.run())
        try:
            while not runner.done():
                receive = asyncio.create_task(ws.receive_json())
                done, _ = await asyncio.wait(
                    {receive, runner}, return_when=asyncio.FIRST_COMPLETED
                )
                if receive in done:
                    try:
                        await session.handle_client(receive.result())
                    except (ValueError, KeyError) as e:
                        await ws.send_json({"type": "error", "message": str(e)})
                else:
                    receive.cancel()
            await runner
        except WebSocketDisconnect:
            runner.cancel()
        except RuntimeError:
            # receive after disconnect
            runner.cancel()
        finally:
            if not runner.done():
                runner.cancel()

    return app


def serve(
    host: str = "127.0.0.1",
    port: int = 8700,
    registry: ToolRegistry | None = None,
    pacing_seconds_per_token: float = 0.02,
) -> None:
    import uvicorn

    app = create_app(registry=registry, pacing_seconds_per_token=pacing_seconds_per_token)
    uvicorn.run(app, host=host, port=port, log_level="warning")
