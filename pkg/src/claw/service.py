"""HTTP/JSON surface over sessions, plus a server-sent event stream.

Routes deliberately expose only what a remote console needs: create sessions,
send turns, approve plans, inspect state and traces, roll back, and follow
the event log.  The SSE stream replays history from ``Last-Event-ID`` (or
``?after=``) and then tails new events, so clients survive reconnects
without gaps.
"""

from __future__ import annotations

import asyncio
import os
from pathlib import Path

from fastapi import Body, FastAPI, Request
from fastapi.responses import JSONResponse, StreamingResponse

from .diffing import diff_scenes
from .errors import (AlreadyExecuted, AmbiguousReference, ClawError,
                     CorruptLog, InconsistentGoal, SessionBusy, StalePlan,
                     UnknownPlan, UnknownReference, UnknownSession,
                     UnknownSnapshot, UnparsableIntent)
from .session import SessionManager
from .state import canonical_json

DEFAULT_DATA_DIR = "./claw-data"

_STATUS_BY_ERROR = {
    UnparsableIntent: 422,
    AmbiguousReference: 422,
    UnknownReference: 422,
    InconsistentGoal: 422,
    UnknownSession: 404,
    UnknownPlan: 404,
    UnknownSnapshot: 404,
    SessionBusy: 409,
    StalePlan: 409,
    AlreadyExecuted: 409,
    CorruptLog: 500,
}

SSE_POLL_INTERVAL = 0.05
SSE_HEARTBEAT_EVERY = 40       # polls between keepalive comments


def _status_for(exc: ClawError) -> int:
    for klass, status in _STATUS_BY_ERROR.items():
        if isinstance(exc, klass):
            return status
    return 400


def create_app(data_dir: str | Path | None = None, seed: int | None = None,
               fault_rates: dict | None = None) -> FastAPI:
    data_dir = Path(data_dir or os.environ.get("CLAW_DATA_DIR", DEFAULT_DATA_DIR))
    if seed is None:
        seed = int(os.environ.get("CLAW_SEED", "0"))
    app = FastAPI(title="claw", version="1.0")
    manager = SessionManager(data_dir, seed=seed, fault_rates=fault_rates)
    app.state.manager = manager

    @app.exception_handler(ClawError)
    async def _claw_error(request: Request, exc: ClawError):
        return JSONResponse(status_code=_status_for(exc),
                            content={"error": exc.payload()})

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "sessions": len(manager.ids())}

    @app.get("/sessions")
    async def list_sessions():
        return {"sessions": manager.ids()}

    @app.post("/sessions", status_code=201)
    async def create_session(body: dict = Body(default={})):
        s = manager.create(body.get("session_id"), body.get("seed"))
        return {"session_id": s.session_id, "seed": s.seed,
                "context_hash": s.context_hash}

    @app.post("/sessions/{sid}/turns")
    async def post_turn(sid: str, body: dict = Body(...)):
        s = manager.get(sid)
        return s.handle_turn(body.get("text", ""))

    @app.post("/sessions/{sid}/plans/{plan_id}/approve")
    async def approve_plan(sid: str, plan_id: str, body: dict = Body(default={})):
        s = manager.get(sid)
        return s.approve(plan_id, bool(body.get("approved", True)))

    @app.get("/sessions/{sid}/state")
    async def get_state(sid: str):
        s = manager.get(sid)
        return {"session_id": sid, "context_hash": s.context_hash,
                "context": s.ctx.as_dict(),
                "pending_plans": sorted(s.pending),
                "attention_units": s.attention_units,
                "event_count": len(s.events)}

    @app.get("/sessions/{sid}/trace")
    async def get_trace(sid: str):
        s = manager.get(sid)
        return {"traces": s.traces}

    @app.get("/sessions/{sid}/snapshots")
    async def get_snapshots(sid: str):
        s = manager.get(sid)
        return {"snapshots": s.snapshots.ids()}

    @app.post("/sessions/{sid}/rollback/{snapshot_id}")
    async def rollback(sid: str, snapshot_id: str):
        s = manager.get(sid)
        return s.rollback(snapshot_id)

    @app.get("/sessions/{sid}/diff")
    async def get_diff(sid: str, base: str, target: str):
        s = manager.get(sid)
        a = s.snapshots.restore(base)
        b = s.snapshots.restore(target)
        return {"base": base, "target": target,
                "scene": diff_scenes(a.scene, b.scene)}

    @app.get("/sessions/{sid}/assets")
    async def get_assets(sid: str):
        s = manager.get(sid)
        return {"assets": [s.env.assets.get(i).as_dict()
                           for i in s.env.assets.ids()]}

    @app.get("/sessions/{sid}/events")
    async def events(sid: str, request: Request, after: int = -1,
                     once: bool = False):
        """SSE tail of the event log; ``once`` closes after catching up,
        which suits buffering clients (EventSource reconnects anyway)."""
        s = manager.get(sid)
        last_id = request.headers.get("last-event-id")
        start = after
        if last_id is not None:
            try:
                start = max(start, int(last_id))
            except ValueError:
                pass

        async def stream():
            cursor = start + 1
            idle = 0
            while True:
                if await request.is_disconnected():
                    return
                log = s.events
                if cursor < len(log):
                    while cursor < len(log):
                        ev = log[cursor]
                        data = canonical_json(ev.as_dict())
                        yield f"id: {ev.seq}\nevent: {ev.kind}\ndata: {data}\n\n"
                        cursor += 1
                    idle = 0
                elif once:
                    return
                else:
                    idle += 1
                    if idle >= SSE_HEARTBEAT_EVERY:
                        yield ": keepalive\n\n"
                        idle = 0
                    await asyncio.sleep(SSE_POLL_INTERVAL)

        return StreamingResponse(stream(), media_type="text/event-stream",
                                 headers={"Cache-Control": "no-cache",
                                          "X-Accel-Buffering": "no"})

    @app.get("/sessions/{sid}/events.json")
    async def events_json(sid: str, after: int = -1):
        """One-shot JSON view of the log (no tailing); for tools and tests."""
        s = manager.get(sid)
        return {"events": [e.as_dict() for e in s.events if e.seq > after]}

    return app


def main():  # pragma: no cover - thin launcher, exercised via the CLI
    import uvicorn
    uvicorn.run(create_app(), host="127.0.0.1", port=8787)


if __name__ == "__main__":  # pragma: no cover
    main()
