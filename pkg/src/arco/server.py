"""WebSocket relay server.

Endpoints:
  * ``GET /healthz``
  * ``GET /rooms`` - room listing
  * ``GET /rooms/{room_id}/snapshot`` - canonical JSON snapshot
  * ``GET /location-mesh`` - the configured site OBJ, if any
  * ``WS  /ws/{room_id}?peer={id}&role={insitu|exsitu}`` - one canonical
    JSON envelope per text frame

Every room's events are processed under one lock (strictly serial per
room); peer I/O tasks only move bytes between the socket and the room's
outbound queues.
"""

from __future__ import annotations

import asyncio
from pathlib import Path
from typing import Dict, Optional

from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse, PlainTextResponse, Response

from . import canonical
from .protocol import MalformedMessage, decode, encode
from .relay import DuplicatePeer, RelayCore, UnknownPeer


def create_app(
    core: RelayCore,
    location_mesh_path: Optional[str] = None,
    flush_window_s: float = 0.0,
) -> FastAPI:
    """``flush_window_s`` > 0 batches outbound sends per peer: the sender
    sleeps one window after waking so queued same-key lossy traffic
    collapses before hitting the socket. Reliable messages are never
    delayed beyond that one window. 0 sends immediately."""
    app = FastAPI(title="arco relay")
    locks: Dict[str, asyncio.Lock] = {}
    wakeups: Dict[str, asyncio.Event] = {}

    def lock_for(room_id: str) -> asyncio.Lock:
        return locks.setdefault(room_id, asyncio.Lock())

    def wake_room(room_id: str) -> None:
        room = core.rooms.get(room_id)
        if room is None:
            return
        for peer in room.peers:
            ev = wakeups.get(f"{room_id}/{peer}")
            if ev is not None:
                ev.set()

    @app.get("/healthz")
    async def healthz():
        return {"ok": True, "rooms": len(core.rooms)}

    @app.get("/rooms")
    async def rooms():
        return {
            "rooms": [
                {
                    "next_seq": room.next_seq,
                    "peers": sorted(room.peers),
                    "room": room.room_id,
                    "session_id": room.session_id,
                }
                for room in core.rooms.values()
            ]
        }

    @app.get("/rooms/{room_id}/snapshot")
    async def room_snapshot(room_id: str):
        if room_id not in core.rooms:
            return JSONResponse({"error": f"no such room {room_id}"}, status_code=404)
        async with lock_for(room_id):
            snap = core.snapshot(room_id)
        return Response(canonical.dumps(snap.to_tree()), media_type="application/json")

    @app.get("/location-mesh")
    async def location_mesh():
        if location_mesh_path is None or not Path(location_mesh_path).exists():
            return JSONResponse({"error": "no location mesh configured"}, status_code=404)
        return PlainTextResponse(Path(location_mesh_path).read_text(encoding="utf-8"))

    @app.websocket("/ws/{room_id}")
    async def ws_endpoint(ws: WebSocket, room_id: str):
        peer = ws.query_params.get("peer")
        role = ws.query_params.get("role", "exsitu")
        if not peer or role not in ("insitu", "exsitu"):
            await ws.close(code=4400, reason="need peer and role=insitu|exsitu")
            return
        await ws.accept()
        try:
            async with lock_for(room_id):
                core.join(room_id, peer, role)
        except DuplicatePeer as e:
            await ws.close(code=4409, reason=str(e))
            return
        wake_key = f"{room_id}/{peer}"
        wakeup = wakeups[wake_key] = asyncio.Event()
        wake_room(room_id)

        async def sender():
            while True:
                await wakeup.wait()
                wakeup.clear()
                if flush_window_s > 0:
                    await asyncio.sleep(flush_window_s)
                async with lock_for(room_id):
                    room = core.rooms.get(room_id)
                    if room is None or peer not in room.peers:
                        return  # disconnected by the relay (e.g. overflow)
                    batch = core.drain(room_id, peer)
                for env in batch:
                    await ws.send_text(encode(env))

        send_task = asyncio.create_task(sender())
        try:
            while True:
                text = await ws.receive_text()
                try:
                    env = decode(text)
                except MalformedMessage as e:
                    await ws.close(code=4400, reason=str(e)[:120])
                    break
                if env.sender != peer or env.room != room_id:
                    await ws.close(code=4403, reason="sender/room mismatch")
                    break
                async with lock_for(room_id):
                    try:
                        core.route(env)
                    except UnknownPeer:
                        break
                wake_room(room_id)
        except WebSocketDisconnect:
            pass
        finally:
            send_task.cancel()
            wakeups.pop(wake_key, None)
            async with lock_for(room_id):
                room = core.rooms.get(room_id)
                if room is not None and peer in room.peers:
                    core.leave(room_id, peer)
            wake_room(room_id)

    return app


def run_server(
    host: str = "127.0.0.1",
    port: int = 8787,
    *,
    base_scene_path: Optional[str] = None,
    persist_dir: Optional[str] = None,
    queue_cap: int = 1000,
    location_mesh_path: Optional[str] = None,
    flush_window_s: float = 0.0,
) -> None:
    import uvicorn

    from . import persistence

    base_scene = None
    if base_scene_path:
        base_scene = persistence.load_base_scene(base_scene_path)
    core = RelayCore(base_scene=base_scene, persist_dir=persist_dir, queue_cap=queue_cap)
    app = create_app(core, location_mesh_path, flush_window_s)
    uvicorn.run(app, host=host, port=port, log_level="warning")
