"""Wall-clock trace execution against a live relay over WebSocket.

This is the interactive/demo path (e.g. feeding the browser editor a
scripted in-situ partner). Deterministic runs use the virtual-clock
harness in simulator.py instead.
"""

from __future__ import annotations

import asyncio
import time
from typing import Dict, List, Optional

import websockets

from . import meshio
from .client import SessionClient
from .protocol import encode
from .simulator import LatencyModel, RunReport, Trace, _TraceExec


async def run_trace_live(
    traces: List[Trace],
    relay_url: str,
    latency: Optional[LatencyModel] = None,
    *,
    time_scale: float = 1.0,
) -> Dict[str, RunReport]:
    """Execute traces in real time against ``relay_url`` (ws://host:port)."""
    reports = await asyncio.gather(
        *[_run_one(trace, relay_url, latency, time_scale) for trace in traces]
    )
    return {r.peer: r for r in reports}


async def _run_one(
    trace: Trace, relay_url: str, latency: Optional[LatencyModel], time_scale: float
) -> RunReport:
    import random

    trace.validate()
    location_mesh = None
    if trace.location_mesh is not None:
        location_mesh = meshio.load_obj(trace.base_dir / trace.location_mesh)
    client = SessionClient(
        room=trace.room,
        peer=trace.peer,
        role=trace.role,
        clock_ms=lambda: int(time.time() * 1000),
        location_mesh=location_mesh,
    )
    runner = _TraceExec(trace, client)
    report = RunReport(peer=trace.peer)
    rng = random.Random()

    url = f"{relay_url.rstrip('/')}/ws/{trace.room}?peer={trace.peer}&role={trace.role}"
    async with websockets.connect(url, max_size=16 * 1024 * 1024) as ws:
        client.connected = True
        send_lock = asyncio.Lock()

        async def pump():
            for env in client.take_outbox():
                delay_ms = 0.0
                if latency is not None:
                    delay_ms = latency.sample_ms(rng)
                    report.latency_samples_ms.append(delay_ms)
                if delay_ms:
                    await asyncio.sleep(delay_ms / 1000.0)
                async with send_lock:  # keep the stream FIFO
                    await ws.send(encode(env))

        async def reader():
            try:
                async for text in ws:
                    client.ingest_text(text)
            except websockets.ConnectionClosed:
                pass

        async def poller():
            while True:
                await asyncio.sleep(0.025)
                client.poll(time.time())
                await pump()

        reader_task = asyncio.create_task(reader())
        poll_task = asyncio.create_task(poller())
        start = time.time()
        try:
            for act in trace.actions:
                target = start + (act.t_ms / 1000.0) / time_scale
                delay = target - time.time()
                if delay > 0:
                    await asyncio.sleep(delay)
                if act.action in ("disconnect", "reconnect"):
                    continue  # not supported in live mode
                runner.run_action(act)
                await pump()
            client.outbox.extend(client.queue.flush_now())
            await pump()
            await asyncio.sleep(0.3)  # grace for echoes in flight
        finally:
            poll_task.cancel()
            reader_task.cancel()

    report.events_sent = dict(client.sent_counts)
    report.bytes_sent = client.bytes_sent
    report.gate_violations = len(client.gate_violations)
    if client.state is not None:
        report.final_hash = client.state_hash()
    return report
