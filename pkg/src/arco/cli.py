"""Operator entry points.

Subcommands: serve, simulate, replay, inspect, export-scene.
Exit codes: 0 ok, 1 usage error, 2 runtime error, 3 verification failure.
Every flag can also be set via an ``ARCO_``-prefixed environment variable
(e.g. ``ARCO_PORT=9000 arco serve``).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from . import canonical

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFY = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit 1 on usage errors, not argparse's 2
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(EXIT_USAGE)


def _env_default(flag: str, fallback=None):
    return os.environ.get("ARCO_" + flag.upper().replace("-", "_"), fallback)


def build_parser() -> _Parser:
    p = _Parser(prog="arco", description="collaborative AR scene-sync relay and tools")
    sub = p.add_subparsers(dest="command", metavar="command")

    serve = sub.add_parser("serve", help="start the relay server")
    serve.add_argument("--host", default=_env_default("host", "127.0.0.1"))
    serve.add_argument("--port", type=int, default=int(_env_default("port", 8787)))
    serve.add_argument("--persist-dir", default=_env_default("persist_dir"))
    serve.add_argument("--base-scene", default=_env_default("base_scene"))
    serve.add_argument("--location-mesh", default=_env_default("location_mesh"))
    serve.add_argument("--queue-cap", type=int, default=int(_env_default("queue_cap", 1000)))
    serve.add_argument("--flush-window", type=float, default=float(_env_default("flush_window", 0.0)),
                       help="seconds to batch outbound sends per peer (0 = immediate)")

    sim = sub.add_parser("simulate", help="run a scripted client trace")
    sim.add_argument("--trace", required=True, action="append",
                     help="trace JSON file (repeatable)")
    sim.add_argument("--room", default=_env_default("room"),
                     help="override the trace's room id")
    sim.add_argument("--latency", default=_env_default("latency"),
                     help="LO:HI per-message latency in ms (e.g. 35:120)")
    sim.add_argument("--seed", type=int, default=int(_env_default("seed", 0)))
    sim.add_argument("--drop", type=float, default=float(_env_default("drop", 0.0)),
                     help="lossy-channel drop rate in [0,1]")
    sim.add_argument("--virtual-clock", action="store_true",
                     default=_env_default("virtual_clock") is not None)
    sim.add_argument("--relay", default=_env_default("relay"),
                     help="live relay URL (ws://host:port), wall-clock mode")
    sim.add_argument("--persist-dir", default=_env_default("persist_dir"))
    sim.add_argument("--base-scene", default=_env_default("base_scene"))
    sim.add_argument("--json", action="store_true", help="machine-readable stdout")

    rep = sub.add_parser("replay", help="re-fold a recorded session and verify")
    rep.add_argument("--session", required=True, help="session directory")
    rep.add_argument("--verify-hash", default=None)
    rep.add_argument("--base-scene", default=_env_default("base_scene"))
    rep.add_argument("--json", action="store_true")

    ins = sub.add_parser("inspect", help="summarize a recorded session")
    ins.add_argument("--session", required=True)
    ins.add_argument("--json", action="store_true")

    exp = sub.add_parser("export-scene", help="replay a session into a scene directory")
    exp.add_argument("--session", required=True)
    exp.add_argument("--out", required=True)
    exp.add_argument("--base-scene", default=_env_default("base_scene"))
    return p


def _load_base(path: Optional[str]):
    from .scene import SceneState

    if not path:
        return SceneState()
    from . import persistence

    return persistence.load_base_scene(path)


def cmd_serve(args) -> int:
    from .server import run_server

    run_server(
        host=args.host,
        port=args.port,
        base_scene_path=args.base_scene,
        persist_dir=args.persist_dir,
        queue_cap=args.queue_cap,
        location_mesh_path=args.location_mesh,
        flush_window_s=args.flush_window,
    )
    return EXIT_OK


def _parse_latency(spec: Optional[str], drop: float):
    from .simulator import LatencyModel

    if not spec:
        return LatencyModel(drop_rate=drop)
    try:
        lo, hi = spec.split(":")
        return LatencyModel(float(lo), float(hi), drop)
    except ValueError as e:
        sys.stderr.write(f"error: bad --latency {spec!r}: {e}\n")
        raise SystemExit(EXIT_USAGE) from None


def cmd_simulate(args) -> int:
    from . import simulator

    latency = _parse_latency(args.latency, args.drop)
    traces = []
    for path in args.trace:
        trace = simulator.load_trace(path)
        if args.room:
            trace.room = args.room
        traces.append(trace)

    if args.relay and not args.virtual_clock:
        import asyncio

        from .livesim import run_trace_live

        reports = asyncio.run(
            run_trace_live(traces, args.relay, latency if args.latency else None)
        )
        hashes = {}
    else:
        h = simulator.VirtualHarness(
            seed=args.seed,
            base_scene=_load_base(args.base_scene),
            persist_dir=args.persist_dir,
        )
        for trace in traces:
            h.add_trace(trace, latency)
        reports = h.run()
        hashes = h.shutdown()

    out = {
        "reports": {peer: r.to_tree() for peer, r in reports.items()},
        "room_hashes": hashes,
    }
    if args.json:
        print(canonical.dumps(out))
    else:
        for peer, r in sorted(reports.items()):
            t = r.to_tree()
            print(f"peer {peer}: sent={sum(r.events_sent.values())} messages "
                  f"({t['bytes_sent']} bytes), gate_violations={t['gate_violations']}, "
                  f"final_hash={r.final_hash}")
        for room, hsh in sorted(hashes.items()):
            print(f"room {room}: hash={hsh}")
    return EXIT_OK


def _fold_session(session_dir: str, base_scene_path: Optional[str]):
    from . import persistence

    log = persistence.load_log(Path(session_dir) / "session.log")
    state = persistence.replay(log, _load_base(base_scene_path))
    return log, state


def cmd_replay(args) -> int:
    log, state = _fold_session(args.session, args.base_scene)
    actual = state.hash()
    expected = args.verify_hash
    if expected is None:
        summary = Path(args.session) / "summary.json"
        if summary.exists():
            expected = json.loads(summary.read_text())["final_hash"]
    result = {
        "corrupt_records": [str(c) for c in log.corrupt],
        "expected_hash": expected,
        "hash": actual,
        "records": len(log.records),
        "verified": expected is None or expected == actual,
    }
    if args.json:
        print(canonical.dumps(result))
    else:
        print(f"{len(log.records)} records, hash={actual}")
        if expected is not None:
            print("hash matches" if result["verified"] else f"HASH MISMATCH (expected {expected})")
        for c in log.corrupt:
            sys.stderr.write(f"warning: {c}\n")
    return EXIT_OK if result["verified"] else EXIT_VERIFY


def cmd_inspect(args) -> int:
    from . import persistence
    from .protocol import Control

    log = persistence.load_log(Path(args.session) / "session.log")
    roles = {}
    for env in log.records:
        if isinstance(env.body, Control) and env.body.action == "join" and env.body.role:
            roles[env.body.peer] = env.body.role
    counts: dict = {}
    for env in log.records:
        role = roles.get(env.sender, "?")
        key = (env.body.type, role)
        counts[key] = counts.get(key, 0) + 1

    kinds = sorted({k for k, _ in counts})
    result = {
        "feature_usage": {
            kind: {role: counts.get((kind, role), 0) for role in sorted(set(roles.values()) | {"?"})
                   if counts.get((kind, role), 0)}
            for kind in kinds
        },
        "peers": roles,
        "records": len(log.records),
    }
    if args.json:
        print(canonical.dumps(result))
    else:
        print(f"session {args.session}: {len(log.records)} reliable records")
        print(f"{'message kind':24} {'role':8} count")
        for kind in kinds:
            for role, n in sorted(result["feature_usage"][kind].items()):
                print(f"{kind:24} {role:8} {n}")
    for c in log.corrupt:
        sys.stderr.write(f"warning: {c}\n")
    return EXIT_OK


def cmd_export_scene(args) -> int:
    from . import persistence

    _, state = _fold_session(args.session, args.base_scene)
    persistence.save_scene(state, args.out)
    print(f"exported scene to {args.out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    handlers = {
        "serve": cmd_serve,
        "simulate": cmd_simulate,
        "replay": cmd_replay,
        "inspect": cmd_inspect,
        "export-scene": cmd_export_scene,
    }
    try:
        return handlers[args.command](args)
    except SystemExit:
        raise
    except FileNotFoundError as e:
        sys.stderr.write(f"error: {e}\n")
        return EXIT_RUNTIME
    except Exception as e:  # deliberate catch-all: map to the documented exit code
        sys.stderr.write(f"error: {type(e).__name__}: {e}\n")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
