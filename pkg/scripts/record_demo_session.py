#!/usr/bin/env python3
"""Record a demo collaboration session.

Generates a seeded in-situ + ex-situ trace pair over the synthetic site,
runs both against an in-process relay on the virtual clock, persists the
session, and prints where everything landed. The resulting directory can
be fed to `arco replay`, `arco inspect`, and `arco export-scene`, and its
log drives the browser client's fixture tests.
"""

import argparse
import sys
from pathlib import Path

from arco import tracegen
from arco.simulator import LatencyModel, VirtualHarness, save_trace


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_session", help="output directory")
    ap.add_argument("--seed", type=int, default=2024)
    ap.add_argument("--events", type=int, default=600)
    ap.add_argument("--latency", default="35:120")
    ap.add_argument("--drop", type=float, default=0.1)
    args = ap.parse_args()

    out = Path(args.out)
    lo, hi = (float(x) for x in args.latency.split(":"))
    ti, te = tracegen.make_trace_pair(args.seed, args.events, out / "assets")
    save_trace(ti, out / "assets" / "insitu.json")
    save_trace(te, out / "assets" / "exsitu.json")

    h = VirtualHarness(seed=args.seed, persist_dir=out / "sessions")
    clients = [h.add_trace(t, LatencyModel(lo, hi, args.drop)) for t in (ti, te)]
    reports = h.run()
    server_hash = h.relay.room_hash(ti.room)
    h.shutdown()

    session_dir = next((out / "sessions" / ti.room).iterdir())
    print(f"session recorded: {session_dir}")
    print(f"server hash:      {server_hash}")
    for peer, r in sorted(reports.items()):
        total = sum(r.events_sent.values())
        print(f"  {peer}: {total} messages, {r.bytes_sent} bytes, final hash "
              f"{'==' if r.final_hash == server_hash else '!='} server")
    print(f"\nverify:  arco replay --session {session_dir}")
    print(f"inspect: arco inspect --session {session_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
