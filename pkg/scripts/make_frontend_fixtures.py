#!/usr/bin/env python3
"""Generate cross-language test fixtures for the browser client.

The browser client re-implements the wire codec, state fold, and hash in
TypeScript; these fixtures pin it against this package byte for byte:

  float_vectors.json   canonical float formatting cases
  stream.jsonl         a recorded reliable stream (session.log of a run)
  stream_meta.json     snapshot envelope to start from + final server hash
  lossy.jsonl          hand-built lossy envelopes for codec/presence tests
  cursor_oracle.json   panel camera + pixels + brute-force raycast hits
  midjoin_snapshot.json  non-empty snapshot envelope + its state hash

Deterministic: regenerating produces identical bytes.
"""

import base64
import json
import random
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from arco import tracegen
from arco.canonical import canon_float, fmt_float
from arco.geometry import Pose, Ray, TriangleMesh
from arco.protocol import (
    CursorLive,
    PresencePose,
    SnapshotMsg,
    ViewFrame,
    WireEnvelope,
    encode,
)
from arco.annotation import Cursor
from arco.simulator import LatencyModel, VirtualHarness

OUT = Path(__file__).resolve().parents[1] / "frontend" / "tests" / "fixtures"


def float_vectors() -> None:
    cases = [
        0.0, -0.0, 1.0, -1.0, 0.1, 15.0, 1 / 3, 123456789.123, 1234567890.0,
        1e-7, 0.0001, 0.00001, 6.02e23, -2.5e-11, 1e16, 1e21, 1e100, 0.05,
        2.5, 0.3333333333333333, 0.30000000000000004, 3.141592653589793,
        -9.999999999, 1e-300, 123.456000001,
    ]
    rng = random.Random(4242)
    for _ in range(150):
        cases.append(rng.uniform(-1e6, 1e6))
    for _ in range(50):
        cases.append(rng.uniform(-1, 1) * 10 ** rng.randint(-12, 12))
    # value carried as repr text (shortest round-trip, exact in both languages)
    vec = [[repr(v), fmt_float(v)] for v in cases]
    (OUT / "float_vectors.json").write_text(json.dumps(vec, indent=0) + "\n")


def record_stream(tmp: Path) -> None:
    # 1000 scripted actions leave comfortably over 500 reliable records
    # in the log after sender-side coalescing
    ti, te = tracegen.make_trace_pair(seed=99, n_events=1000, out_dir=tmp / "assets")
    h = VirtualHarness(seed=31, persist_dir=tmp / "persist")
    h.add_trace(ti, LatencyModel(35, 120, 0.1))
    h.add_trace(te, LatencyModel(35, 120, 0.1))
    h.run()
    room = ti.room
    server_hash = h.relay.room_hash(room)
    base_snapshot = WireEnvelope(
        room=room, sender="server", client_seq=0,
        body=SnapshotMsg(as_of=0, session_id=h.relay.room(room).session_id,
                         state_tree={"annotations": {}, "captures": {"clouds": {}, "meshes": {}},
                                     "localization": {}, "markers": {}, "scene": {"objects": {}},
                                     "screenshots": {}},
                         state_hash="", peers={}),
        sent_at=0,
    )
    # a mid-session snapshot (what a late joiner would receive)
    mid_snapshot_env = WireEnvelope(
        room=room, sender="server", client_seq=0, body=h.relay.snapshot(room), sent_at=0
    )
    h.shutdown()
    session_dir = next((tmp / "persist" / room).iterdir())
    (OUT / "stream.jsonl").write_bytes((session_dir / "session.log").read_bytes())
    meta = {
        "base_snapshot": encode(base_snapshot),
        "room": room,
        "server_hash": server_hash,
    }
    (OUT / "stream_meta.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    mid = {
        "envelope": encode(mid_snapshot_env),
        "state_hash": server_hash,
    }
    (OUT / "midjoin_snapshot.json").write_text(json.dumps(mid, indent=1, sort_keys=True) + "\n")


def lossy_fixture() -> None:
    rng = random.Random(77)
    intr = tracegen.small_intrinsics()
    envs = []
    for i in range(6):
        pos = np.array([canon_float(rng.uniform(-3, 3)) for _ in range(3)])
        cursor = Cursor(peer=f"p{i % 2}", role="insitu" if i % 2 == 0 else "exsitu",
                        position=pos, normal=None if i % 3 else np.array([0.0, 1.0, 0.0]),
                        live=True)
        envs.append(WireEnvelope(room="fx", sender=f"p{i % 2}", client_seq=i,
                                 body=CursorLive(cursor), sent_at=1000 + i))
    for i in range(4):
        pose = Pose(np.array([canon_float(rng.uniform(-2, 2)) for _ in range(3)]))
        envs.append(WireEnvelope(room="fx", sender=f"p{i % 2}", client_seq=10 + i,
                                 body=PresencePose(f"p{i % 2}", pose, canon_float(rng.random())),
                                 sent_at=2000 + i))
    frame = base64.b64encode(b"demo-frame-bytes").decode()
    envs.append(WireEnvelope(room="fx", sender="p0", client_seq=20,
                             body=ViewFrame("p0", frame, Pose.identity(), intr), sent_at=3000))
    (OUT / "lossy.jsonl").write_text("".join(encode(e) + "\n" for e in envs))


def cursor_oracle() -> None:
    from test_geometry import raycast_oracle

    intr = tracegen.small_intrinsics()
    cam = Pose(np.array([0.2, 1.5, -1.0]))
    # synthetic wall z=3 plus the ground, matching the site the stream used
    wall = TriangleMesh(
        np.array([[-4, 0, 3.0], [4, 0, 3.0], [4, 3, 3.0], [-4, 3, 3.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )
    ground = TriangleMesh(
        np.array([[-4, 0, -4.0], [4, 0, -4.0], [4, 0, 4.0], [-4, 0, 4.0]]),
        np.array([[0, 1, 2], [0, 2, 3]]),
    )
    meshes = [wall, ground]
    rng = random.Random(11)
    cases = []
    for _ in range(40):
        px = [canon_float(rng.uniform(1, intr.width - 2)), canon_float(rng.uniform(1, intr.height - 2))]
        d_cam = np.array([(px[0] - intr.cx) / intr.fx, (px[1] - intr.cy) / intr.fy, 1.0])
        ray = Ray(cam.position, d_cam)  # camera rotation is identity here
        want = raycast_oracle(meshes, ray)
        if want is None:
            hit = [float(v) for v in (ray.origin + 2.0 * ray.direction)]
            kind = "miss"
        else:
            hit = [float(v) for v in (ray.origin + want[0] * ray.direction)]
            kind = "hit"
        cases.append({"kind": kind, "pixel": px, "point": hit})
    fixture = {
        "camera_pose": {"position": [0.2, 1.5, -1.0], "rotation": [1, 0, 0, 0]},
        "cases": cases,
        "intrinsics": {"cx": intr.cx, "cy": intr.cy, "fx": intr.fx, "fy": intr.fy,
                       "height": intr.height, "width": intr.width},
        "meshes": [
            {"triangles": [int(i) for i in m.triangles.reshape(-1)],
             "vertices": [float(v) for v in m.vertices.reshape(-1)]}
            for m in meshes
        ],
    }
    (OUT / "cursor_oracle.json").write_text(json.dumps(fixture, indent=0, sort_keys=True) + "\n")


def main() -> int:
    import tempfile

    OUT.mkdir(parents=True, exist_ok=True)
    float_vectors()
    with tempfile.TemporaryDirectory() as td:
        record_stream(Path(td))
    lossy_fixture()
    cursor_oracle()
    for f in sorted(OUT.iterdir()):
        print(f"{f.relative_to(OUT.parents[1])}: {f.stat().st_size} bytes")
    return 0


if __name__ == "__main__":
    sys.exit(main())
