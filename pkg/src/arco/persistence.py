"""Append-only session logs, deterministic replay, and scene save/load.

Layout, one directory per session under the room's persist root:

    {persist_root}/{room}/{session_id}/
        session.log     # one canonical-JSON envelope per line, UTF-8, LF
        scene.json      # materialized state, schema_version 1
        summary.json    # final hash + seq, written at room unload
        captures/{session_id}/...   # PLY clouds, OBJ mesh blocks, images

Identical logs and base scene produce byte-identical saved scenes on
every platform: all text goes through the canonical formatter, captures
are exported in deterministic order, and nothing depends on wall time.
"""

from __future__ import annotations

import base64
import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from . import canonical, meshio
from .capture import MeshBlockSet, PointCloud, block_key_str, parse_block_key
from .geometry import Pose
from .protocol import RELIABLE, MalformedMessage, WireEnvelope, decode, encode
from .room_state import MaterializedState
from .scene import SceneState

SCHEMA_VERSION = 1


class CorruptRecord(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"corrupt record at line {line}: {reason}")
        self.line = line


class SchemaVersionMismatch(ValueError):
    pass


class IoFailure(OSError):
    pass


def make_session_id(now_ms: int, rng: Optional[random.Random] = None) -> str:
    """UTC timestamp plus a random suffix, filesystem-safe."""
    stamp = datetime.fromtimestamp(now_ms / 1000.0, tz=timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    if rng is None:
        suffix = format(random.SystemRandom().getrandbits(32), "08x")
    else:
        suffix = format(rng.getrandbits(32), "08x")
    return f"{stamp}-{suffix}"


class SessionLogWriter:
    """Single-writer append-only log; flushed per record."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._f = open(self.path, "a", encoding="utf-8", newline="\n")

    def append(self, env: WireEnvelope) -> None:
        if env.server_seq is None:
            raise ValueError("only sequenced envelopes are logged")
        self._f.write(encode(env))
        self._f.write("\n")
        self._f.flush()

    def close(self) -> None:
        self._f.close()


@dataclass
class SessionLog:
    records: List[WireEnvelope] = field(default_factory=list)
    corrupt: List[CorruptRecord] = field(default_factory=list)


def load_log(path) -> SessionLog:
    """Read a session log; corrupt lines are reported, prior records kept."""
    log = SessionLog()
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            try:
                env = decode(stripped)
                if env.server_seq is None:
                    raise MalformedMessage("record missing server_seq")
                log.records.append(env)
            except MalformedMessage as e:
                log.corrupt.append(CorruptRecord(lineno, str(e)))
    return log


def replay(log: SessionLog, base_scene: SceneState) -> MaterializedState:
    """Fold the log's reliable records over the base scene, in seq order."""
    state = MaterializedState(scene=base_scene.copy())
    for env in sorted(log.records, key=lambda e: e.server_seq):
        if env.channel == RELIABLE:
            state.fold(env)
    return state


# --- scene files ------------------------------------------------------------


def save_scene(state: MaterializedState, out_dir) -> None:
    """Write the materialized state as a canonical scene directory.

    Heavy geometry (point clouds, mesh blocks, screenshot images) goes to
    sibling files under captures/, grouped per originating session;
    scene.json carries everything else plus a manifest of those files.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise IoFailure(str(e)) from None

    manifest: Dict[str, dict] = {}
    for cid in sorted(state.clouds):
        cloud = state.clouds[cid]
        rel = f"captures/{cloud.session_id}/cloud_{cid}.ply"
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        meshio.save_ply(path, cloud.points, cloud.colors)
        manifest[cid] = {
            "author": cloud.author,
            "created_at": int(cloud.created_at),
            "file": rel,
            "kind": "cloud",
            "session_id": cloud.session_id,
            "source_pose": cloud.source_pose.to_tree(),
        }
    for cid in sorted(state.meshes):
        blocks = state.meshes[cid]
        reldir = f"captures/{blocks.session_id}/mesh_{cid}"
        (out / reldir).mkdir(parents=True, exist_ok=True)
        files = {}
        for key in sorted(blocks.blocks):
            fname = f"block_{key[0]}_{key[1]}_{key[2]}.obj"
            meshio.save_obj(out / reldir / fname, blocks.blocks[key])
            files[block_key_str(key)] = f"{reldir}/{fname}"
        manifest[cid] = {
            "block_size": canonical.CFloat(blocks.block_size),
            "blocks": files,
            "kind": "mesh",
            "session_id": blocks.session_id,
        }
    screenshot_files: Dict[str, str] = {}
    for sid in sorted(state.screenshots):
        shot = state.screenshots[sid]
        rel = f"captures/{shot.session_id}/shot_{sid}.img"
        path = out / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(base64.b64decode(shot.image_b64))
        screenshot_files[sid] = rel

    annotations_by_session: Dict[str, dict] = {}
    for aid in sorted(state.annotations):
        a = state.annotations[aid]
        annotations_by_session.setdefault(a.session_id, {})[aid] = a.to_tree()

    tree = {
        "annotations": annotations_by_session,
        "capture_manifest": manifest,
        "localization": {k: l.to_tree() for k, l in state.localization.items()},
        "markers": {k: c.to_tree() for k, c in state.markers.items()},
        "scene": state.scene.to_tree(),
        "schema_version": SCHEMA_VERSION,
        "screenshots": {
            sid: {
                "author": s.author,
                "camera_pose": s.camera_pose.to_tree(),
                "created_at": int(s.created_at),
                "file": screenshot_files[sid],
                "session_id": s.session_id,
            }
            for sid, s in state.screenshots.items()
        },
    }
    (out / "scene.json").write_text(canonical.dumps(tree) + "\n", encoding="utf-8")


def load_scene(in_dir) -> MaterializedState:
    src = Path(in_dir)
    try:
        raw = (src / "scene.json").read_text(encoding="utf-8")
    except OSError as e:
        raise IoFailure(str(e)) from None
    tree = json.loads(raw)
    version = tree.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"scene schema {version!r}, supported {SCHEMA_VERSION}")

    from .annotation import Annotation, Cursor
    from .protocol import ScreenshotAnchor
    from .room_state import PeerLocalization

    state = MaterializedState(scene=SceneState.from_tree(tree["scene"]))
    for session_anns in tree["annotations"].values():
        for aid, at in session_anns.items():
            state.annotations[aid] = Annotation.from_tree(at)
    for mid, mt in tree["markers"].items():
        state.markers[mid] = Cursor.from_tree(mt)
    for peer, lt in tree["localization"].items():
        state.localization[peer] = PeerLocalization.from_tree(lt)
    for cid, entry in tree["capture_manifest"].items():
        if entry["kind"] == "cloud":
            pts, cols = meshio.load_ply(src / entry["file"])
            state.clouds[cid] = PointCloud(
                capture_id=cid,
                session_id=entry["session_id"],
                points=pts,
                colors=cols,
                source_pose=Pose.from_tree(entry["source_pose"]),
                created_at=int(entry["created_at"]),
                author=entry["author"],
            )
        elif entry["kind"] == "mesh":
            blocks = MeshBlockSet(cid, entry["session_id"], float(entry["block_size"]))
            for key_s, rel in entry["blocks"].items():
                blocks.blocks[parse_block_key(key_s)] = meshio.load_obj(src / rel)
            state.meshes[cid] = blocks
        else:
            raise ValueError(f"unknown capture kind {entry['kind']!r}")
    for sid, st in tree["screenshots"].items():
        img = (src / st["file"]).read_bytes()
        state.screenshots[sid] = ScreenshotAnchor(
            image_id=sid,
            author=st["author"],
            image_b64=base64.b64encode(img).decode("ascii"),
            camera_pose=Pose.from_tree(st["camera_pose"]),
            session_id=st["session_id"],
            created_at=int(st["created_at"]),
        )
    return state


def save_summary(out_dir, room: str, session_id: str, final_seq: int, final_hash: str) -> None:
    tree = {
        "final_hash": final_hash,
        "final_seq": int(final_seq),
        "room": room,
        "schema_version": SCHEMA_VERSION,
        "session_id": session_id,
    }
    Path(out_dir, "summary.json").write_text(canonical.dumps(tree) + "\n", encoding="utf-8")


def load_summary(in_dir) -> dict:
    return json.loads(Path(in_dir, "summary.json").read_text(encoding="utf-8"))


def load_base_scene(path) -> SceneState:
    """Base scene file: {"schema_version": 1, "scene": {...}} or a bare scene tree."""
    tree = json.loads(Path(path).read_text(encoding="utf-8"))
    if "schema_version" in tree and tree["schema_version"] != SCHEMA_VERSION:
        raise SchemaVersionMismatch(f"base scene schema {tree['schema_version']!r}")
    return SceneState.from_tree(tree["scene"] if "scene" in tree else tree)
