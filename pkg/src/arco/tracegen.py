"""Seeded random trace generation for harness experiments.

Builds a small synthetic site (ground, wall, a couple of boxes), renders
the frame assets a scripted in-situ client will "capture", and emits
paired in-situ/ex-situ action scripts. Everything is a pure function of
the seed, which is what makes the end-to-end runs reproducible.
"""

from __future__ import annotations

import json
import random
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from . import meshio
from .canonical import canon_float
from .capture import MESH_BUDGET_S
from .geometry import CameraIntrinsics, Pose
from .scene import Transform
from .simulator import BoxSpec, EnvSpec, RectPatch, Trace, TraceAction, chunk_environment, render_frames

DEPTH_SCALE = 0.001  # PGM value 1 == 1 mm

CUSTOM_LABELS = [
    "tree line",
    "bench",
    "lamp post",
    "entrance",
    "puddle",
    "crosswalk",
    "mural",
    "planter",
    "railing",
    "sign",
    "curb",
    "bike rack",
    "fountain",
    "steps",
]


def default_environment() -> EnvSpec:
    """Desk-scale stand-in for an outdoor site: ground, back wall, boxes."""
    return EnvSpec(
        rects=[
            RectPatch(axis=1, level=0.0, a_range=(-4.0, 4.0), b_range=(-4.0, 4.0)),  # ground y=0
            RectPatch(axis=2, level=3.0, a_range=(-4.0, 4.0), b_range=(0.0, 3.0)),  # wall z=3
        ],
        boxes=[
            BoxSpec((-1.5, 0.0, 1.0), (-0.5, 1.0, 2.0)),
            BoxSpec((0.8, 0.0, 1.4), (1.6, 0.6, 2.2)),
        ],
    )


def small_intrinsics() -> CameraIntrinsics:
    return CameraIntrinsics(fx=24.0, fy=24.0, cx=16.0, cy=12.0, width=32, height=24)


def _quat_yaw(deg: float) -> Tuple[float, float, float, float]:
    half = np.deg2rad(deg) / 2.0
    return (canon_float(np.cos(half)), 0.0, canon_float(np.sin(half)), 0.0)


def camera_path() -> List[Pose]:
    """Handful of device poses looking into the scene (device-local frame;
    the alignment maps them into the anchor frame)."""
    poses = []
    for i, (x, yaw) in enumerate([(-2.0, 10.0), (-1.0, 0.0), (0.0, 0.0), (1.0, -10.0), (2.0, -15.0), (0.5, 5.0)]):
        poses.append(Pose(np.array([x, 1.5, -1.0 - 0.2 * i]), np.array(_quat_yaw(yaw))))
    return poses


def write_assets(
    env: EnvSpec,
    intrinsics: CameraIntrinsics,
    poses: List[Pose],
    out_dir: Path,
    alignment: Optional[Pose] = None,
    skip_existing: bool = False,
) -> Tuple[List[dict], List[Tuple[Tuple[int, int, int], str]]]:
    """Render and save the frame and block assets a trace references.

    ``poses`` are anchor-frame viewpoints into the site geometry. The
    trace stores the corresponding device-local pose (inverse alignment
    applied), so a client that confirms ``alignment`` re-anchors captures
    exactly onto the site. With ``skip_existing`` the rendering is skipped
    when the files are already on disk (asset content is deterministic).
    """
    out_dir = Path(out_dir)
    frames_dir = out_dir / "frames"
    blocks_dir = out_dir / "blocks"
    frames_dir.mkdir(parents=True, exist_ok=True)
    blocks_dir.mkdir(parents=True, exist_ok=True)
    to_local = Pose.identity() if alignment is None else alignment.invert()

    frame_refs = []
    for i, pose in enumerate(poses):
        if not (skip_existing and (frames_dir / f"d{i}.pgm").exists()):
            depth, color = render_frames(env, intrinsics, pose)
            depth_px = np.round(depth / DEPTH_SCALE).astype(np.int64)
            meshio.save_pgm(frames_dir / f"d{i}.pgm", depth_px)
            meshio.save_ppm(frames_dir / f"c{i}.ppm", color)
        frame_refs.append(
            {
                "color": f"frames/c{i}.ppm",
                "depth": f"frames/d{i}.pgm",
                "depth_scale": DEPTH_SCALE,
                "pose": to_local.compose(pose).to_tree(),
            }
        )

    block_refs = []
    manifest = blocks_dir / "blocks.json"
    if skip_existing and manifest.exists():
        for entry in json.loads(manifest.read_text()):
            block_refs.append((tuple(entry["key"]), entry["file"]))
        return frame_refs, block_refs
    for key, mesh in sorted(chunk_environment(env, 1.0).items()):
        rel = f"blocks/block_{key[0]}_{key[1]}_{key[2]}.obj"
        meshio.save_obj(out_dir / rel, mesh)
        block_refs.append((key, rel))
    manifest.write_text(json.dumps([{"file": rel, "key": list(key)} for key, rel in block_refs]))
    return frame_refs, block_refs


def _canon_pose_tree(x: float, y: float, z: float, yaw_deg: float = 0.0) -> dict:
    q = _quat_yaw(yaw_deg)
    return {
        "position": [canon_float(x), canon_float(y), canon_float(z)],
        "rotation": list(q),
    }


def make_trace_pair(
    seed: int,
    n_events: int,
    out_dir,
    *,
    room: str = "site-a",
    identity_alignment: bool = False,
) -> Tuple[Trace, Trace]:
    """Two coupled scripts: an in-situ capturer and an ex-situ editor.

    ``n_events`` counts scripted actions across both traces. Asset files
    are written under ``out_dir``; the traces reference them relatively.
    """
    out_dir = Path(out_dir)
    rng = random.Random(seed)
    env = default_environment()
    intr = small_intrinsics()
    poses = camera_path()

    if identity_alignment:
        alignment = {"position": [0, 0, 0], "rotation": [1, 0, 0, 0]}
    else:
        alignment = _canon_pose_tree(
            rng.uniform(-0.5, 0.5), 0.0, rng.uniform(-0.5, 0.5), rng.choice([0.0, 5.0, -5.0])
        )
    frame_refs, block_refs = write_assets(env, intr, poses, out_dir, Pose.from_tree(alignment))

    n_insitu = n_events // 2
    n_exsitu = n_events - n_insitu

    insitu = Trace(room=room, peer="field", role="insitu", intrinsics=intr, base_dir=out_dir)
    t = 0
    insitu.actions.append(TraceAction(t, "offer_candidate", {"pose": alignment}))
    t += rng.randint(50, 200)
    insitu.actions.append(TraceAction(t, "confirm", {}))
    t += rng.randint(50, 200)
    insitu.actions.append(TraceAction(t, "set_frame", dict(frame_refs[0])))

    capture_started_ms: Optional[int] = None
    stroke_open = False
    cursor_live = False
    emitted = 3
    while emitted < n_insitu:
        t += rng.randint(20, 220)
        if capture_started_ms is not None and t - capture_started_ms >= MESH_BUDGET_S * 1000 - 300:
            capture_started_ms = None  # generator-side view of the auto-stop
        roll = rng.random()
        if roll < 0.18:
            insitu.actions.append(TraceAction(t, "move", {"pose": _canon_pose_tree(
                rng.uniform(-2, 2), 1.5, rng.uniform(-2, 1), rng.choice([0, 10, -10]))}))
        elif roll < 0.30:
            insitu.actions.append(TraceAction(t, "set_frame", dict(rng.choice(frame_refs))))
        elif roll < 0.37:
            insitu.actions.append(TraceAction(t, "snapshot", {"stride": rng.choice([2, 4])}))
        elif roll < 0.43:
            insitu.actions.append(TraceAction(t, "start_mesh_capture", {}))
            capture_started_ms = t
        elif roll < 0.58 and capture_started_ms is not None:
            key, rel = rng.choice(block_refs)
            insitu.actions.append(TraceAction(t, "mesh_block", {"key": list(key), "mesh": rel}))
        elif roll < 0.70:
            if not stroke_open:
                kind = rng.choice(["surface", "air"])
                label = rng.choice([None, "hazard", "user flow"] + CUSTOM_LABELS[:6])
                insitu.actions.append(TraceAction(t, "begin_stroke", {"kind": kind, "label": label}))
                stroke_open = kind
            elif stroke_open == "surface":
                px = [rng.randint(2, intr.width - 3), rng.randint(2, intr.height - 3)]
                insitu.actions.append(TraceAction(t, "surface_point", {"pixel": px}))
            else:
                insitu.actions.append(TraceAction(t, "air_point", {"pose": _canon_pose_tree(
                    rng.uniform(-2, 2), rng.uniform(0.8, 1.8), rng.uniform(-2, 1))}))
        elif roll < 0.76 and stroke_open:
            insitu.actions.append(TraceAction(t, "end_stroke", {}))
            stroke_open = False
        elif roll < 0.88:
            px = [rng.randint(1, intr.width - 2), rng.randint(1, intr.height - 2)]
            insitu.actions.append(TraceAction(t, "cursor_at", {"pixel": px}))
            cursor_live = True
        elif cursor_live:
            insitu.actions.append(TraceAction(t, "marker", {}))
        else:
            insitu.actions.append(TraceAction(t, "move", {"pose": _canon_pose_tree(
                rng.uniform(-2, 2), 1.5, rng.uniform(-2, 1))}))
        emitted += 1
    if stroke_open:
        t += 30
        insitu.actions.append(TraceAction(t, "end_stroke", {}))

    exsitu = Trace(room=room, peer="studio", role="exsitu", base_dir=out_dir)
    objects: List[str] = []
    t = rng.randint(0, 100)
    emitted = 0
    asset_names = ["boombox", "garland", "map", "signpost", "food_cart", "banner"]
    while emitted < n_exsitu:
        t += rng.randint(20, 220)
        roll = rng.random()
        if roll < 0.18 or not objects:
            oid = format(rng.getrandbits(128), "032x")
            parent = rng.choice(objects) if objects and rng.random() < 0.3 else None
            exsitu.actions.append(TraceAction(t, "scene_create", {
                "object": oid,
                "name": f"{rng.choice(asset_names)}_{len(objects)}",
                "parent": parent,
                "transform": _rand_transform_tree(rng),
            }))
            objects.append(oid)
        elif roll < 0.48:
            exsitu.actions.append(TraceAction(t, "scene_set_transform", {
                "object": rng.choice(objects), "transform": _rand_transform_tree(rng)}))
        elif roll < 0.60:
            exsitu.actions.append(TraceAction(t, "scene_set_param", {
                "object": rng.choice(objects),
                "param": rng.choice(["speed", "visible", "note", "count"]),
                "value": rng.choice([
                    {"f": canon_float(rng.uniform(0, 5))},
                    {"b": rng.random() < 0.5},
                    {"s": rng.choice(["on", "off", "check lighting"])},
                    {"i": rng.randint(0, 20)},
                ]),
            }))
        elif roll < 0.70:
            exsitu.actions.append(TraceAction(t, "scene_set_material", {
                "object": rng.choice(objects),
                "prop": rng.choice(["tint", "roughness", "albedo_tex"]),
                "value": rng.choice([
                    {"rgba": [canon_float(rng.random()) for _ in range(4)]},
                    {"f": canon_float(rng.random())},
                    {"tex": rng.choice(["brick", "grass", "metal"])},
                ]),
            }))
        elif roll < 0.76 and len(objects) > 2:
            child, parent = rng.sample(objects, 2)
            exsitu.actions.append(TraceAction(t, "scene_set_parent", {
                "object": child, "parent": rng.choice([parent, None])}))
        elif roll < 0.80 and len(objects) > 3:
            victim = objects.pop(rng.randrange(len(objects)))
            exsitu.actions.append(TraceAction(t, "scene_destroy", {"object": victim}))
        elif roll < 0.90:
            px = [rng.randint(1, intr.width - 2), rng.randint(1, intr.height - 2)]
            exsitu.actions.append(TraceAction(t, "cursor_at", {"pixel": px}))
        elif roll < 0.95:
            exsitu.actions.append(TraceAction(t, "marker", {}))
        else:
            exsitu.actions.append(TraceAction(t, "screenshot", {}))
        emitted += 1

    insitu.validate()
    exsitu.validate()
    return insitu, exsitu


def _rand_transform_tree(rng: random.Random) -> dict:
    return Transform(
        position=tuple(canon_float(rng.uniform(-3, 3)) for _ in range(3)),
        rotation=_quat_yaw(rng.choice([0.0, 15.0, 30.0, -20.0, 90.0])),
        scale=tuple(canon_float(rng.uniform(0.5, 2.0)) for _ in range(3)),
    ).to_tree()


def make_gate_violating_trace(seed: int, out_dir, *, room: str = "site-a") -> Trace:
    """A trace that never confirms localization but tries spatial actions.

    A correct client emits zero capture/annotation/cursor messages for it.
    """
    out_dir = Path(out_dir)
    rng = random.Random(seed)
    env = default_environment()
    intr = small_intrinsics()
    frame_refs, block_refs = write_assets(env, intr, camera_path()[:2], out_dir, skip_existing=True)

    trace = Trace(room=room, peer=f"rogue{seed}", role="insitu", intrinsics=intr, base_dir=out_dir)
    t = 0
    trace.actions.append(TraceAction(t, "set_frame", dict(frame_refs[0])))
    if rng.random() < 0.5:
        t += rng.randint(20, 100)
        trace.actions.append(TraceAction(t, "offer_candidate", {"pose": _canon_pose_tree(0, 0, 0)}))
    spatial = ["snapshot", "start_mesh_capture", "surface", "air", "cursor_marker"]
    for _ in range(rng.randint(4, 10)):
        t += rng.randint(20, 150)
        choice = rng.choice(spatial)
        if choice == "snapshot":
            trace.actions.append(TraceAction(t, "snapshot", {}))
        elif choice == "start_mesh_capture":
            trace.actions.append(TraceAction(t, "start_mesh_capture", {}))
        elif choice == "surface":
            trace.actions.append(TraceAction(t, "begin_stroke", {"kind": "surface"}))
            t += 20
            trace.actions.append(TraceAction(t, "surface_point", {"pixel": [8, 8]}))
            t += 20
            trace.actions.append(TraceAction(t, "end_stroke", {}))
        elif choice == "air":
            trace.actions.append(TraceAction(t, "begin_stroke", {"kind": "air"}))
            t += 20
            trace.actions.append(TraceAction(t, "air_point", {"pose": _canon_pose_tree(1, 1, 0)}))
            t += 20
            trace.actions.append(TraceAction(t, "end_stroke", {}))
        else:
            trace.actions.append(TraceAction(t, "cursor_at", {"pixel": [10, 10]}))
            t += 20
            trace.actions.append(TraceAction(t, "marker", {}))
    trace.validate()
    return trace
