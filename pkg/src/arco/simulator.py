"""Scripted clients standing in for the phone and the physical site.

A trace is a timed action script (trace_version 1, JSON). Traces run
against a relay either on a virtual clock (fully deterministic: seeded
latency, seeded drops, reproducible session logs byte for byte) or over a
live WebSocket for interactive demos.

The synthetic environment ray-traces depth/color frames against simple
analytic geometry (axis-aligned rectangles and boxes) and chunks the same
geometry into coarse-mesh blocks, so end-to-end geometric checks close:
a snapshot of a synthetic wall lands on the wall, and a cursor raycast
against the streamed blocks lands where the depth said it would.
"""

from __future__ import annotations

import heapq
import itertools
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np

from . import meshio
from .canonical import CFloat
from .capture import ColorFrame, DepthFrame
from .client import SessionClient
from .geometry import CameraIntrinsics, Pose, TriangleMesh, quat_to_matrix
from .relay import RelayCore
from .scene import (
    Delta,
    SceneObject,
    SceneState,
    Transform,
    CREATE,
    DESTROY,
    SET_MATERIAL,
    SET_PARAM,
    SET_PARENT,
    SET_TRANSFORM,
)

TRACE_VERSION = 1
RAY_EPS = 1e-9


class TraceInvalid(ValueError):
    pass


class ConnectionLost(RuntimeError):
    pass


@dataclass
class LatencyModel:
    """Uniform per-message transport delay, applied independently per
    direction, with an optional drop rate for the lossy channel."""

    lo_ms: float = 17.5
    hi_ms: float = 60.0
    drop_rate: float = 0.0

    def __post_init__(self):
        if not (0 <= self.lo_ms <= self.hi_ms):
            raise ValueError("need 0 <= lo <= hi")
        if not (0.0 <= self.drop_rate <= 1.0):
            raise ValueError("drop rate must be in [0, 1]")

    @staticmethod
    def from_end_to_end(lo_ms: float, hi_ms: float, drop_rate: float = 0.0) -> "LatencyModel":
        """Split a measured end-to-end range evenly across both directions."""
        return LatencyModel(lo_ms / 2.0, hi_ms / 2.0, drop_rate)

    def sample_ms(self, rng: random.Random) -> float:
        return rng.uniform(self.lo_ms, self.hi_ms)


@dataclass
class TraceAction:
    t_ms: int
    action: str
    args: dict = field(default_factory=dict)


@dataclass
class Trace:
    room: str
    peer: str
    role: str
    actions: List[TraceAction] = field(default_factory=list)
    base_time_ms: int = 0
    intrinsics: Optional[CameraIntrinsics] = None
    location_mesh: Optional[str] = None  # relative OBJ path
    base_dir: Path = field(default_factory=Path)

    def validate(self) -> None:
        last = -1
        for a in self.actions:
            if a.t_ms < last:
                raise TraceInvalid(f"action times must be non-decreasing (at t={a.t_ms})")
            last = a.t_ms

    def to_tree(self) -> dict:
        return {
            "actions": [
                {"action": a.action, "args": a.args, "t_ms": int(a.t_ms)} for a in self.actions
            ],
            "base_time_ms": int(self.base_time_ms),
            "intrinsics": None if self.intrinsics is None else self.intrinsics.to_tree(),
            "location_mesh": self.location_mesh,
            "peer": self.peer,
            "role": self.role,
            "room": self.room,
            "trace_version": TRACE_VERSION,
        }


def save_trace(trace: Trace, path) -> None:
    from . import canonical

    Path(path).write_text(canonical.dumps(canonical.wrap_floats(trace.to_tree())) + "\n", encoding="utf-8")


def load_trace(path) -> Trace:
    p = Path(path)
    d = json.loads(p.read_text(encoding="utf-8"))
    if d.get("trace_version") != TRACE_VERSION:
        raise TraceInvalid(f"unsupported trace_version {d.get('trace_version')!r}")
    trace = Trace(
        room=str(d["room"]),
        peer=str(d["peer"]),
        role=str(d["role"]),
        actions=[TraceAction(int(a["t_ms"]), str(a["action"]), a.get("args", {})) for a in d["actions"]],
        base_time_ms=int(d.get("base_time_ms", 0)),
        intrinsics=None if d.get("intrinsics") is None else CameraIntrinsics.from_tree(d["intrinsics"]),
        location_mesh=d.get("location_mesh"),
        base_dir=p.parent,
    )
    trace.validate()
    return trace


# --- synthetic environment ---------------------------------------------------


@dataclass
class RectPatch:
    """Axis-aligned rectangle: plane {axis}={level}, bounded on the other
    two axes (in cyclic order axis+1, axis+2)."""

    axis: int
    level: float
    a_range: Tuple[float, float]
    b_range: Tuple[float, float]


@dataclass
class BoxSpec:
    lo: Tuple[float, float, float]
    hi: Tuple[float, float, float]


@dataclass
class EnvSpec:
    rects: List[RectPatch] = field(default_factory=list)
    boxes: List[BoxSpec] = field(default_factory=list)

    def all_rects(self) -> List[RectPatch]:
        """Boxes decompose into their six faces."""
        rects = list(self.rects)
        for box in self.boxes:
            lo, hi = np.asarray(box.lo, float), np.asarray(box.hi, float)
            for axis in range(3):
                a, b = (axis + 1) % 3, (axis + 2) % 3
                for level in (lo[axis], hi[axis]):
                    rects.append(
                        RectPatch(axis, float(level), (lo[a], hi[a]), (lo[b], hi[b]))
                    )
        return rects

    def to_tree(self) -> dict:
        return {
            "boxes": [
                {"hi": [CFloat(v) for v in b.hi], "lo": [CFloat(v) for v in b.lo]}
                for b in self.boxes
            ],
            "rects": [
                {
                    "a_range": [CFloat(r.a_range[0]), CFloat(r.a_range[1])],
                    "axis": int(r.axis),
                    "b_range": [CFloat(r.b_range[0]), CFloat(r.b_range[1])],
                    "level": CFloat(r.level),
                }
                for r in self.rects
            ],
        }

    @staticmethod
    def from_tree(d: dict) -> "EnvSpec":
        return EnvSpec(
            rects=[
                RectPatch(
                    int(r["axis"]),
                    float(r["level"]),
                    (float(r["a_range"][0]), float(r["a_range"][1])),
                    (float(r["b_range"][0]), float(r["b_range"][1])),
                )
                for r in d.get("rects", [])
            ],
            boxes=[
                BoxSpec(tuple(float(v) for v in b["lo"]), tuple(float(v) for v in b["hi"]))
                for b in d.get("boxes", [])
            ],
        )


def render_frames(
    env: EnvSpec, intrinsics: CameraIntrinsics, camera_pose: Pose
) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic depth and color images of the environment.

    Depth is the camera-frame z of the nearest hit (0 = miss/invalid);
    colors encode the hit surface's normal so frames are deterministic
    without a lighting model.
    """
    w, h = intrinsics.width, intrinsics.height
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_cam = np.stack(
        [(us - intrinsics.cx) / intrinsics.fx, (vs - intrinsics.cy) / intrinsics.fy, np.ones_like(us)],
        axis=-1,
    )
    rot = quat_to_matrix(camera_pose.rotation)
    dirs = dirs_cam @ rot.T
    origin = camera_pose.position

    best_s = np.full((h, w), np.inf)
    best_normal = np.zeros((h, w, 3))
    for rect in env.all_rects():
        k = rect.axis
        a, b = (k + 1) % 3, (k + 2) % 3
        dk = dirs[..., k]
        safe = np.where(np.abs(dk) < 1e-12, 1e-12, dk)
        s = (rect.level - origin[k]) / safe
        pa = origin[a] + s * dirs[..., a]
        pb = origin[b] + s * dirs[..., b]
        hit = (
            (np.abs(dk) >= 1e-12)
            & (s > RAY_EPS)
            & (pa >= rect.a_range[0])
            & (pa <= rect.a_range[1])
            & (pb >= rect.b_range[0])
            & (pb <= rect.b_range[1])
            & (s < best_s)
        )
        best_s = np.where(hit, s, best_s)
        n = np.zeros(3)
        n[k] = 1.0
        # orient the stored normal against the viewing ray
        sign = -np.sign(dk)
        for c in range(3):
            best_normal[..., c] = np.where(hit, n[c] * sign, best_normal[..., c])

    depth = np.where(np.isfinite(best_s), best_s, 0.0)
    colors = np.zeros((h, w, 3), dtype=np.uint8)
    valid = depth > 0
    if np.any(valid):
        nv = best_normal[valid]
        colors[valid] = np.round(255.0 * (nv + 1.0) / 2.0).astype(np.uint8)
    return depth, colors


def chunk_environment(env: EnvSpec, block_size: float = 1.0) -> Dict[Tuple[int, int, int], TriangleMesh]:
    """Tessellate the environment into anchor-frame mesh blocks.

    Rect faces are split at block-size boundaries so every cell falls
    inside one block's AABB (plus margin); cells bucket by centroid.
    """
    buckets: Dict[Tuple[int, int, int], List[np.ndarray]] = {}
    for rect in env.all_rects():
        k = rect.axis
        a, b = (k + 1) % 3, (k + 2) % 3
        a_cuts = _grid_cuts(rect.a_range[0], rect.a_range[1], block_size)
        b_cuts = _grid_cuts(rect.b_range[0], rect.b_range[1], block_size)
        for i in range(len(a_cuts) - 1):
            for j in range(len(b_cuts) - 1):
                corners = []
                for da, db in ((0, 0), (1, 0), (1, 1), (0, 1)):
                    p = np.zeros(3)
                    p[k] = rect.level
                    p[a] = a_cuts[i + da]
                    p[b] = b_cuts[j + db]
                    corners.append(p)
                centroid = np.mean(corners, axis=0)
                key = tuple(int(np.floor(c / block_size)) for c in centroid)
                buckets.setdefault(key, []).extend(
                    [corners[0], corners[1], corners[2], corners[0], corners[2], corners[3]]
                )
    blocks = {}
    for key, verts in buckets.items():
        v = np.array(verts).reshape(-1, 3)
        tris = np.arange(len(v), dtype=np.int64).reshape(-1, 3)
        blocks[key] = TriangleMesh(v, tris)
    return blocks


def _grid_cuts(lo: float, hi: float, step: float) -> List[float]:
    cuts = [lo]
    first = np.floor(lo / step) + 1
    x = first * step
    while x < hi - 1e-12:
        if x > lo + 1e-12:
            cuts.append(float(x))
        x += step
    cuts.append(hi)
    return cuts


def synth_environment(
    env: EnvSpec,
    intrinsics: CameraIntrinsics,
    path: List[Pose],
    block_size: float = 1.0,
) -> Tuple[List[Tuple[np.ndarray, np.ndarray]], Dict[Tuple[int, int, int], TriangleMesh]]:
    """Frames along a camera path plus the chunked block meshes."""
    frames = [render_frames(env, intrinsics, pose) for pose in path]
    return frames, chunk_environment(env, block_size)


# --- trace execution ---------------------------------------------------------


@dataclass
class RunReport:
    peer: str
    events_sent: Dict[str, int] = field(default_factory=dict)
    bytes_sent: int = 0
    gate_violations: int = 0
    latency_samples_ms: List[float] = field(default_factory=list)
    dropped_lossy: int = 0
    final_hash: Optional[str] = None

    def to_tree(self) -> dict:
        samples = self.latency_samples_ms
        return {
            "bytes_sent": int(self.bytes_sent),
            "dropped_lossy": int(self.dropped_lossy),
            "events_sent": {k: int(v) for k, v in sorted(self.events_sent.items())},
            "final_hash": self.final_hash,
            "gate_violations": int(self.gate_violations),
            "latency": {
                "count": len(samples),
                "max_ms": CFloat(max(samples)) if samples else None,
                "mean_ms": CFloat(sum(samples) / len(samples)) if samples else None,
                "min_ms": CFloat(min(samples)) if samples else None,
            },
            "peer": self.peer,
        }


class _TraceExec:
    """Binds a trace to a live SessionClient; executes one action at a time."""

    def __init__(self, trace: Trace, client: SessionClient):
        self.trace = trace
        self.client = client
        self._frame_cache: Dict[Tuple[str, str, float], Tuple[np.ndarray, np.ndarray]] = {}
        self._mesh_cache: Dict[str, TriangleMesh] = {}

    def run_action(self, act: TraceAction) -> None:
        c = self.client
        args = act.args
        name = act.action
        if name == "offer_candidate":
            c.offer_candidate(Pose.from_tree(args["pose"]))
        elif name == "confirm":
            c.confirm()
        elif name == "restart":
            c.restart_localization()
        elif name == "move":
            c.move(Pose.from_tree(args["pose"]))
        elif name == "set_frame":
            depth, color = self._load_frame(args)
            c.set_frame(depth, color, args.get("frame_b64", ""))
        elif name == "snapshot":
            c.take_snapshot(args.get("stride"))
        elif name == "start_mesh_capture":
            c.start_mesh_capture()
        elif name == "mesh_block":
            mesh = self._load_mesh(args["mesh"])
            c.ingest_mesh_block(tuple(int(k) for k in args["key"]), mesh)
        elif name == "begin_stroke":
            c.begin_stroke(args["kind"], args.get("label"))
        elif name == "surface_point":
            try:
                c.surface_point(tuple(args["pixel"]))
            except Exception as e:
                from .annotation import InvalidDepth

                if not isinstance(e, InvalidDepth):
                    raise  # taps on sky pixels draw nothing; all else is real
        elif name == "air_point":
            pose = None if args.get("pose") is None else Pose.from_tree(args["pose"])
            c.air_point(pose)
        elif name == "label":
            c.set_label(args["label"])
        elif name == "end_stroke":
            c.end_stroke()
        elif name == "cursor_at":
            c.cursor_at(tuple(args["pixel"]))
        elif name == "marker":
            c.place_marker()
        elif name == "screenshot":
            c.take_screenshot()
        elif name == "set_opacity":
            c.set_mesh_opacity(float(args["opacity"]))
        elif name == "scene_create":
            obj = SceneObject(
                id=args.get("object") or "",
                name=args.get("name", ""),
                parent=args.get("parent"),
                transform=Transform.from_tree(args["transform"]) if "transform" in args else Transform(),
            )
            if not obj.id:
                from .scene import new_object_id

                obj.id = new_object_id(c.rng)
            c.send_deltas([Delta(CREATE, obj.id, spec=obj)])
        elif name == "scene_set_transform":
            c.send_deltas(
                [Delta(SET_TRANSFORM, args["object"], transform=Transform.from_tree(args["transform"]))]
            )
        elif name == "scene_set_param":
            from .scene import _param_from_tree

            c.send_deltas(
                [Delta(SET_PARAM, args["object"], prop=args["param"], value=_param_from_tree(args["value"]))]
            )
        elif name == "scene_set_material":
            from .scene import _mat_from_tree

            c.send_deltas(
                [Delta(SET_MATERIAL, args["object"], prop=args["prop"], value=_mat_from_tree(args["value"]))]
            )
        elif name == "scene_set_parent":
            c.send_deltas([Delta(SET_PARENT, args["object"], parent=args.get("parent"))])
        elif name == "scene_destroy":
            c.send_deltas([Delta(DESTROY, args["object"])])
        elif name in ("disconnect", "reconnect"):
            pass  # handled by the runner, not the client
        else:
            raise TraceInvalid(f"unknown trace action {name!r}")

    def _load_frame(self, args: dict) -> Tuple[DepthFrame, ColorFrame]:
        scale = float(args.get("depth_scale", 0.001))
        ck = (args["depth"], args["color"], scale)
        if ck not in self._frame_cache:
            depth_px, _ = meshio.load_pgm(self.trace.base_dir / args["depth"])
            color_px = meshio.load_ppm(self.trace.base_dir / args["color"])
            self._frame_cache[ck] = (depth_px.astype(np.float64) * scale, color_px)
        depths, rgb = self._frame_cache[ck]
        h, w = depths.shape
        k = self.trace.intrinsics
        if k is None or (k.width, k.height) != (w, h):
            raise TraceInvalid("trace intrinsics missing or mismatched with frame assets")
        depth = DepthFrame(
            width=w,
            height=h,
            depths=depths,
            intrinsics=k,
            camera_pose=Pose.from_tree(args["pose"]),
            timestamp_ms=self.client.clock_ms(),
        )
        color = ColorFrame(width=w, height=h, rgb=rgb)
        return depth, color

    def _load_mesh(self, rel: str) -> TriangleMesh:
        if rel not in self._mesh_cache:
            self._mesh_cache[rel] = meshio.load_obj(self.trace.base_dir / rel)
        return self._mesh_cache[rel]


# --- virtual-clock harness -----------------------------------------------------


def _derive_seed(seed: int, *parts: str) -> int:
    import hashlib

    h = hashlib.sha256(("|".join((str(seed),) + parts)).encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big")


class _SimPeer:
    def __init__(self, trace: Trace, client: SessionClient, latency: LatencyModel, seed: int):
        self.trace = trace
        self.client = client
        self.exec = _TraceExec(trace, client)
        self.latency = latency
        self.up_rng = random.Random(_derive_seed(seed, trace.peer, "up"))
        self.down_rng = random.Random(_derive_seed(seed, trace.peer, "down"))
        self.up_ready_ms = 0.0
        self.down_ready_ms = 0.0
        self.connected = False
        self.paused_downstream = False
        self.report = RunReport(peer=trace.peer)
        self.next_poll_ms: Optional[float] = None


class VirtualHarness:
    """Discrete-event scheduler driving traces, links, and the relay on
    one virtual clock. With a fixed seed the entire run (message bytes,
    session logs, hashes) is bit-reproducible."""

    def __init__(
        self,
        *,
        seed: int = 0,
        base_scene: Optional[SceneState] = None,
        persist_dir=None,
        queue_cap: int = 1000,
        base_time_ms: int = 0,
    ):
        self.seed = seed
        self.now_ms: float = float(base_time_ms)
        self._heap: List = []
        self._tie = itertools.count()
        self.relay = RelayCore(
            base_scene=base_scene,
            persist_dir=persist_dir,
            queue_cap=queue_cap,
            clock_ms=lambda: int(self.now_ms),
            rng=random.Random(_derive_seed(seed, "relay")),
        )
        self.sims: Dict[str, _SimPeer] = {}

    # -- scheduling --

    def schedule(self, t_ms: float, fn) -> None:
        heapq.heappush(self._heap, (t_ms, next(self._tie), fn))

    def add_trace(self, trace: Trace, latency: Optional[LatencyModel] = None, join_at_ms: Optional[int] = None) -> SessionClient:
        trace.validate()
        latency = latency if latency is not None else LatencyModel()
        location_mesh = None
        if trace.location_mesh is not None:
            location_mesh = meshio.load_obj(trace.base_dir / trace.location_mesh)
        client = SessionClient(
            room=trace.room,
            peer=trace.peer,
            role=trace.role,
            clock_ms=lambda: int(self.now_ms),
            rng=random.Random(_derive_seed(self.seed, trace.peer, "client")),
            location_mesh=location_mesh,
        )
        sim = _SimPeer(trace, client, latency, self.seed)
        self.sims[trace.peer] = sim
        start = trace.base_time_ms if join_at_ms is None else join_at_ms
        self.schedule(start, lambda: self._join(sim))
        for act in trace.actions:
            self.schedule(
                trace.base_time_ms + act.t_ms, lambda a=act: self._run_action(sim, a)
            )
        return client

    def run(self) -> Dict[str, RunReport]:
        while self._heap:
            t, _, fn = heapq.heappop(self._heap)
            self.now_ms = max(self.now_ms, t)
            fn()
        for sim in self.sims.values():
            sim.report.events_sent = dict(sim.client.sent_counts)
            sim.report.bytes_sent = sim.client.bytes_sent
            sim.report.gate_violations = len(sim.client.gate_violations)
            if sim.connected and sim.client.state is not None:
                sim.report.final_hash = sim.client.state_hash()
        return {p: s.report for p, s in self.sims.items()}

    def shutdown(self) -> Dict[str, str]:
        """Unload all rooms (persisting them); returns final room hashes."""
        hashes = {}
        for room_id in list(self.relay.rooms):
            hashes[room_id] = self.relay.room_hash(room_id)
            self.relay.unload(room_id)
        return hashes

    # -- events --

    def _join(self, sim: _SimPeer) -> None:
        self.relay.join(sim.trace.room, sim.trace.peer, sim.trace.role)
        sim.connected = True
        sim.client.connected = True
        self._drain_relay(sim.trace.room)

    def _leave(self, sim: _SimPeer) -> None:
        if sim.connected:
            self.relay.leave(sim.trace.room, sim.trace.peer)
            sim.connected = False
            sim.client.reset_connection()
            self._drain_relay(sim.trace.room)

    def _run_action(self, sim: _SimPeer, act: TraceAction) -> None:
        if act.action == "disconnect":
            self._leave(sim)
            return
        if act.action == "reconnect":
            self._join(sim)
            return
        if not sim.connected:
            return  # actions while disconnected are dropped
        sim.exec.run_action(act)
        self._pump(sim)

    def _poll(self, sim: _SimPeer) -> None:
        sim.next_poll_ms = None
        sim.client.poll(self.now_ms / 1000.0)
        self._pump(sim)

    def _pump(self, sim: _SimPeer) -> None:
        """Take client output onto the uplink and reschedule the poll."""
        for env in sim.client.take_outbox():
            if not sim.connected:
                continue
            delay = sim.latency.sample_ms(sim.up_rng)
            sim.report.latency_samples_ms.append(delay)
            if env.channel == "lossy" and sim.up_rng.random() < sim.latency.drop_rate:
                sim.report.dropped_lossy += 1
                continue
            arrive = max(sim.up_ready_ms, self.now_ms + delay)  # FIFO link
            sim.up_ready_ms = arrive
            self.schedule(arrive, lambda e=env, s=sim: self._arrive_up(s, e))
        deadline = sim.client.next_deadline_s()
        if deadline is not None:
            # half a millisecond past the deadline: lands strictly after it
            # without changing any integer-millisecond timestamp
            t_ms = deadline * 1000.0 + 0.5
            if sim.next_poll_ms is None or t_ms < sim.next_poll_ms - 1e-9:
                sim.next_poll_ms = t_ms
                self.schedule(t_ms, lambda s=sim: self._poll(s))

    def _arrive_up(self, sim: _SimPeer, env) -> None:
        if not sim.connected:
            return
        self.relay.route(env)
        self._drain_relay(env.room)

    def _drain_relay(self, room_id: str) -> None:
        room = self.relay.rooms.get(room_id)
        if room is None:
            return
        for target in list(room.peers):
            sim = self.sims.get(target)
            if sim is not None and sim.paused_downstream:
                continue  # backpressure: traffic accumulates in the relay queue
            for env in self.relay.drain(room_id, target):
                if sim is None or not sim.connected:
                    continue
                self._deliver_down(sim, env)

    def _deliver_down(self, sim: _SimPeer, env) -> None:
        delay = sim.latency.sample_ms(sim.down_rng)
        if env.channel == "lossy" and sim.down_rng.random() < sim.latency.drop_rate:
            sim.report.dropped_lossy += 1
            return
        arrive = max(sim.down_ready_ms, self.now_ms + delay)
        sim.down_ready_ms = arrive
        self.schedule(arrive, lambda e=env, s=sim: self._arrive_down(s, e))

    def _arrive_down(self, sim: _SimPeer, env) -> None:
        if sim.connected:
            sim.client.ingest(env)

    # backpressure experiments: hold a peer's downstream, then release
    def pause_downstream(self, peer: str) -> None:
        self.sims[peer].paused_downstream = True

    def resume_downstream(self, peer: str) -> None:
        sim = self.sims[peer]
        sim.paused_downstream = False
        self._drain_relay(sim.trace.room)


def run_trace(
    trace: Trace,
    latency: Optional[LatencyModel] = None,
    *,
    seed: int = 0,
    base_scene: Optional[SceneState] = None,
    persist_dir=None,
) -> Tuple[RunReport, Dict[str, str]]:
    """Run one trace on a virtual clock against an in-process relay.

    Returns the run report and the final room hashes (the relay persists
    each room's session on shutdown when persist_dir is given)."""
    h = VirtualHarness(seed=seed, base_scene=base_scene, persist_dir=persist_dir,
                       base_time_ms=trace.base_time_ms)
    h.add_trace(trace, latency)
    reports = h.run()
    hashes = h.shutdown()
    return reports[trace.peer], hashes
