"""In-situ spatial context capture.

3D snapshots turn a single registered RGB-D frame into a colored point
cloud in the anchor frame. Coarse meshes stream untextured geometry in
keyed blocks while a capture timer is running; the timer stops itself
after a fixed budget (15 s) to bound network usage and can be restarted
at any time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from .canonical import CFloat
from .geometry import CameraIntrinsics, Pose, RigidTransform, TriangleMesh

MESH_BUDGET_S = 15.0
DEFAULT_SNAPSHOT_STRIDE = 4
DEFAULT_MIN_DEPTH = 0.1
DEFAULT_MAX_DEPTH = 8.0
DEFAULT_BLOCK_SIZE = 1.0

BlockKey = Tuple[int, int, int]


class FrameMismatch(ValueError):
    pass


class NotCapturing(RuntimeError):
    pass


@dataclass(eq=False)
class DepthFrame:
    """Row-major depth image in meters; 0 or NaN marks invalid pixels."""

    width: int
    height: int
    depths: np.ndarray
    intrinsics: CameraIntrinsics
    camera_pose: Pose  # device-local frame
    timestamp_ms: int = 0

    def __post_init__(self):
        self.depths = np.asarray(self.depths, dtype=np.float64).reshape(self.height, self.width)
        if (self.intrinsics.width, self.intrinsics.height) != (self.width, self.height):
            raise FrameMismatch("intrinsics dimensions do not match frame")

    def depth_at(self, pixel) -> float:
        u, v = int(pixel[0]), int(pixel[1])
        return float(self.depths[v, u])


@dataclass(eq=False)
class ColorFrame:
    """RGB8 image registered pixel-for-pixel to a DepthFrame."""

    width: int
    height: int
    rgb: np.ndarray  # (h, w, 3) uint8

    def __post_init__(self):
        self.rgb = np.asarray(self.rgb, dtype=np.uint8).reshape(self.height, self.width, 3)


@dataclass(eq=False)
class PointCloud:
    capture_id: str
    session_id: str
    points: np.ndarray  # (n, 3) anchor frame
    colors: np.ndarray  # (n, 3) uint8
    source_pose: Pose  # device pose at capture, anchor frame
    created_at: int = 0  # ms
    author: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)
        if len(self.points) != len(self.colors):
            raise ValueError("point/color count mismatch")
        if self.points.size and not np.all(np.isfinite(self.points)):
            raise ValueError("point cloud has non-finite points")

    def to_tree(self) -> dict:
        return {
            "author": self.author,
            "capture_id": self.capture_id,
            "colors": [int(v) for v in self.colors.reshape(-1)],
            "created_at": int(self.created_at),
            "points": [CFloat(v) for v in self.points.reshape(-1)],
            "session_id": self.session_id,
            "source_pose": self.source_pose.to_tree(),
        }

    @staticmethod
    def from_tree(d: dict) -> "PointCloud":
        return PointCloud(
            capture_id=str(d["capture_id"]),
            session_id=str(d["session_id"]),
            points=np.array([float(v) for v in d["points"]], dtype=np.float64).reshape(-1, 3),
            colors=np.array([int(v) for v in d["colors"]], dtype=np.uint8).reshape(-1, 3),
            source_pose=Pose.from_tree(d["source_pose"]),
            created_at=int(d["created_at"]),
            author=str(d["author"]),
        )


def block_key_str(key: BlockKey) -> str:
    return f"{key[0]},{key[1]},{key[2]}"


def parse_block_key(s: str) -> BlockKey:
    a, b, c = s.split(",")
    return (int(a), int(b), int(c))


@dataclass(eq=False)
class MeshBlockSet:
    """Latest mesh per block key for one coarse-mesh capture."""

    capture_id: str
    session_id: str = ""
    block_size: float = DEFAULT_BLOCK_SIZE
    blocks: Dict[BlockKey, TriangleMesh] = field(default_factory=dict)

    def __post_init__(self):
        if not (self.block_size > 0):
            raise ValueError("block_size must be positive")

    def check_block(self, key: BlockKey, mesh: TriangleMesh) -> None:
        """Vertices must stay within the block AABB plus one block margin."""
        if len(mesh.vertices) == 0:
            return
        lo = (np.array(key, dtype=np.float64) - 1.0) * self.block_size
        hi = (np.array(key, dtype=np.float64) + 2.0) * self.block_size
        if np.any(mesh.vertices < lo - 1e-9) or np.any(mesh.vertices > hi + 1e-9):
            raise ValueError(f"block {key} vertices outside AABB + margin")

    def to_tree(self) -> dict:
        return {
            "block_size": CFloat(self.block_size),
            "blocks": {block_key_str(k): m.to_tree() for k, m in self.blocks.items()},
            "capture_id": self.capture_id,
            "session_id": self.session_id,
        }

    @staticmethod
    def from_tree(d: dict) -> "MeshBlockSet":
        return MeshBlockSet(
            capture_id=str(d["capture_id"]),
            session_id=str(d.get("session_id", "")),
            block_size=float(d["block_size"]),
            blocks={parse_block_key(k): TriangleMesh.from_tree(m) for k, m in d["blocks"].items()},
        )


IDLE = "idle"
CAPTURING = "capturing"


@dataclass(frozen=True)
class MeshCaptureTimer:
    phase: str = IDLE
    started_at: float = 0.0  # seconds
    budget: float = MESH_BUDGET_S

    def __post_init__(self):
        if not (self.budget > 0):
            raise ValueError("budget must be positive")


def start_mesh_capture(timer: MeshCaptureTimer, now: float) -> MeshCaptureTimer:
    """Start (or restart, resetting the clock) a coarse-mesh capture."""
    return MeshCaptureTimer(CAPTURING, float(now), timer.budget)


def tick_mesh_capture(timer: MeshCaptureTimer, now: float) -> Tuple[MeshCaptureTimer, bool]:
    """Advance the timer; returns (timer, stopped). ``stopped`` is True on
    the tick that crosses the budget and must emit a CaptureStopped event.

    The 1e-9 slack keeps scheduled ticks from missing their own deadline
    to float round-off; it is far below any meaningful tick interval."""
    if timer.phase == CAPTURING and now - timer.started_at >= timer.budget - 1e-9:
        return MeshCaptureTimer(IDLE, 0.0, timer.budget), True
    return timer, False


def ingest_mesh_block(
    block_set: MeshBlockSet,
    timer: MeshCaptureTimer,
    key: BlockKey,
    mesh: TriangleMesh,
) -> MeshBlockSet:
    """Replace the block at ``key`` (latest wins). Requires an active capture."""
    if timer.phase != CAPTURING:
        raise NotCapturing("mesh capture is not running")
    block_set.check_block(key, mesh)
    blocks = dict(block_set.blocks)
    blocks[tuple(int(k) for k in key)] = mesh
    return MeshBlockSet(block_set.capture_id, block_set.session_id, block_set.block_size, blocks)


def snapshot(
    depth: DepthFrame,
    color: ColorFrame,
    alignment: RigidTransform,
    stride: int = DEFAULT_SNAPSHOT_STRIDE,
    *,
    capture_id: str,
    session_id: str,
    author: str = "",
    created_at: int = 0,
    min_depth: float = DEFAULT_MIN_DEPTH,
    max_depth: float = DEFAULT_MAX_DEPTH,
) -> PointCloud:
    """Unproject the stride grid of a registered RGB-D frame into an
    anchored colored point cloud.

    Each valid pixel contributes apply(alignment, camera_pose . p_cam);
    invalid depths (0/NaN or outside [min_depth, max_depth]) are skipped.
    """
    if (color.width, color.height) != (depth.width, depth.height):
        raise FrameMismatch("color frame not registered to depth frame")
    if stride < 1:
        raise ValueError("stride must be >= 1")

    k = depth.intrinsics
    us = np.arange(0, depth.width, stride)
    vs = np.arange(0, depth.height, stride)
    uu, vv = np.meshgrid(us, vs)
    d = depth.depths[vv, uu]
    valid = np.isfinite(d) & (d >= min_depth) & (d <= max_depth)
    uu, vv, d = uu[valid], vv[valid], d[valid]

    x = (uu - k.cx) / k.fx * d
    y = (vv - k.cy) / k.fy * d
    p_cam = np.stack([x, y, d], axis=-1)

    world = alignment.compose(depth.camera_pose)
    pts = world.apply_many(p_cam) if len(p_cam) else p_cam.reshape(0, 3)
    cols = color.rgb[vv, uu] if len(p_cam) else np.zeros((0, 3), dtype=np.uint8)
    return PointCloud(
        capture_id=capture_id,
        session_id=session_id,
        points=pts,
        colors=cols,
        source_pose=world,
        created_at=created_at,
        author=author,
    )


def normal_color(n) -> Tuple[int, int, int]:
    """Map a unit normal to rgb8 with (n+1)/2 per component."""
    v = np.asarray(n, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(v) - 1.0) > 1e-6:
        raise ValueError(f"normal not unit length: {v}")
    rgb = np.round(255.0 * (v + 1.0) / 2.0).astype(np.int64)
    return int(rgb[0]), int(rgb[1]), int(rgb[2])
