"""Rigid poses, pinhole projection, and ray-mesh intersection.

Conventions (fixed for the whole system):
  * World / anchor frame: right-handed, Y-up, meters.
  * Camera frame: computer-vision pinhole, +X right, +Y down, +Z forward.
  * Quaternions are (w, x, y, z), unit norm; rotations are applied as
    ``q * p * q^-1``.

Everything here is a pure function over immutable values; results are safe
to share between tasks.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .canonical import CFloat

UNIT_EPS = 1e-9
RAY_EPS = 1e-9


class NonPositiveDepth(ValueError):
    pass


class PixelOutOfBounds(ValueError):
    pass


def _vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"non-finite 3-vector: {a}")
    return a


def _quat(q) -> np.ndarray:
    # validate only; renormalizing here would perturb canonical wire values
    a = np.asarray(q, dtype=np.float64).reshape(4)
    n = np.linalg.norm(a)
    if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
        raise ValueError(f"quaternion not unit norm: {a} (|q|={n})")
    return a


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, p: np.ndarray) -> np.ndarray:
    # q * (0,p) * q^-1, expanded to avoid building intermediate quaternions
    w, x, y, z = q
    u = np.array([x, y, z])
    return p + 2.0 * np.cross(u, np.cross(u, p) + w * p)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(eq=False)
class Pose:
    """Position + orientation; doubles as a rigid transform source->target.

    ``apply`` maps a point expressed in the source frame into the target
    frame: ``p' = R(q) p + t``.
    """

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        self.position = _vec3(self.position)
        self.rotation = _quat(self.rotation)

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def apply(self, p) -> np.ndarray:
        return quat_rotate(self.rotation, _vec3(p)) + self.position

    def apply_many(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N,3) array of points in one matrix product."""
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 3)
        return pts @ quat_to_matrix(self.rotation).T + self.position

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply ``other`` first, then ``self``."""
        q = quat_mul(self.rotation, other.rotation)
        q = q / np.linalg.norm(q)  # renormalize; bounds drift over long chains
        return Pose(self.apply(other.position), q)

    def invert(self) -> "Pose":
        qi = quat_conj(self.rotation)
        return Pose(-quat_rotate(qi, self.position), qi)

    def approx_equal(self, other: "Pose", tol: float = 1e-9) -> bool:
        if np.max(np.abs(self.position - other.position)) > tol:
            return False
        # q and -q are the same rotation
        d = min(
            float(np.max(np.abs(self.rotation - other.rotation))),
            float(np.max(np.abs(self.rotation + other.rotation))),
        )
        return d <= tol

    def to_tree(self) -> dict:
        return {
            "position": [CFloat(v) for v in self.position],
            "rotation": [CFloat(v) for v in self.rotation],
        }

    @staticmethod
    def from_tree(d: dict) -> "Pose":
        return Pose(
            np.array([float(v) for v in d["position"]]),
            np.array([float(v) for v in d["rotation"]]),
        )


# A rigid frame-to-frame mapping is structurally a Pose; the alias keeps
# call sites honest about intent (alignment transforms vs. object poses).
RigidTransform = Pose


def compose(a: Pose, b: Pose) -> Pose:
    return a.compose(b)


def invert(t: Pose) -> Pose:
    return t.invert()


def apply(t: Pose, p) -> np.ndarray:
    return t.apply(p)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def to_tree(self) -> dict:
        return {
            "cx": CFloat(self.cx),
            "cy": CFloat(self.cy),
            "fx": CFloat(self.fx),
            "fy": CFloat(self.fy),
            "height": int(self.height),
            "width": int(self.width),
        }

    @staticmethod
    def from_tree(d: dict) -> "CameraIntrinsics":
        return CameraIntrinsics(
            fx=float(d["fx"]),
            fy=float(d["fy"]),
            cx=float(d["cx"]),
            cy=float(d["cy"]),
            width=int(d["width"]),
            height=int(d["height"]),
        )


@dataclass(eq=False)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        self.origin = _vec3(self.origin)
        d = _vec3(self.direction)
        n = np.linalg.norm(d)
        if n < UNIT_EPS:
            raise ValueError("ray direction has zero length")
        self.direction = d / n


@dataclass(eq=False)
class TriangleMesh:
    """Indexed triangle mesh; vertices (N,3) float64, triangles (M,3) int."""

    vertices: np.ndarray
    triangles: np.ndarray
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if self.vertices.size and not np.all(np.isfinite(self.vertices)):
            raise ValueError("mesh has non-finite vertices")
        if self.triangles.size:
            lo, hi = self.triangles.min(), self.triangles.max()
            if lo < 0 or hi >= len(self.vertices):
                raise ValueError("triangle index out of range")
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise ValueError("per-vertex normal count mismatch")

    def transformed(self, t: Pose) -> "TriangleMesh":
        if len(self.vertices) == 0:
            return TriangleMesh(self.vertices.copy(), self.triangles.copy())
        rot = quat_to_matrix(t.rotation)
        normals = None
        if self.normals is not None:
            normals = self.normals @ rot.T
        return TriangleMesh(self.vertices @ rot.T + t.position, self.triangles.copy(), normals)

    def to_tree(self) -> dict:
        tree = {
            "triangles": [int(i) for i in self.triangles.reshape(-1)],
            "vertices": [CFloat(v) for v in self.vertices.reshape(-1)],
        }
        if self.normals is None:
            tree["normals"] = None
        else:
            tree["normals"] = [CFloat(v) for v in self.normals.reshape(-1)]
        return tree

    @staticmethod
    def from_tree(d: dict) -> "TriangleMesh":
        normals = d.get("normals")
        return TriangleMesh(
            np.array([float(v) for v in d["vertices"]], dtype=np.float64).reshape(-1, 3),
            np.array([int(v) for v in d["triangles"]], dtype=np.int64).reshape(-1, 3),
            None
            if normals is None
            else np.array([float(v) for v in normals], dtype=np.float64).reshape(-1, 3),
        )


@dataclass(frozen=True)
class Hit:
    point: np.ndarray
    normal: np.ndarray
    mesh_index: int
    triangle_index: int
    t: float


def unproject(pixel, depth: float, intrinsics: CameraIntrinsics, camera_pose: Pose) -> np.ndarray:
    """Lift an image pixel at a metric depth into the camera pose's frame."""
    u, v = float(pixel[0]), float(pixel[1])
    if not (depth > 0.0) or not np.isfinite(depth):
        raise NonPositiveDepth(f"depth must be positive and finite, got {depth}")
    if not (0 <= u < intrinsics.width and 0 <= v < intrinsics.height):
        raise PixelOutOfBounds(f"pixel ({u}, {v}) outside {intrinsics.width}x{intrinsics.height}")
    p_cam = np.array(
        [
            (u - intrinsics.cx) / intrinsics.fx * depth,
            (v - intrinsics.cy) / intrinsics.fy * depth,
            depth,
        ]
    )
    return camera_pose.apply(p_cam)


def project(point_world, intrinsics: CameraIntrinsics, camera_pose: Pose) -> tuple:
    """Forward pinhole projection; returns (u, v, depth in camera frame)."""
    p_cam = camera_pose.invert().apply(point_world)
    z = p_cam[2]
    if not (z > 0.0):
        raise NonPositiveDepth(f"point behind camera (z={z})")
    u = p_cam[0] / z * intrinsics.fx + intrinsics.cx
    v = p_cam[1] / z * intrinsics.fy + intrinsics.cy
    return float(u), float(v), float(z)


def pixel_ray(pixel, intrinsics: CameraIntrinsics, camera_pose: Pose) -> Ray:
    """The world-space ray through a pixel (used for screen-input cursors)."""
    u, v = float(pixel[0]), float(pixel[1])
    d_cam = np.array([(u - intrinsics.cx) / intrinsics.fx, (v - intrinsics.cy) / intrinsics.fy, 1.0])
    d_world = quat_rotate(camera_pose.rotation, d_cam)
    return Ray(camera_pose.position.copy(), d_world)


def _cross_cols(ax, ay, az, bx, by, bz):
    return ay * bz - az * by, az * bx - ax * bz, ax * by - ay * bx


def _mesh_raycast_arrays(mesh: TriangleMesh):
    # derived per-triangle arrays, cached on the (immutable) mesh
    cached = getattr(mesh, "_rc_arrays", None)
    if cached is None:
        v0 = mesh.vertices[mesh.triangles[:, 0]]
        e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
        e2 = mesh.vertices[mesh.triangles[:, 2]] - v0
        cached = (v0, e1, e2)
        mesh._rc_arrays = cached
    return cached


def _raycast_mesh(mesh: TriangleMesh, ray: Ray):
    """Möller-Trumbore over all triangles at once; returns (t, tri_index) or None."""
    if len(mesh.triangles) == 0:
        return None
    v0, e1, e2 = _mesh_raycast_arrays(mesh)
    dx, dy, dz = ray.direction
    px, py, pz = _cross_cols(dx, dy, dz, e2[:, 0], e2[:, 1], e2[:, 2])
    det = e1[:, 0] * px + e1[:, 1] * py + e1[:, 2] * pz
    ok = np.abs(det) > RAY_EPS  # parallel or degenerate triangles are skipped
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = ray.origin - v0
    u = (tvec[:, 0] * px + tvec[:, 1] * py + tvec[:, 2] * pz) * inv_det
    ok &= (u >= -RAY_EPS) & (u <= 1.0 + RAY_EPS)
    qx, qy, qz = _cross_cols(tvec[:, 0], tvec[:, 1], tvec[:, 2], e1[:, 0], e1[:, 1], e1[:, 2])
    v = (qx * dx + qy * dy + qz * dz) * inv_det
    ok &= (v >= -RAY_EPS) & (u + v <= 1.0 + RAY_EPS)
    t = (e2[:, 0] * qx + e2[:, 1] * qy + e2[:, 2] * qz) * inv_det
    ok &= t > RAY_EPS
    if not np.any(ok):
        return None
    idx = np.nonzero(ok)[0]
    tmin = t[idx].min()
    # deterministic tie-break: lowest triangle index among t within RAY_EPS
    tied = idx[t[idx] <= tmin + RAY_EPS]
    best = int(tied.min())
    return float(t[best]), best


def raycast(mesh_set: Sequence[TriangleMesh], ray: Ray) -> Optional[Hit]:
    """Nearest intersection across all meshes.

    Ties within RAY_EPS on t break toward the lower (mesh_index,
    triangle_index) pair so results do not depend on mesh ordering.
    """
    best = None  # (t, mesh_index, tri_index)
    for mi, mesh in enumerate(mesh_set):
        r = _raycast_mesh(mesh, ray)
        if r is None:
            continue
        t, ti = r
        if best is None or t < best[0] - RAY_EPS:
            best = (t, mi, ti)
        # equal-t candidates keep the earlier (mesh, tri) pair: mi only grows
    if best is None:
        return None
    t, mi, ti = best
    mesh = mesh_set[mi]
    tri = mesh.triangles[ti]
    a, b, c = mesh.vertices[tri[0]], mesh.vertices[tri[1]], mesh.vertices[tri[2]]
    n = np.cross(b - a, c - a)
    n = n / np.linalg.norm(n)
    if np.dot(n, ray.direction) > 0:
        n = -n  # orient against the ray
    return Hit(
        point=ray.origin + t * ray.direction,
        normal=n,
        mesh_index=mi,
        triangle_index=ti,
        t=t,
    )
