import random

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from arco.geometry import (
    CameraIntrinsics,
    NonPositiveDepth,
    PixelOutOfBounds,
    Pose,
    Ray,
    TriangleMesh,
    apply,
    compose,
    invert,
    pixel_ray,
    project,
    raycast,
    unproject,
)

from conftest import random_pose

INTR = CameraIntrinsics(fx=500.0, fy=480.0, cx=320.0, cy=240.0, width=640, height=480)


# --- independent oracles -----------------------------------------------------


def pose_matrix(pose: Pose) -> np.ndarray:
    """4x4 homogeneous matrix via scipy (independent of arco's quaternion code)."""
    m = np.eye(4)
    w, x, y, z = pose.rotation
    m[:3, :3] = Rotation.from_quat([x, y, z, w]).as_matrix()
    m[:3, 3] = pose.position
    return m


def forward_project_oracle(p_world, intrinsics, camera_pose):
    """Pinhole projection through the matrix inverse; no arco code."""
    m = np.linalg.inv(pose_matrix(camera_pose))
    p_cam = m[:3, :3] @ np.asarray(p_world) + m[:3, 3]
    z = p_cam[2]
    return (
        p_cam[0] / z * intrinsics.fx + intrinsics.cx,
        p_cam[1] / z * intrinsics.fy + intrinsics.cy,
        z,
    )


def raycast_oracle(meshes, ray):
    """Exhaustive плane+barycentric intersection over every triangle.

    Formulated differently from the library's Moller-Trumbore: plane hit
    first, then barycentric membership via normal-projected areas."""
    best = None
    for mi, mesh in enumerate(meshes):
        for ti, tri in enumerate(mesh.triangles):
            a, b, c = (mesh.vertices[i] for i in tri)
            n = np.cross(b - a, c - a)
            nn = np.linalg.norm(n)
            if nn < 1e-12:
                continue
            denom = np.dot(n, ray.direction)
            if abs(denom) < 1e-9 * nn:
                continue
            t = np.dot(n, a - ray.origin) / denom
            if t <= 1e-9:
                continue
            p = ray.origin + t * ray.direction
            # barycentric membership via sub-areas against the full area
            area2 = np.dot(n, n)
            u = np.dot(np.cross(c - b, p - b), n) / area2
            v = np.dot(np.cross(a - c, p - c), n) / area2
            w = 1.0 - u - v
            if u < -1e-9 or v < -1e-9 or w < -1e-9:
                continue
            cand = (t, mi, ti)
            if best is None or t < best[0] - 1e-9:
                best = cand
    return best


# --- unprojection -------------------------------------------------------------


def test_principal_point_is_optical_axis():
    p = unproject((INTR.cx, INTR.cy), 2.0, INTR, Pose.identity())
    assert np.allclose(p, [0, 0, 2.0], atol=1e-12)


def test_zero_depth_rejected():
    with pytest.raises(NonPositiveDepth):
        unproject((INTR.cx, INTR.cy), 0.0, INTR, Pose.identity())
    with pytest.raises(NonPositiveDepth):
        unproject((10, 10), -1.0, INTR, Pose.identity())


def test_pixel_out_of_bounds_rejected():
    with pytest.raises(PixelOutOfBounds):
        unproject((INTR.width, 0), 1.0, INTR, Pose.identity())
    with pytest.raises(PixelOutOfBounds):
        unproject((0, -1), 1.0, INTR, Pose.identity())


def test_unproject_round_trip_10k():
    rng = random.Random(7)
    max_err = 0.0
    for _ in range(10_000):
        pose = random_pose(rng)
        u = rng.uniform(0, INTR.width - 1e-6)
        v = rng.uniform(0, INTR.height - 1e-6)
        d = rng.uniform(0.1, 50.0)
        p = unproject((u, v), d, INTR, pose)
        uu, vv, dd = forward_project_oracle(p, INTR, pose)
        max_err = max(max_err, abs(uu - u), abs(vv - v))
        assert abs(dd - d) < 1e-6
    assert max_err < 1e-6


def test_project_matches_oracle():
    rng = random.Random(8)
    for _ in range(200):
        pose = random_pose(rng)
        p = pose.apply([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(0.5, 5)])
        got = project(p, INTR, pose)
        want = forward_project_oracle(p, INTR, pose)
        assert np.allclose(got, want, atol=1e-8)


# --- rigid transforms -----------------------------------------------------------


def test_identity_apply():
    p = np.array([1.0, -2.0, 3.0])
    assert np.allclose(apply(Pose.identity(), p), p)


def test_inverse_round_trip():
    rng = random.Random(9)
    for _ in range(300):
        t = random_pose(rng)
        p = np.array([rng.uniform(-5, 5) for _ in range(3)])
        assert np.allclose(apply(invert(t), apply(t, p)), p, atol=1e-9)


def test_compose_chains_match_matrix_oracle():
    rng = random.Random(10)
    for _ in range(50):
        chain = [random_pose(rng) for _ in range(10)]
        t = chain[0]
        m = pose_matrix(chain[0])
        for nxt in chain[1:]:
            t = compose(t, nxt)
            m = m @ pose_matrix(nxt)
        for _ in range(5):
            p = np.array([rng.uniform(-2, 2) for _ in range(3)])
            want = m[:3, :3] @ p + m[:3, 3]
            assert np.max(np.abs(apply(t, p) - want)) < 1e-7


def test_compose_associates_with_apply():
    rng = random.Random(11)
    for _ in range(200):
        a, b = random_pose(rng), random_pose(rng)
        p = np.array([rng.uniform(-3, 3) for _ in range(3)])
        assert np.allclose(apply(compose(a, b), p), apply(a, apply(b, p)), atol=1e-9)


def test_quaternion_drift_bounded_over_1e5_composes():
    rng = random.Random(12)
    step = random_pose(rng, span=0.01)
    t = Pose.identity()
    for _ in range(100_000):
        t = compose(t, step)
    assert abs(np.linalg.norm(t.rotation) - 1.0) < 1e-6


# --- raycast ---------------------------------------------------------------------


def quad_mesh(z: float = 1.0, half: float = 0.5) -> TriangleMesh:
    verts = np.array(
        [[-half, -half, z], [half, -half, z], [half, half, z], [-half, half, z]]
    )
    return TriangleMesh(verts, np.array([[0, 1, 2], [0, 2, 3]]))


def test_raycast_quad_hit():
    hit = raycast([quad_mesh()], Ray(np.zeros(3), np.array([0, 0, 1.0])))
    assert hit is not None
    assert np.allclose(hit.point, [0, 0, 1.0], atol=1e-12)
    assert hit.t == pytest.approx(1.0, abs=1e-12)
    assert np.dot(hit.normal, [0, 0, 1.0]) < 0  # oriented against the ray


def test_raycast_miss_behind():
    assert raycast([quad_mesh()], Ray(np.zeros(3), np.array([0, 0, -1.0]))) is None


def test_raycast_skips_degenerate_triangles():
    verts = np.array([[0.0, 0, 1], [1, 0, 1], [2, 0, 1]])  # collinear
    deg = TriangleMesh(verts, np.array([[0, 1, 2]]))
    assert raycast([deg], Ray(np.zeros(3), np.array([0, 0, 1.0]))) is None


def random_surface_mesh(rng: random.Random, nx: int, ny: int) -> TriangleMesh:
    """Random height-field grid: dense, watertight-ish, no coplanar overlap."""
    xs = np.linspace(-2, 2, nx)
    ys = np.linspace(-2, 2, ny)
    verts = []
    for y in ys:
        for x in xs:
            verts.append([x, y, 2.0 + 0.3 * np.sin(x * 2) * np.cos(y * 3) + rng.uniform(0, 0.05)])
    tris = []
    for j in range(ny - 1):
        for i in range(nx - 1):
            a = j * nx + i
            tris.append([a, a + 1, a + nx])
            tris.append([a + 1, a + nx + 1, a + nx])
    return TriangleMesh(np.array(verts), np.array(tris))


def test_raycast_matches_bruteforce_oracle_small():
    rng = random.Random(13)
    mesh = random_surface_mesh(rng, 12, 12)
    meshes = [mesh]
    hits = 0
    for _ in range(250):
        origin = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 0.5)])
        target = np.array([rng.uniform(-1.8, 1.8), rng.uniform(-1.8, 1.8), 2.0])
        ray = Ray(origin, target - origin)
        got = raycast(meshes, ray)
        want = raycast_oracle(meshes, ray)
        if want is None:
            assert got is None
        else:
            hits += 1
            assert got is not None
            assert (got.mesh_index, got.triangle_index) == (want[1], want[2])
            assert abs(got.t - want[0]) < 1e-9
    assert hits > 100  # the comparison must actually exercise intersections


def test_raycast_mesh_order_independent():
    rng = random.Random(14)
    m1 = random_surface_mesh(rng, 8, 8)
    m2 = quad_mesh(z=3.0, half=2.0)
    for _ in range(100):
        origin = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 0)])
        d = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3), 1.0])
        ray = Ray(origin, d)
        a = raycast([m1, m2], ray)
        b = raycast([m2, m1], ray)
        if a is None:
            assert b is None
            continue
        assert abs(a.t - b.t) < 1e-9
        assert np.allclose(a.point, b.point, atol=1e-9)


def test_pixel_ray_goes_through_unprojection():
    rng = random.Random(15)
    for _ in range(100):
        pose = random_pose(rng)
        u, v = rng.uniform(0, 639), rng.uniform(0, 479)
        ray = pixel_ray((u, v), INTR, pose)
        p = unproject((u, v), rng.uniform(0.2, 10), INTR, pose)
        # p must lie on the ray
        d = p - ray.origin
        d = d / np.linalg.norm(d)
        assert np.allclose(d, ray.direction, atol=1e-9)
