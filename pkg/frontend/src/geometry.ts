/**
 * Minimal rigid-pose and raycast kernels for the editor client.
 * Same conventions as the relay: world is right-handed Y-up meters,
 * camera is +X right / +Y down / +Z forward, quaternions are (w,x,y,z).
 */

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number];

export interface PoseTree {
  position: number[];
  rotation: number[];
}

export interface IntrinsicsTree {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface MeshTree {
  vertices: number[];
  triangles: number[];
  normals?: number[] | null;
}

export function quatRotate(q: Quat, p: Vec3): Vec3 {
  const [w, x, y, z] = q;
  // p + 2*u x (u x p + w p), u = (x,y,z)
  const ux = x, uy = y, uz = z;
  const cx1 = uy * p[2] - uz * p[1] + w * p[0];
  const cy1 = uz * p[0] - ux * p[2] + w * p[1];
  const cz1 = ux * p[1] - uy * p[0] + w * p[2];
  return [
    p[0] + 2 * (uy * cz1 - uz * cy1),
    p[1] + 2 * (uz * cx1 - ux * cz1),
    p[2] + 2 * (ux * cy1 - uy * cx1),
  ];
}

export function poseApply(pose: PoseTree, p: Vec3): Vec3 {
  const r = quatRotate(pose.rotation as Quat, p);
  return [r[0] + pose.position[0], r[1] + pose.position[1], r[2] + pose.position[2]];
}

export interface Ray {
  origin: Vec3;
  dir: Vec3; // unit
}

export function pixelRay(px: number, py: number, k: IntrinsicsTree, camera: PoseTree): Ray {
  const d: Vec3 = [(px - k.cx) / k.fx, (py - k.cy) / k.fy, 1.0];
  const world = quatRotate(camera.rotation as Quat, d);
  const n = Math.hypot(world[0], world[1], world[2]);
  return {
    origin: [camera.position[0], camera.position[1], camera.position[2]],
    dir: [world[0] / n, world[1] / n, world[2] / n],
  };
}

export interface Hit {
  point: Vec3;
  normal: Vec3;
  t: number;
}

const EPS = 1e-9;

/** Nearest Moller-Trumbore intersection across a list of mesh trees. */
export function raycast(meshes: MeshTree[], ray: Ray): Hit | null {
  let best: { t: number; n: Vec3 } | null = null;
  for (const mesh of meshes) {
    const v = mesh.vertices;
    const tr = mesh.triangles;
    for (let i = 0; i < tr.length; i += 3) {
      const a = tr[i] * 3, b = tr[i + 1] * 3, c = tr[i + 2] * 3;
      const e1: Vec3 = [v[b] - v[a], v[b + 1] - v[a + 1], v[b + 2] - v[a + 2]];
      const e2: Vec3 = [v[c] - v[a], v[c + 1] - v[a + 1], v[c + 2] - v[a + 2]];
      const px = ray.dir[1] * e2[2] - ray.dir[2] * e2[1];
      const py = ray.dir[2] * e2[0] - ray.dir[0] * e2[2];
      const pz = ray.dir[0] * e2[1] - ray.dir[1] * e2[0];
      const det = e1[0] * px + e1[1] * py + e1[2] * pz;
      if (Math.abs(det) <= EPS) continue;
      const inv = 1.0 / det;
      const tv: Vec3 = [ray.origin[0] - v[a], ray.origin[1] - v[a + 1], ray.origin[2] - v[a + 2]];
      const u = (tv[0] * px + tv[1] * py + tv[2] * pz) * inv;
      if (u < -EPS || u > 1 + EPS) continue;
      const qx = tv[1] * e1[2] - tv[2] * e1[1];
      const qy = tv[2] * e1[0] - tv[0] * e1[2];
      const qz = tv[0] * e1[1] - tv[1] * e1[0];
      const w = (ray.dir[0] * qx + ray.dir[1] * qy + ray.dir[2] * qz) * inv;
      if (w < -EPS || u + w > 1 + EPS) continue;
      const t = (e2[0] * qx + e2[1] * qy + e2[2] * qz) * inv;
      if (t <= EPS) continue;
      if (best === null || t < best.t - EPS) {
        let nx = e1[1] * e2[2] - e1[2] * e2[1];
        let ny = e1[2] * e2[0] - e1[0] * e2[2];
        let nz = e1[0] * e2[1] - e1[1] * e2[0];
        const nn = Math.hypot(nx, ny, nz);
        nx /= nn; ny /= nn; nz /= nn;
        if (nx * ray.dir[0] + ny * ray.dir[1] + nz * ray.dir[2] > 0) {
          nx = -nx; ny = -ny; nz = -nz;
        }
        best = { t, n: [nx, ny, nz] };
      }
    }
  }
  if (best === null) return null;
  return {
    point: [
      ray.origin[0] + best.t * ray.dir[0],
      ray.origin[1] + best.t * ray.dir[1],
      ray.origin[2] + best.t * ray.dir[2],
    ],
    normal: best.n,
    t: best.t,
  };
}

export const CURSOR_MISS_DISTANCE = 2.0;

/** Cursor placement: nearest hit, or 2 m along the ray with no normal. */
export function projectCursor(meshes: MeshTree[], ray: Ray): { point: Vec3; normal: Vec3 | null } {
  const hit = raycast(meshes, ray);
  if (hit === null) {
    return {
      point: [
        ray.origin[0] + CURSOR_MISS_DISTANCE * ray.dir[0],
        ray.origin[1] + CURSOR_MISS_DISTANCE * ray.dir[1],
        ray.origin[2] + CURSOR_MISS_DISTANCE * ray.dir[2],
      ],
      normal: null,
    };
  }
  return { point: hit.point, normal: hit.normal };
}
