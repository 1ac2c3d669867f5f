/**
 * Browser ex-situ editor: renders the anchored scene over the relay's
 * WebSocket protocol. Move objects with the gizmo, hover the live panel
 * to point, click it to drop markers, grab anchored screenshots, and
 * fade the location mesh in and out.
 */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { TransformControls } from "three/examples/jsm/controls/TransformControls.js";

import { SessionClient } from "../client";
import { MeshTree } from "../geometry";

const params = new URLSearchParams(location.search);
const ROOM = params.get("room") ?? "site-a";
const PEER = params.get("peer") ?? `editor-${Math.floor(Math.random() * 9999)}`;
const RELAY = params.get("relay") ?? `ws://${location.host}`;
const HTTP = RELAY.replace(/^ws/, "http");

const client = new SessionClient(ROOM, PEER, "exsitu");

// ---- three.js scaffolding --------------------------------------------------

const renderer = new THREE.WebGLRenderer({ antialias: true });
renderer.setSize(innerWidth, innerHeight);
document.body.appendChild(renderer.domElement);

const scene = new THREE.Scene();
scene.background = new THREE.Color(0x10141a);
const camera = new THREE.PerspectiveCamera(55, innerWidth / innerHeight, 0.01, 500);
camera.position.set(4, 5, -6);
scene.add(new THREE.HemisphereLight(0xffffff, 0x334455, 1.2));
scene.add(new THREE.GridHelper(10, 10, 0x335577, 0x223344));

const orbit = new OrbitControls(camera, renderer.domElement);
const gizmo = new TransformControls(camera, renderer.domElement);
scene.add(gizmo.getHelper());

addEventListener("resize", () => {
  camera.aspect = innerWidth / innerHeight;
  camera.updateProjectionMatrix();
  renderer.setSize(innerWidth, innerHeight);
});

// ---- HUD ---------------------------------------------------------------------

const hud = document.createElement("div");
hud.id = "hud";
hud.innerHTML = `
  <div id="banner">connecting...</div>
  <label>location mesh <input id="opacity" type="range" min="0" max="100" value="50"></label>
  <div>
    <select id="asset"></select>
    <button id="add">add asset</button>
    <button id="shot" disabled>screenshot</button>
  </div>
  <div id="hash"></div>
  <canvas id="panel" width="320" height="240" title="live in-situ view: hover to point, click to mark"></canvas>
  <div id="sessions"></div>
`;
document.body.appendChild(hud);
const banner = hud.querySelector("#banner") as HTMLDivElement;
const hashEl = hud.querySelector("#hash") as HTMLDivElement;
const shotBtn = hud.querySelector("#shot") as HTMLButtonElement;
const addBtn = hud.querySelector("#add") as HTMLButtonElement;
const assetSelect = hud.querySelector("#asset") as HTMLSelectElement;
const panel = hud.querySelector("#panel") as HTMLCanvasElement;
const opacitySlider = hud.querySelector("#opacity") as HTMLInputElement;
const sessionsEl = hud.querySelector("#sessions") as HTMLDivElement;

// sample assets that can be dropped into the scene at runtime
for (const name of ["boombox", "garland", "map", "signpost", "food_cart", "banner"]) {
  const opt = document.createElement("option");
  opt.textContent = name;
  assetSelect.appendChild(opt);
}

// expose for protocol-fidelity checks from the console / harnesses
(window as any).arcoClient = client;

// ---- scene graph mirrors -------------------------------------------------------

const objectMeshes = new Map<string, THREE.Mesh>();
const cloudPoints = new Map<string, THREE.Points>();
const blockMeshes = new Map<string, THREE.Mesh>();
const annotationLines = new Map<string, THREE.Line>();
const markerSpheres = new Map<string, THREE.Mesh>();
const cursorSpheres = new Map<string, THREE.Mesh>();
const presenceHelpers = new Map<string, THREE.AxesHelper>();
let locationMeshObj: THREE.Mesh | null = null;
let selected: string | null = null;

function roleColor(role: string): THREE.Color {
  const [r, g, b] = client.cursorColor(role);
  return new THREE.Color(r / 255, g / 255, b / 255);
}

function setTransform(obj: THREE.Object3D, t: any): void {
  obj.position.set(t.position[0], t.position[1], t.position[2]);
  obj.quaternion.set(t.rotation[1], t.rotation[2], t.rotation[3], t.rotation[0]);
  obj.scale.set(t.scale[0], t.scale[1], t.scale[2]);
}

function meshTreeToGeometry(m: MeshTree, normalColors: boolean): THREE.BufferGeometry {
  const geo = new THREE.BufferGeometry();
  geo.setAttribute("position", new THREE.Float32BufferAttribute(m.vertices, 3));
  geo.setIndex(m.triangles);
  geo.computeVertexNormals();
  if (normalColors) {
    const normals = geo.getAttribute("normal");
    const colors = new Float32Array(normals.count * 3);
    for (let i = 0; i < normals.count; i++) {
      colors[i * 3] = (normals.getX(i) + 1) / 2;
      colors[i * 3 + 1] = (normals.getY(i) + 1) / 2;
      colors[i * 3 + 2] = (normals.getZ(i) + 1) / 2;
    }
    geo.setAttribute("color", new THREE.Float32BufferAttribute(colors, 3));
  }
  return geo;
}

function syncScene(): void {
  if (client.state === null) return;
  const s = client.state;

  // authored objects: unit cubes under their transforms, tinted by material
  for (const [oid, obj] of Object.entries<any>(s.scene.objects)) {
    let mesh = objectMeshes.get(oid);
    if (!mesh) {
      mesh = new THREE.Mesh(
        new THREE.BoxGeometry(0.4, 0.4, 0.4),
        new THREE.MeshStandardMaterial({ color: 0x8899ff }),
      );
      mesh.userData.objectId = oid;
      objectMeshes.set(oid, mesh);
      scene.add(mesh);
    }
    const tint = obj.material?.tint?.rgba;
    if (tint) (mesh.material as THREE.MeshStandardMaterial).color.setRGB(tint[0], tint[1], tint[2]);
    if (selected === oid && gizmo.dragging) continue; // preview owns it
    setTransform(mesh, obj.transform);
  }
  for (const [oid, mesh] of objectMeshes) {
    if (!(oid in s.scene.objects)) {
      scene.remove(mesh);
      objectMeshes.delete(oid);
      if (selected === oid) {
        gizmo.detach();
        selected = null;
      }
    }
  }

  // 3D snapshots: colored point clouds
  for (const [cid, cloud] of Object.entries<any>(s.captures.clouds)) {
    if (cloudPoints.has(cid)) continue;
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.Float32BufferAttribute(cloud.points, 3));
    geo.setAttribute(
      "color",
      new THREE.Float32BufferAttribute(cloud.colors.map((c: number) => c / 255), 3),
    );
    const pts = new THREE.Points(geo, new THREE.PointsMaterial({ size: 0.03, vertexColors: true }));
    cloudPoints.set(cid, pts);
    scene.add(pts);
  }
  for (const [cid, pts] of cloudPoints) {
    if (!(cid in s.captures.clouds)) {
      scene.remove(pts);
      cloudPoints.delete(cid);
    }
  }

  // coarse mesh blocks, shaded by surface normal
  const liveBlocks = new Set<string>();
  for (const [cid, set] of Object.entries<any>(s.captures.meshes)) {
    for (const [key, m] of Object.entries<any>(set.blocks)) {
      const id = `${cid}/${key}`;
      liveBlocks.add(id);
      const existing = blockMeshes.get(id);
      if (existing) scene.remove(existing);
      const mesh = new THREE.Mesh(
        meshTreeToGeometry(m, true),
        new THREE.MeshBasicMaterial({ vertexColors: true, side: THREE.DoubleSide }),
      );
      blockMeshes.set(id, mesh);
      scene.add(mesh);
    }
  }
  for (const [id, mesh] of blockMeshes) {
    if (!liveBlocks.has(id)) {
      scene.remove(mesh);
      blockMeshes.delete(id);
    }
  }

  // annotations as polylines in their label colors
  for (const [aid, ann] of Object.entries<any>(s.annotations)) {
    if (annotationLines.has(aid)) continue;
    const geo = new THREE.BufferGeometry();
    geo.setAttribute("position", new THREE.Float32BufferAttribute(ann.points, 3));
    const [r, g, b] = ann.color;
    const line = new THREE.Line(
      geo,
      new THREE.LineBasicMaterial({ color: new THREE.Color(r / 255, g / 255, b / 255) }),
    );
    annotationLines.set(aid, line);
    scene.add(line);
  }

  // persistent markers
  for (const [mid, cursor] of Object.entries<any>(s.markers)) {
    if (markerSpheres.has(mid)) continue;
    const ball = new THREE.Mesh(
      new THREE.SphereGeometry(0.05),
      new THREE.MeshBasicMaterial({ color: roleColor(cursor.role) }),
    );
    ball.position.set(cursor.position[0], cursor.position[1], cursor.position[2]);
    markerSpheres.set(mid, ball);
    scene.add(ball);
  }

  hashEl.textContent = `state ${client.stateHash().slice(0, 12)}... seq ${client.lastAppliedSeq}`;
  syncSessionList();
}

function syncSessionList(): void {
  // annotations and spatial captures, grouped per originating session
  const s = client.state!;
  const groups = new Map<string, { ann: number; clouds: number; meshes: number; shots: number }>();
  const bump = (sid: string, key: "ann" | "clouds" | "meshes" | "shots") => {
    const g = groups.get(sid) ?? { ann: 0, clouds: 0, meshes: 0, shots: 0 };
    g[key] += 1;
    groups.set(sid, g);
  };
  for (const a of Object.values<any>(s.annotations)) bump(a.session_id, "ann");
  for (const c of Object.values<any>(s.captures.clouds)) bump(c.session_id, "clouds");
  for (const m of Object.values<any>(s.captures.meshes)) bump(m.session_id, "meshes");
  for (const sh of Object.values<any>(s.screenshots)) bump(sh.session_id, "shots");
  const lines = [...groups.entries()].sort().map(
    ([sid, g]) =>
      `${sid} - ${g.ann} annotations, ${g.clouds} snapshots, ` +
      `${g.meshes} meshes, ${g.shots} screenshots`,
  );
  sessionsEl.textContent = lines.join("\n");
}

function syncEphemeral(): void {
  for (const [peer, cursor] of client.liveCursors) {
    let ball = cursorSpheres.get(peer);
    if (!ball) {
      ball = new THREE.Mesh(
        new THREE.SphereGeometry(0.06),
        new THREE.MeshBasicMaterial({ transparent: true, opacity: 0.6 }),
      );
      ball.add(new THREE.AxesHelper(0.15));
      cursorSpheres.set(peer, ball);
      scene.add(ball);
    }
    (ball.material as THREE.MeshBasicMaterial).color = roleColor(cursor.role);
    ball.position.set(cursor.position[0], cursor.position[1], cursor.position[2]);
  }
  for (const [peer, info] of client.presence) {
    let helper = presenceHelpers.get(peer);
    if (!helper) {
      helper = new THREE.AxesHelper(0.4);
      presenceHelpers.set(peer, helper);
      scene.add(helper);
    }
    const p = info.pose;
    helper.position.set(p.position[0], p.position[1], p.position[2]);
    helper.quaternion.set(p.rotation[1], p.rotation[2], p.rotation[3], p.rotation[0]);
  }
  const vf = client.latestViewFrame();
  shotBtn.disabled = vf === null;
  drawPanel(vf);
}

function drawPanel(vf: any | null): void {
  const ctx = panel.getContext("2d")!;
  ctx.fillStyle = "#0b0e13";
  ctx.fillRect(0, 0, panel.width, panel.height);
  if (vf === null) {
    ctx.fillStyle = "#49566b";
    ctx.fillText("waiting for in-situ view...", 12, 120);
    return;
  }
  // frames are opaque payloads; decode image bytes when present, else
  // draw a reticle placeholder over the source-camera label
  if (vf.frame_b64 && vf.frame_b64.length > 64) {
    const img = new Image();
    img.onload = () => ctx.drawImage(img, 0, 0, panel.width, panel.height);
    img.src = "data:image/png;base64," + vf.frame_b64;
  } else {
    ctx.strokeStyle = "#31435c";
    for (let x = 0; x < panel.width; x += 32) {
      ctx.beginPath(); ctx.moveTo(x, 0); ctx.lineTo(x, panel.height); ctx.stroke();
    }
    for (let y = 0; y < panel.height; y += 32) {
      ctx.beginPath(); ctx.moveTo(0, y); ctx.lineTo(panel.width, y); ctx.stroke();
    }
    ctx.fillStyle = "#9db2cc";
    ctx.fillText(`live view of ${vf.peer}`, 12, 16);
  }
}

// ---- interactions -----------------------------------------------------------------

const raycaster = new THREE.Raycaster();

renderer.domElement.addEventListener("pointerdown", (ev) => {
  if (gizmo.dragging) return;
  const ndc = new THREE.Vector2(
    (ev.clientX / innerWidth) * 2 - 1,
    -(ev.clientY / innerHeight) * 2 + 1,
  );
  raycaster.setFromCamera(ndc, camera);
  const hits = raycaster.intersectObjects([...objectMeshes.values()]);
  if (hits.length > 0) {
    const oid = hits[0].object.userData.objectId as string;
    selected = oid;
    client.beginDrag(oid);
    gizmo.attach(hits[0].object);
  }
});

gizmo.addEventListener("dragging-changed", (ev: any) => {
  orbit.enabled = !ev.value;
  if (!ev.value && selected !== null) {
    const mesh = objectMeshes.get(selected);
    if (mesh) {
      client.dragPreview({
        position: mesh.position.toArray(),
        rotation: [mesh.quaternion.w, mesh.quaternion.x, mesh.quaternion.y, mesh.quaternion.z],
        scale: mesh.scale.toArray(),
      });
    }
    client.endDrag(); // exactly one set_transform hits the wire
    flush();
    if (selected !== null) client.beginDrag(selected);
  }
});

addEventListener("keydown", (ev) => {
  if (ev.key === "Escape") {
    client.cancelDrag();
    gizmo.detach();
    selected = null;
    syncScene();
  }
});

let lastHoverSent = 0;
panel.addEventListener("pointermove", (ev) => {
  const vf = client.latestViewFrame();
  if (vf === null) return;
  const now = performance.now();
  if (now - lastHoverSent < 33) return; // ~30 Hz, latest wins on the wire anyway
  lastHoverSent = now;
  const rect = panel.getBoundingClientRect();
  const px = ((ev.clientX - rect.left) / rect.width) * vf.intrinsics.width;
  const py = ((ev.clientY - rect.top) / rect.height) * vf.intrinsics.height;
  client.panelHover(px, py);
  flush();
});

panel.addEventListener("click", () => {
  client.panelClick();
  flush();
});

shotBtn.addEventListener("click", () => {
  client.screenshot();
  flush();
});

addBtn.addEventListener("click", () => {
  // drop the asset a couple of meters in front of the editor camera
  const fwd = new THREE.Vector3();
  camera.getWorldDirection(fwd);
  const at = camera.position.clone().add(fwd.multiplyScalar(2.5));
  client.createObject(assetSelect.value, {
    position: [at.x, at.y, at.z],
    rotation: [1, 0, 0, 0],
    scale: [1, 1, 1],
  });
  flush();
});

opacitySlider.addEventListener("input", () => {
  client.setMeshOpacity(Number(opacitySlider.value) / 100);
  if (locationMeshObj) {
    (locationMeshObj.material as THREE.MeshStandardMaterial).opacity = client.meshOpacity;
  }
  // rendering-only; rides along with the next presence update
});

// ---- location mesh over HTTP ---------------------------------------------------------

async function loadLocationMesh(): Promise<void> {
  try {
    const res = await fetch(`${HTTP}/location-mesh`);
    if (!res.ok) return;
    const text = await res.text();
    const vertices: number[] = [];
    const triangles: number[] = [];
    for (const line of text.split("\n")) {
      const parts = line.trim().split(/\s+/);
      if (parts[0] === "v") vertices.push(+parts[1], +parts[2], +parts[3]);
      if (parts[0] === "f") {
        const idx = parts.slice(1).map((tok) => parseInt(tok.split("/")[0], 10) - 1);
        for (let k = 1; k < idx.length - 1; k++) triangles.push(idx[0], idx[k], idx[k + 1]);
      }
    }
    const tree: MeshTree = { vertices, triangles };
    client.locationMesh = [tree];
    locationMeshObj = new THREE.Mesh(
      meshTreeToGeometry(tree, false),
      new THREE.MeshStandardMaterial({
        color: 0x7788aa,
        transparent: true,
        opacity: client.meshOpacity,
        side: THREE.DoubleSide,
      }),
    );
    scene.add(locationMeshObj);
  } catch {
    // no site mesh served; cursors fall back to coarse-mesh blocks
  }
}

// ---- connection with retry -------------------------------------------------------------

let ws: WebSocket | null = null;
let retryMs = 500;

function flush(): void {
  if (ws === null || ws.readyState !== WebSocket.OPEN) return;
  for (const text of client.takeOutbox()) ws.send(text);
}

function connect(): void {
  banner.textContent = `connecting to ${RELAY} as ${PEER}...`;
  ws = new WebSocket(`${RELAY}/ws/${ROOM}?peer=${PEER}&role=exsitu`);
  ws.onopen = () => {
    banner.textContent = `room ${ROOM} as ${PEER}`;
    retryMs = 500;
  };
  ws.onmessage = (ev) => {
    client.ingestText(ev.data as string);
    syncScene();
  };
  ws.onclose = () => {
    banner.textContent = `disconnected - retrying in ${Math.round(retryMs / 1000)}s`;
    setTimeout(connect, retryMs);
    retryMs = Math.min(retryMs * 2, 10_000);
  };
}

loadLocationMesh();
connect();

let presenceTick = 0;
renderer.setAnimationLoop(() => {
  orbit.update();
  syncEphemeral();
  if (++presenceTick % 30 === 0 && client.state !== null) {
    client.sendPresence({
      position: camera.position.toArray(),
      rotation: [camera.quaternion.w, camera.quaternion.x, camera.quaternion.y, camera.quaternion.z],
    });
    flush();
  }
  renderer.render(scene, camera);
});
