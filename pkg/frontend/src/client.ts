/**
 * Ex-situ editor session client: a pure protocol client over the relay's
 * WebSocket wire format. Every state change it causes is an envelope;
 * killing the client loses no authored state.
 *
 * Reliable state takes effect through the server echo (last-writer-wins
 * by server_seq everywhere), so this client's materialized hash converges
 * to the relay's. Gizmo drags preview locally and emit exactly one
 * transform delta on release.
 */

import { canonFloat } from "./canonical";
import {
  IntrinsicsTree,
  MeshTree,
  PoseTree,
  Vec3,
  pixelRay,
  projectCursor,
} from "./geometry";
import { Envelope, decode, encode, makeEnvelope } from "./protocol";
import { MaterializedTree, emptyState, fold, stateHash } from "./state";

export const ROLE_COLORS: { [role: string]: [number, number, number] } = {
  insitu: [109, 210, 104], // green
  exsitu: [103, 179, 230], // blue
};

export interface TransformTree {
  position: number[];
  rotation: number[];
  scale: number[];
}

function canonTransform(t: TransformTree): TransformTree {
  return {
    position: t.position.map(canonFloat),
    rotation: t.rotation.map(canonFloat),
    scale: t.scale.map(canonFloat),
  };
}

function randomId(): string {
  let out = "";
  for (let i = 0; i < 32; i++) out += "0123456789abcdef"[Math.floor(Math.random() * 16)];
  return out;
}

export interface DragState {
  object: string;
  preview: TransformTree | null;
}

export class SessionClient {
  state: MaterializedTree | null = null;
  sessionId = "";
  lastAppliedSeq = 0;
  peers: { [peer: string]: any } = {};

  presence = new Map<string, { pose: PoseTree; mesh_opacity: number }>();
  liveCursors = new Map<string, any>();
  viewFrames = new Map<string, any>();

  locationMesh: MeshTree[] = [];
  meshOpacity = 0.5;
  outbox: string[] = [];
  drag: DragState | null = null;
  lastHoverCursor: any | null = null;

  private clientSeq = 0;

  constructor(
    public room: string,
    public peer: string,
    public role: "insitu" | "exsitu" = "exsitu",
    private nowMs: () => number = () => Date.now(),
    private idGen: () => string = randomId,
  ) {}

  // ---- receiving ----

  ingestText(text: string): void {
    this.ingest(decode(text));
  }

  ingest(env: Envelope): void {
    const body = env.body;
    if (body.type === "snapshot") {
      this.state = body.state as MaterializedTree;
      this.sessionId = body.session_id;
      this.lastAppliedSeq = body.as_of;
      this.peers = body.peers ?? {};
      return;
    }
    if (env.channel === "reliable") {
      if (this.state === null || env.server_seq === null) return;
      if (env.server_seq <= this.lastAppliedSeq) return;
      fold(this.state, env);
      this.lastAppliedSeq = env.server_seq;
      if (body.type === "control") {
        if (body.action === "join") this.peers[body.peer] = { role: body.role };
        if (body.action === "leave") delete this.peers[body.peer];
      }
      return;
    }
    // lossy presence data, latest wins
    if (body.type === "presence_pose") {
      this.presence.set(body.peer, { pose: body.pose, mesh_opacity: body.mesh_opacity });
    } else if (body.type === "cursor_live") {
      this.liveCursors.set(body.cursor.peer, body.cursor);
    } else if (body.type === "view_frame") {
      this.viewFrames.set(body.peer, body);
    }
  }

  stateHash(): string {
    if (this.state === null) throw new Error("no snapshot received yet");
    return stateHash(this.state);
  }

  // ---- sending ----

  private send(body: any): Envelope {
    this.clientSeq += 1;
    const env = makeEnvelope(this.room, this.peer, this.clientSeq, body, this.nowMs());
    this.outbox.push(encode(env));
    return env;
  }

  takeOutbox(): string[] {
    const out = this.outbox;
    this.outbox = [];
    return out;
  }

  // ---- gizmo: preview locally, emit exactly one delta on release ----

  beginDrag(objectId: string): void {
    if (this.state === null || !(objectId in this.state.scene.objects)) {
      throw new Error(`no such object ${objectId}`);
    }
    this.drag = { object: objectId, preview: null };
  }

  dragPreview(transform: TransformTree): void {
    if (this.drag === null) throw new Error("no drag in progress");
    this.drag.preview = transform; // render-layer only, no traffic
  }

  endDrag(): Envelope | null {
    const drag = this.drag;
    this.drag = null;
    if (drag === null || drag.preview === null) return null;
    const t = canonTransform(drag.preview);
    const env = this.send({
      type: "scene_deltas",
      deltas: [{ kind: "set_transform", object: drag.object, transform: t }],
    });
    // optimistic local apply; the echo re-applies idempotently and any
    // concurrent write is settled by server_seq order
    if (this.state !== null && drag.object in this.state.scene.objects) {
      this.state.scene.objects[drag.object].transform = t;
    }
    return env;
  }

  cancelDrag(): void {
    this.drag = null; // no deltas emitted
  }

  /** Add a sample asset to the scene (one create delta; the echo folds it). */
  createObject(name: string, transform?: TransformTree, parent: string | null = null): Envelope {
    const t = canonTransform(
      transform ?? { position: [0, 0, 0], rotation: [1, 0, 0, 0], scale: [1, 1, 1] },
    );
    const id = this.idGen();
    return this.send({
      type: "scene_deltas",
      deltas: [{
        kind: "create",
        object: id,
        spec: { id, material: {}, name, params: {}, parent, transform: t },
      }],
    });
  }

  // ---- cursors over the live in-situ view panel ----

  private cursorMeshes(): MeshTree[] {
    const meshes: MeshTree[] = [...this.locationMesh];
    if (this.state !== null) {
      for (const cid of Object.keys(this.state.captures.meshes).sort()) {
        const set = this.state.captures.meshes[cid];
        for (const key of Object.keys(set.blocks).sort()) {
          meshes.push(set.blocks[key]);
        }
      }
    }
    return meshes;
  }

  latestViewFrame(): any | null {
    const peers = [...this.viewFrames.keys()].sort();
    return peers.length ? this.viewFrames.get(peers[0]) : null;
  }

  /** Hover: project this client's cursor through the panel's source
   * camera; returns null until a view frame has arrived. */
  panelHover(px: number, py: number): any | null {
    const vf = this.latestViewFrame();
    if (vf === null) return null;
    const ray = pixelRay(px, py, vf.intrinsics as IntrinsicsTree, vf.camera_pose as PoseTree);
    const { point, normal } = projectCursor(this.cursorMeshes(), ray);
    const cursor = {
      created_at: null,
      id: null,
      live: true,
      normal: normal === null ? null : normal.map(canonFloat),
      peer: this.peer,
      position: point.map(canonFloat),
      role: this.role,
    };
    this.lastHoverCursor = cursor;
    this.send({ type: "cursor_live", cursor });
    return cursor;
  }

  /** Click: freeze the hover cursor into a persistent marker. */
  panelClick(): Envelope | null {
    if (this.lastHoverCursor === null) return null;
    const marker = {
      ...this.lastHoverCursor,
      created_at: this.nowMs(),
      id: this.idGen(),
      live: false,
    };
    return this.send({ type: "cursor_marker", cursor: marker });
  }

  // ---- anchored screenshots of the in-situ view ----

  screenshot(): Envelope | null {
    const vf = this.latestViewFrame();
    if (vf === null) return null; // button disabled until frames arrive
    return this.send({
      type: "screenshot_anchor",
      author: this.peer,
      camera_pose: vf.camera_pose,
      created_at: this.nowMs(),
      image_b64: vf.frame_b64,
      image_id: this.idGen(),
      session_id: this.sessionId,
    });
  }

  // ---- presence ----

  /** Opacity is render-only; it travels only as a presence attribute. */
  setMeshOpacity(opacity: number): void {
    this.meshOpacity = Math.max(0, Math.min(1, opacity));
  }

  sendPresence(pose: PoseTree): Envelope {
    return this.send({
      type: "presence_pose",
      mesh_opacity: canonFloat(this.meshOpacity),
      peer: this.peer,
      pose,
    });
  }

  cursorColor(role: string): [number, number, number] {
    return ROLE_COLORS[role] ?? [255, 255, 255];
  }
}
