/**
 * Materialized room state: the fold of sequenced reliable envelopes over
 * the base scene, kept in the exact canonical tree layout the relay
 * hashes. Holding the tree directly (rather than typed mirrors) means
 * hash parity with the server is structural, not re-derived.
 */

import { Tree, treeHash } from "./canonical";

export interface MaterializedTree {
  annotations: { [id: string]: any };
  captures: { clouds: { [id: string]: any }; meshes: { [id: string]: any } };
  localization: { [peer: string]: any };
  markers: { [id: string]: any };
  scene: { objects: { [id: string]: any } };
  screenshots: { [id: string]: any };
}

export function emptyState(): MaterializedTree {
  return {
    annotations: {},
    captures: { clouds: {}, meshes: {} },
    localization: {},
    markers: {},
    scene: { objects: {} },
    screenshots: {},
  };
}

export function stateHash(state: MaterializedTree): string {
  return treeHash(state as unknown as Tree);
}

function hasObject(scene: { objects: any }, id: string): boolean {
  return Object.prototype.hasOwnProperty.call(scene.objects, id);
}

/** Tolerant delta fold, mirror of the relay's: bad deltas are skipped. */
export function applyDeltas(scene: { objects: { [id: string]: any } }, deltas: any[]): void {
  for (const d of deltas) {
    if (d.kind === "create") {
      if (hasObject(scene, d.object)) continue;
      if (d.spec.parent !== null && !hasObject(scene, d.spec.parent)) continue;
      scene.objects[d.object] = { ...d.spec, id: d.object };
      continue;
    }
    if (!hasObject(scene, d.object)) continue;
    switch (d.kind) {
      case "destroy": {
        const doomed = [d.object];
        for (let i = 0; i < doomed.length; i++) {
          for (const [oid, obj] of Object.entries<any>(scene.objects)) {
            if (obj.parent === doomed[i] && !doomed.includes(oid)) doomed.push(oid);
          }
        }
        for (const oid of doomed) delete scene.objects[oid];
        break;
      }
      case "set_transform":
        scene.objects[d.object].transform = d.transform;
        break;
      case "set_material":
        scene.objects[d.object].material[d.prop] = d.value;
        break;
      case "set_param":
        scene.objects[d.object].params[d.prop] = d.value;
        break;
      case "set_parent": {
        if (d.parent !== null && !hasObject(scene, d.parent)) continue;
        let cur = d.parent;
        let cyclic = false;
        while (cur !== null) {
          if (cur === d.object) {
            cyclic = true;
            break;
          }
          cur = scene.objects[cur].parent;
        }
        if (cyclic) continue;
        scene.objects[d.object].parent = d.parent;
        break;
      }
      default:
        break; // unknown delta kinds are skipped, like the relay does
    }
  }
}

/** Apply one sequenced reliable envelope in place. */
export function fold(state: MaterializedTree, env: any): void {
  const body = env.body;
  switch (body.type) {
    case "scene_deltas":
      applyDeltas(state.scene, body.deltas);
      break;
    case "capture_cloud":
      state.captures.clouds[body.cloud.capture_id] = body.cloud;
      break;
    case "mesh_block": {
      let set = state.captures.meshes[body.capture_id];
      if (!set) {
        set = {
          block_size: body.block_size,
          blocks: {},
          capture_id: body.capture_id,
          session_id: body.session_id,
        };
        state.captures.meshes[body.capture_id] = set;
      }
      set.blocks[`${body.key[0]},${body.key[1]},${body.key[2]}`] = body.mesh;
      break;
    }
    case "annotation_add":
      state.annotations[body.annotation.id] = body.annotation;
      break;
    case "cursor_marker":
      state.markers[body.cursor.id] = body.cursor;
      break;
    case "screenshot_anchor":
      state.screenshots[body.image_id] = body;
      break;
    case "localization_event":
      state.localization[body.peer] = {
        alignment: body.alignment ?? null,
        confirmed_at: body.confirmed_at ?? null,
        phase: body.phase,
      };
      break;
    case "capture_stopped":
    case "control":
      break; // events only
    default:
      throw new Error(`cannot fold message kind ${body.type}`);
  }
}
