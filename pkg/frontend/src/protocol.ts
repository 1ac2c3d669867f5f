/**
 * Wire envelopes (proto_version 1): one canonical-JSON envelope per
 * WebSocket text frame. Decode keeps the parsed tree; encode reproduces
 * the exact canonical bytes.
 */

import { dumps, Tree } from "./canonical";

export const PROTO_VERSION = 1;

export const LOSSY_TYPES = new Set(["cursor_live", "presence_pose", "view_frame"]);

export const MESSAGE_TYPES = new Set([
  "scene_deltas",
  "capture_cloud",
  "mesh_block",
  "capture_stopped",
  "annotation_add",
  "cursor_live",
  "cursor_marker",
  "presence_pose",
  "view_frame",
  "screenshot_anchor",
  "localization_event",
  "control",
  "snapshot",
]);

export class MalformedMessage extends Error {}

export interface Envelope {
  body: any;
  channel: "reliable" | "lossy";
  client_seq: number;
  proto_version: number;
  room: string;
  sender: string;
  sent_at: number;
  server_seq: number | null;
}

export function channelFor(bodyType: string): "reliable" | "lossy" {
  return LOSSY_TYPES.has(bodyType) ? "lossy" : "reliable";
}

export function decode(text: string): Envelope {
  let data: any;
  try {
    data = JSON.parse(text);
  } catch (e) {
    throw new MalformedMessage(`invalid JSON: ${(e as Error).message}`);
  }
  if (typeof data !== "object" || data === null || Array.isArray(data)) {
    throw new MalformedMessage("envelope must be a JSON object");
  }
  if (data.proto_version !== PROTO_VERSION) {
    throw new MalformedMessage(`unsupported proto_version ${data.proto_version}`);
  }
  const type = data.body?.type;
  if (!MESSAGE_TYPES.has(type)) {
    throw new MalformedMessage(`unknown message type ${type}`);
  }
  const expected = type === "snapshot" ? "reliable" : channelFor(type);
  if (data.channel !== expected) {
    throw new MalformedMessage(`message kind ${type} is fixed to channel ${expected}`);
  }
  return data as Envelope;
}

export function encode(env: Envelope): string {
  return dumps(env as unknown as Tree);
}

export function makeEnvelope(
  room: string,
  sender: string,
  clientSeq: number,
  body: any,
  sentAt: number,
): Envelope {
  return {
    body,
    channel: channelFor(body.type),
    client_seq: clientSeq,
    proto_version: PROTO_VERSION,
    room,
    sender,
    sent_at: sentAt,
    server_seq: null,
  };
}
