import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import { MalformedMessage, channelFor, decode, encode, makeEnvelope } from "../src/protocol";

const FIXTURES = join(__dirname, "fixtures");

function streamLines(name: string): string[] {
  return readFileSync(join(FIXTURES, name), "utf-8").trim().split("\n");
}

describe("codec parity with the relay", () => {
  it("re-encodes every recorded reliable envelope byte-for-byte", () => {
    const lines = streamLines("stream.jsonl");
    expect(lines.length).toBeGreaterThanOrEqual(500);
    for (const line of lines) {
      expect(encode(decode(line))).toBe(line);
    }
  });

  it("re-encodes lossy envelopes byte-for-byte", () => {
    for (const line of streamLines("lossy.jsonl")) {
      expect(encode(decode(line))).toBe(line);
    }
  });

  it("re-encodes a full snapshot envelope byte-for-byte", () => {
    const fixture = JSON.parse(readFileSync(join(FIXTURES, "midjoin_snapshot.json"), "utf-8"));
    expect(encode(decode(fixture.envelope))).toBe(fixture.envelope);
  });
});

describe("validation", () => {
  it("rejects truncated frames", () => {
    const line = streamLines("stream.jsonl")[0];
    expect(() => decode(line.slice(0, line.length / 2))).toThrow(MalformedMessage);
  });

  it("rejects unknown types and versions", () => {
    expect(() => decode('{"proto_version":1,"body":{"type":"nope"}}')).toThrow(MalformedMessage);
    expect(() => decode('{"proto_version":9,"body":{"type":"control"}}')).toThrow(MalformedMessage);
    expect(() => decode("[1]")).toThrow(MalformedMessage);
  });

  it("pins message kinds to their channels", () => {
    expect(channelFor("cursor_live")).toBe("lossy");
    expect(channelFor("presence_pose")).toBe("lossy");
    expect(channelFor("view_frame")).toBe("lossy");
    expect(channelFor("scene_deltas")).toBe("reliable");
    expect(channelFor("cursor_marker")).toBe("reliable");
    const bad = streamLines("lossy.jsonl")[0].replace('"channel":"lossy"', '"channel":"reliable"');
    expect(() => decode(bad)).toThrow(MalformedMessage);
  });

  it("makeEnvelope assigns the fixed channel", () => {
    const env = makeEnvelope("r", "p", 1, { type: "cursor_live", cursor: {} }, 0);
    expect(env.channel).toBe("lossy");
    expect(env.server_seq).toBeNull();
  });
});
