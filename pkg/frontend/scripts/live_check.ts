/**
 * Headless live integration check against a running relay.
 *
 * Connects the editor client over a real WebSocket, passively folds the
 * room's stream (a simulator peer is expected to be producing traffic),
 * interacts once a live view frame arrives (hover -> click -> screenshot),
 * and finally compares its state hash with the relay's snapshot endpoint.
 *
 * Usage: node --experimental-websocket live_check.cjs ws://host:port room seconds
 */

import { SessionClient } from "../src/client";

const [relay, room, secondsArg] = process.argv.slice(2);
const seconds = Number(secondsArg ?? 15);
const httpBase = relay.replace(/^ws/, "http");

const client = new SessionClient(room, "ui-headless", "exsitu");
let interacted = false;

function flush(ws: WebSocket): void {
  for (const text of client.takeOutbox()) ws.send(text);
}

async function main(): Promise<number> {
  const ws = new WebSocket(`${relay}/ws/${room}?peer=ui-headless&role=exsitu`);
  await new Promise<void>((resolve, reject) => {
    ws.onopen = () => resolve();
    ws.onerror = (e) => reject(new Error(`connect failed: ${e}`));
  });
  ws.onmessage = (ev) => client.ingestText(String(ev.data));

  const deadline = Date.now() + seconds * 1000;
  while (Date.now() < deadline) {
    await new Promise((r) => setTimeout(r, 100));
    if (!interacted && client.latestViewFrame() !== null) {
      interacted = true;
      const cursor = client.panelHover(16, 12);
      console.log(`hover cursor at [${cursor.position.map((v: number) => v.toFixed(3))}]`);
      client.panelClick();
      client.screenshot();
    }
    flush(ws);
  }
  // quiesce: wait for our own echoes to come back
  await new Promise((r) => setTimeout(r, 1500));
  const mine = client.stateHash();
  const snap = await (await fetch(`${httpBase}/rooms/${room}/snapshot`)).json();
  ws.close();

  console.log(`client hash  ${mine}`);
  console.log(`server hash  ${snap.state_hash}`);
  console.log(`markers: ${Object.keys(client.state!.markers).length}, ` +
              `screenshots: ${Object.keys(client.state!.screenshots).length}, ` +
              `clouds: ${Object.keys(client.state!.captures.clouds).length}, ` +
              `interacted: ${interacted}`);
  if (mine !== snap.state_hash) {
    console.error("HASH MISMATCH");
    return 1;
  }
  console.log("live check OK");
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  },
);
