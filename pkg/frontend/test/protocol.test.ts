import { describe, expect, it } from "vitest";
import { actionIds, parseServerMessage } from "../src/protocol.js";

describe("parseServerMessage", () => {
  it("accepts every server message type", () => {
    const lines = [
      '{"type":"hello","session_id":"s1","layout":["WW"],"horizon":200,' +
        '"tick_ms":200,"round":0,"rounds":1,"actions":["up"],"items":["none"]}',
      '{"type":"state","t":3,"grid":["WW"],"agents":[],"pots":[],' +
        '"counters":[],"score":0}',
      '{"type":"round_end","score":40}',
      '{"type":"error","reason":"nope"}',
      '{"type":"bye"}',
    ];
    for (const line of lines) {
      expect(parseServerMessage(line)).not.toBeNull();
    }
  });

  it("rejects junk without throwing", () => {
    expect(parseServerMessage("not json")).toBeNull();
    expect(parseServerMessage("42")).toBeNull();
    expect(parseServerMessage('{"no_type":1}')).toBeNull();
    expect(parseServerMessage('{"type":"teapot"}')).toBeNull();
    expect(parseServerMessage('{"type":"state","t":"one"}')).toBeNull();
    expect(parseServerMessage('{"type":"hello","layout":"flat"}')).toBeNull();
  });

  it("keeps unknown extra fields", () => {
    const msg = parseServerMessage('{"type":"bye","extra":"fine"}');
    expect(msg).toMatchObject({ type: "bye", extra: "fine" });
  });
});

describe("actionIds", () => {
  it("maps names to announced positions", () => {
    const hello = parseServerMessage(
      '{"type":"hello","session_id":"s","layout":["W"],"horizon":1,' +
        '"tick_ms":1,"round":0,"rounds":1,' +
        '"actions":["interact","stay","up"],"items":[]}',
    );
    const ids = actionIds(hello as never);
    expect(ids.get("interact")).toBe(0);
    expect(ids.get("up")).toBe(2);
    expect(ids.has("left")).toBe(false);
  });
});
