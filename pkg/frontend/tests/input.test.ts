import { describe, expect, it } from "vitest";

import { actionFromKeys, Key, KeyTracker } from "../src/input";

function action(...keys: Key[]) {
  return actionFromKeys(new Set(keys));
}

describe("key mapping", () => {
  it("up is full throttle", () => {
    expect(action("Up")).toMatchObject({ steering: 0, throttle_brake: 1 });
  });

  it("down is full brake", () => {
    expect(action("Down")).toMatchObject({ steering: 0, throttle_brake: -1 });
  });

  it("left steers positive, right negative", () => {
    expect(action("Left").steering).toBe(1);
    expect(action("Right").steering).toBe(-1);
  });

  it("opposing keys cancel", () => {
    expect(action("Up", "Down")).toMatchObject({ steering: 0, throttle_brake: 0 });
    expect(action("Left", "Right").steering).toBe(0);
  });

  it("left plus up combines", () => {
    expect(action("Left", "Up")).toMatchObject({ steering: 1, throttle_brake: 1 });
  });

  it("no keys is neutral", () => {
    expect(action()).toMatchObject({ steering: 0, throttle_brake: 0 });
  });
});

describe("KeyTracker", () => {
  it("sends on change only", () => {
    const t = new KeyTracker();
    expect(t.tick()).toMatchObject({ steering: 0, throttle_brake: 0 });
    expect(t.tick()).toBeNull(); // unchanged
    t.keyDown("ArrowUp");
    expect(t.tick()).toMatchObject({ throttle_brake: 1 });
    expect(t.tick()).toBeNull();
    t.keyUp("ArrowUp");
    expect(t.tick()).toMatchObject({ throttle_brake: 0 });
  });

  it("supports wasd aliases", () => {
    const t = new KeyTracker();
    t.keyDown("KeyW");
    t.keyDown("KeyA");
    expect(t.current()).toMatchObject({ steering: 1, throttle_brake: 1 });
  });

  it("ignores unrelated keys", () => {
    const t = new KeyTracker();
    t.keyDown("KeyQ");
    expect(t.current()).toMatchObject({ steering: 0, throttle_brake: 0 });
  });

  it("invalidate forces a resend", () => {
    const t = new KeyTracker();
    t.tick();
    t.invalidate();
    expect(t.tick()).not.toBeNull();
  });

  it("ticks at 20 Hz", () => {
    expect(KeyTracker.SEND_PERIOD_MS).toBe(50);
  });
});
