// Keyboard-to-control mapping: arrow keys drive the ego vehicle.
// Up = full throttle, Down = full brake, Left/Right = full steering
// (+1 steers left, matching the simulator's heading convention).
// Opposing keys cancel to zero.

import { ControlMessage } from "./protocol";

export type Key = "Up" | "Down" | "Left" | "Right";

const KEY_CODES: Record<string, Key> = {
  ArrowUp: "Up",
  ArrowDown: "Down",
  ArrowLeft: "Left",
  ArrowRight: "Right",
  KeyW: "Up",
  KeyS: "Down",
  KeyA: "Left",
  KeyD: "Right",
};

export function keyFromCode(code: string): Key | null {
  return KEY_CODES[code] ?? null;
}

export function actionFromKeys(pressed: ReadonlySet<Key>): ControlMessage {
  const up = pressed.has("Up") ? 1 : 0;
  const down = pressed.has("Down") ? 1 : 0;
  const left = pressed.has("Left") ? 1 : 0;
  const right = pressed.has("Right") ? 1 : 0;
  return { type: "control", steering: left - right, throttle_brake: up - down };
}

export function sameAction(a: ControlMessage, b: ControlMessage): boolean {
  return a.steering === b.steering && a.throttle_brake === b.throttle_brake;
}

/** Tracks held keys and decides, on each 20 Hz tick, whether the changed
 * key state warrants sending a new control message. */
export class KeyTracker {
  static readonly SEND_PERIOD_MS = 50;

  private pressed = new Set<Key>();
  private lastSent: ControlMessage | null = null;

  keyDown(code: string): void {
    const key = keyFromCode(code);
    if (key) this.pressed.add(key);
  }

  keyUp(code: string): void {
    const key = keyFromCode(code);
    if (key) this.pressed.delete(key);
  }

  releaseAll(): void {
    this.pressed.clear();
  }

  current(): ControlMessage {
    return actionFromKeys(this.pressed);
  }

  /** The message to send this tick, or null if the action is unchanged. */
  tick(): ControlMessage | null {
    const action = this.current();
    if (this.lastSent && sameAction(action, this.lastSent)) return null;
    this.lastSent = action;
    return action;
  }

  /** Forget the last sent action (e.g. after a reconnect). */
  invalidate(): void {
    this.lastSent = null;
  }
}
