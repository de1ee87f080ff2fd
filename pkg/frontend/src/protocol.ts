// Message types spoken with the simulator's teleoperation server.
// See docs/protocol.md in the repository root.

export interface BodyState {
  id: string;
  cls: string; // "agent" | "traffic" | "object:<kind>"
  x: number;
  y: number;
  heading: number;
  speed: number;
  length: number;
  width: number;
}

export interface Outcome {
  reward: number;
  cost: number;
  reason: string;
  terminated: boolean;
}

export interface FrameMessage {
  type: "frame";
  step: number;
  time: number;
  ego: string | null;
  bodies: BodyState[];
  checkpoints: [number, number][];
  outcome: Outcome;
  recording: boolean;
  applied_action: [number, number];
  episode_over: boolean;
}

export interface RecordMessage {
  type: "record";
  active: boolean;
  path: string | null;
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage = FrameMessage | RecordMessage | ErrorMessage;

export interface ControlMessage {
  type: "control";
  steering: number; // [-1, 1], +1 turns left
  throttle_brake: number; // [-1, 1], +1 full throttle, -1 full brake
}

export type ClientMessage =
  | ControlMessage
  | { type: "reset"; seed?: number }
  | { type: "record_start"; seed?: number }
  | { type: "record_stop" };

export interface LaneGeometry {
  id: string;
  left: [number, number][];
  right: [number, number][];
  line_types: [string, string];
}

export interface MapDocument {
  lanes: LaneGeometry[];
  bounds: [[number, number], [number, number]];
}

export function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}

export function parseServerMessage(raw: string): ServerMessage | null {
  let msg: unknown;
  try {
    msg = JSON.parse(raw);
  } catch {
    return null;
  }
  if (typeof msg !== "object" || msg === null) return null;
  const type = (msg as { type?: unknown }).type;
  if (type === "frame" || type === "record" || type === "error") {
    return msg as ServerMessage;
  }
  return null;
}
