// HUD text derived from the latest frame and session status.
// Values come verbatim from the FrameMessage; the only client-side state
// is the episodic cost total, reset whenever the step counter restarts.

import { FrameMessage } from "./protocol";

export type SessionStatus =
  | "disconnected"
  | "connecting"
  | "driving"
  | "paused";

export class CostTotaliser {
  private total = 0;
  private lastStep = -1;

  update(frame: FrameMessage): number {
    if (frame.step <= this.lastStep || frame.step === 0) this.total = 0;
    this.total += frame.outcome.cost;
    this.lastStep = frame.step;
    return this.total;
  }

  value(): number {
    return this.total;
  }
}

export interface HudModel {
  status: SessionStatus;
  speedKmh: string;
  reward: string;
  episodeCost: string;
  recording: boolean;
  banner: string | null;
}

export function hudModel(
  frame: FrameMessage | null,
  status: SessionStatus,
  episodeCost: number,
): HudModel {
  let speed = 0;
  if (frame && frame.ego) {
    const ego = frame.bodies.find((b) => b.id === frame.ego);
    if (ego) speed = ego.speed;
  }
  let banner: string | null = null;
  if (status === "disconnected") banner = "disconnected — reconnect to drive";
  else if (frame && frame.episode_over)
    banner = `episode over: ${frame.outcome.reason} — press reset`;
  return {
    status,
    speedKmh: (speed * 3.6).toFixed(1),
    reward: frame ? frame.outcome.reward.toFixed(3) : "0.000",
    episodeCost: episodeCost.toFixed(1),
    recording: frame ? frame.recording : false,
    banner,
  };
}
