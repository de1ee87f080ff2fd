// Websocket session client: holds the latest frame, forwards key state as
// control messages at 20 Hz, and mirrors recording state from server
// acknowledgments. The socket and timer are injectable for tests.

import { KeyTracker } from "./input";
import {
  ClientMessage,
  FrameMessage,
  parseServerMessage,
  ServerMessage,
} from "./protocol";
import { SessionStatus } from "./hud";

export interface SocketLike {
  send(data: string): void;
  close(): void;
  onmessage: ((ev: { data: string }) => void) | null;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  readyState: number;
}

const OPEN = 1;

export interface ClientEvents {
  onFrame?: (frame: FrameMessage) => void;
  onStatus?: (status: SessionStatus) => void;
  onError?: (message: string) => void;
  onRecord?: (active: boolean, path: string | null) => void;
}

export class SessionClient {
  readonly keys = new KeyTracker();
  latestFrame: FrameMessage | null = null;
  status: SessionStatus = "disconnected";

  private socket: SocketLike | null = null;
  private timer: ReturnType<typeof setInterval> | null = null;

  constructor(
    private events: ClientEvents,
    private makeSocket: () => SocketLike,
    private setTimer: typeof setInterval = setInterval,
    private clearTimer: typeof clearInterval = clearInterval,
  ) {}

  connect(): void {
    this.disconnect();
    this.setStatus("connecting");
    const socket = this.makeSocket();
    this.socket = socket;
    socket.onopen = () => {
      this.keys.invalidate();
      this.setStatus("driving");
      this.timer = this.setTimer(() => this.sendTick(), KeyTracker.SEND_PERIOD_MS);
    };
    socket.onclose = () => {
      this.stopTimer();
      this.keys.releaseAll();
      this.setStatus("disconnected");
    };
    socket.onmessage = (ev) => this.handleMessage(ev.data);
  }

  disconnect(): void {
    this.stopTimer();
    if (this.socket) {
      this.socket.onclose = null;
      this.socket.close();
      this.socket = null;
    }
    this.setStatus("disconnected");
  }

  get inputEnabled(): boolean {
    return this.status === "driving";
  }

  send(msg: ClientMessage): void {
    if (this.socket && this.socket.readyState === OPEN) {
      this.socket.send(JSON.stringify(msg));
    }
  }

  reset(seed?: number): void {
    this.send(seed === undefined ? { type: "reset" } : { type: "reset", seed });
  }

  toggleRecording(): void {
    if (this.latestFrame && this.latestFrame.recording) {
      this.send({ type: "record_stop" });
    } else {
      this.send({ type: "record_start" });
    }
  }

  private sendTick(): void {
    if (!this.inputEnabled) return;
    const msg = this.keys.tick();
    if (msg) this.send(msg);
  }

  private handleMessage(raw: string): void {
    const msg: ServerMessage | null = parseServerMessage(raw);
    if (!msg) return;
    if (msg.type === "frame") {
      this.latestFrame = msg;
      this.events.onFrame?.(msg);
    } else if (msg.type === "error") {
      this.events.onError?.(msg.message);
    } else {
      this.events.onRecord?.(msg.active, msg.path);
    }
  }

  private stopTimer(): void {
    if (this.timer !== null) {
      this.clearTimer(this.timer);
      this.timer = null;
    }
  }

  private setStatus(status: SessionStatus): void {
    this.status = status;
    this.events.onStatus?.(status);
  }
}
