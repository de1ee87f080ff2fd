// Browser entry point: wires the canvas, keyboard, and session buttons to
// the client. The map is fetched once per connection; frames are rendered
// as they arrive, with no client-side motion between them.

import { SessionClient, SocketLike } from "./client";
import { CostTotaliser, hudModel, SessionStatus } from "./hud";
import { MapDocument } from "./protocol";
import { CanvasTarget, defaultView, renderScene, ViewState } from "./render";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function setup(): void {
  const canvas = byId<HTMLCanvasElement>("scene");
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("2d canvas unsupported");
  const target = new CanvasTarget(ctx, canvas.width, canvas.height);
  const view: ViewState = defaultView(canvas.width, canvas.height);
  const costs = new CostTotaliser();
  let map: MapDocument | null = null;
  let mapWarning = false;

  const statusEl = byId<HTMLSpanElement>("status");
  const bannerEl = byId<HTMLDivElement>("banner");
  const speedEl = byId<HTMLSpanElement>("speed");
  const rewardEl = byId<HTMLSpanElement>("reward");
  const costEl = byId<HTMLSpanElement>("cost");
  const recordBtn = byId<HTMLButtonElement>("record");
  const resetBtn = byId<HTMLButtonElement>("reset");
  const connectBtn = byId<HTMLButtonElement>("connect");

  const redraw = (): void => {
    renderScene(client.latestFrame, map, view, target);
    const hud = hudModel(client.latestFrame, client.status, costs.value());
    statusEl.textContent = hud.status;
    speedEl.textContent = hud.speedKmh;
    rewardEl.textContent = hud.reward;
    costEl.textContent = hud.episodeCost;
    recordBtn.textContent = hud.recording ? "stop recording" : "record";
    const warn = mapWarning ? " (map unavailable — showing grid)" : "";
    bannerEl.textContent = (hud.banner ?? "") + warn;
    bannerEl.style.display = hud.banner || warn ? "block" : "none";
  };

  const client = new SessionClient(
    {
      onFrame: (frame) => {
        costs.update(frame);
        redraw();
      },
      onStatus: (status: SessionStatus) => {
        const driving = status === "driving";
        resetBtn.disabled = !driving;
        recordBtn.disabled = !driving;
        if (driving && map === null) void fetchMap();
        redraw();
      },
      onError: (message) => {
        bannerEl.textContent = message;
        bannerEl.style.display = "block";
      },
      onRecord: () => redraw(),
    },
    () =>
      new WebSocket(`ws://${location.host}/session`) as unknown as SocketLike,
  );

  const fetchMap = async (): Promise<void> => {
    try {
      const res = await fetch("/map");
      if (!res.ok) throw new Error(`${res.status}`);
      map = (await res.json()) as MapDocument;
      mapWarning = false;
    } catch {
      map = null;
      mapWarning = true;
    }
    redraw();
  };

  window.addEventListener("keydown", (ev) => {
    if (!client.inputEnabled) return;
    client.keys.keyDown(ev.code);
    if (ev.code.startsWith("Arrow")) ev.preventDefault();
  });
  window.addEventListener("keyup", (ev) => client.keys.keyUp(ev.code));
  window.addEventListener("blur", () => client.keys.releaseAll());

  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    // zoom is a pure view transform; no data is refetched
    view.zoom = Math.min(2.0, Math.max(0.05, view.zoom * (ev.deltaY > 0 ? 1.2 : 1 / 1.2)));
    redraw();
  });

  connectBtn.addEventListener("click", () => client.connect());
  resetBtn.addEventListener("click", () => client.reset());
  recordBtn.addEventListener("click", () => client.toggleRecording());

  redraw();
}

window.addEventListener("DOMContentLoaded", setup);
