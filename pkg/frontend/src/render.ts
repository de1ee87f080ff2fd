// Pure top-down scene rendering.
//
// Drawing goes through the DrawTarget interface so tests can record the
// exact command stream: rendering the same (frame, view) pair twice must
// produce identical commands, and therefore identical pixels. No physics,
// no interpolation — only the latest frame is ever drawn.

import { BodyState, FrameMessage, MapDocument } from "./protocol";

export interface ViewState {
  followEgo: boolean;
  center: [number, number]; // world meters; used when not following
  zoom: number; // meters per pixel
  width: number; // canvas pixels
  height: number;
}

export function defaultView(width: number, height: number): ViewState {
  return { followEgo: true, center: [0, 0], zoom: 0.25, width, height };
}

export interface DrawTarget {
  clear(color: string): void;
  polyline(points: [number, number][], color: string, width: number): void;
  polygon(points: [number, number][], fill: string): void;
  circle(x: number, y: number, r: number, color: string): void;
}

export const COLORS = {
  background: "#1a1d21",
  laneSolid: "#e8e8e8",
  laneBroken: "#6a6f76",
  agent: "#4fc3f7",
  traffic: "#9ccc65",
  object: "#ffb74d",
  checkpoint: "#ba68c8",
  grid: "#2c3036",
};

export function cameraCenter(
  frame: FrameMessage | null,
  view: ViewState,
): [number, number] {
  if (view.followEgo && frame && frame.ego) {
    const ego = frame.bodies.find((b) => b.id === frame.ego);
    if (ego) return [ego.x, ego.y];
  }
  return view.center;
}

export function worldToScreen(
  p: [number, number],
  center: [number, number],
  view: ViewState,
): [number, number] {
  // +x right, +y up (screen y is flipped)
  return [
    view.width / 2 + (p[0] - center[0]) / view.zoom,
    view.height / 2 - (p[1] - center[1]) / view.zoom,
  ];
}

export function bodyCorners(b: BodyState): [number, number][] {
  const c = Math.cos(b.heading);
  const s = Math.sin(b.heading);
  const hl = b.length / 2;
  const hw = b.width / 2;
  const local: [number, number][] = [
    [hl, hw],
    [-hl, hw],
    [-hl, -hw],
    [hl, -hw],
  ];
  return local.map(([lx, ly]) => [b.x + c * lx - s * ly, b.y + s * lx + c * ly]);
}

export function bodyColor(cls: string): string {
  if (cls === "agent") return COLORS.agent;
  if (cls.startsWith("object:")) return COLORS.object;
  return COLORS.traffic;
}

function drawPlaceholderGrid(target: DrawTarget, view: ViewState): void {
  const spacing = 10 / view.zoom; // a 10 m grid
  for (let x = 0; x <= view.width; x += spacing) {
    target.polyline(
      [
        [x, 0],
        [x, view.height],
      ],
      COLORS.grid,
      1,
    );
  }
  for (let y = 0; y <= view.height; y += spacing) {
    target.polyline(
      [
        [0, y],
        [view.width, y],
      ],
      COLORS.grid,
      1,
    );
  }
}

export function renderScene(
  frame: FrameMessage | null,
  map: MapDocument | null,
  view: ViewState,
  target: DrawTarget,
): void {
  target.clear(COLORS.background);
  const center = cameraCenter(frame, view);
  const toScreen = (p: [number, number]): [number, number] =>
    worldToScreen(p, center, view);

  if (map) {
    for (const lane of map.lanes) {
      const [leftType, rightType] = lane.line_types;
      if (leftType !== "none") {
        target.polyline(
          lane.left.map(toScreen),
          leftType === "continuous" ? COLORS.laneSolid : COLORS.laneBroken,
          leftType === "continuous" ? 2 : 1,
        );
      }
      if (rightType !== "none") {
        target.polyline(
          lane.right.map(toScreen),
          rightType === "continuous" ? COLORS.laneSolid : COLORS.laneBroken,
          rightType === "continuous" ? 2 : 1,
        );
      }
    }
  } else {
    drawPlaceholderGrid(target, view);
  }

  if (!frame) return;
  for (const cp of frame.checkpoints) {
    const [sx, sy] = toScreen(cp);
    target.circle(sx, sy, 5 / view.zoom / 20 + 3, COLORS.checkpoint);
  }
  for (const body of frame.bodies) {
    target.polygon(bodyCorners(body).map(toScreen), bodyColor(body.cls));
  }
}

/** DrawTarget that records every command; used by tests to assert render
 * purity and by nothing else. */
export class RecordingTarget implements DrawTarget {
  commands: unknown[] = [];

  clear(color: string): void {
    this.commands.push(["clear", color]);
  }

  polyline(points: [number, number][], color: string, width: number): void {
    this.commands.push(["polyline", points, color, width]);
  }

  polygon(points: [number, number][], fill: string): void {
    this.commands.push(["polygon", points, fill]);
  }

  circle(x: number, y: number, r: number, color: string): void {
    this.commands.push(["circle", x, y, r, color]);
  }
}

/** DrawTarget over a real 2D canvas context. */
export class CanvasTarget implements DrawTarget {
  constructor(
    private ctx: CanvasRenderingContext2D,
    private width: number,
    private height: number,
  ) {}

  clear(color: string): void {
    this.ctx.fillStyle = color;
    this.ctx.fillRect(0, 0, this.width, this.height);
  }

  polyline(points: [number, number][], color: string, width: number): void {
    if (points.length < 2) return;
    this.ctx.strokeStyle = color;
    this.ctx.lineWidth = width;
    this.ctx.beginPath();
    this.ctx.moveTo(points[0][0], points[0][1]);
    for (const [x, y] of points.slice(1)) this.ctx.lineTo(x, y);
    this.ctx.stroke();
  }

  polygon(points: [number, number][], fill: string): void {
    if (points.length < 3) return;
    this.ctx.fillStyle = fill;
    this.ctx.beginPath();
    this.ctx.moveTo(points[0][0], points[0][1]);
    for (const [x, y] of points.slice(1)) this.ctx.lineTo(x, y);
    this.ctx.closePath();
    this.ctx.fill();
  }

  circle(x: number, y: number, r: number, color: string): void {
    this.ctx.fillStyle = color;
    this.ctx.beginPath();
    this.ctx.arc(x, y, r, 0, 2 * Math.PI);
    this.ctx.fill();
  }
}
