import { ViewState } from "./state.js";
import { Viewport } from "./view.js";

// Subset of CanvasRenderingContext2D the renderer touches, so tests can
// substitute a recording stub.
export interface Ctx2D {
  fillStyle: string | CanvasGradient | CanvasPattern;
  strokeStyle: string | CanvasGradient | CanvasPattern;
  lineWidth: number;
  clearRect(x: number, y: number, w: number, h: number): void;
  beginPath(): void;
  moveTo(x: number, y: number): void;
  lineTo(x: number, y: number): void;
  closePath(): void;
  fill(): void;
  stroke(): void;
  arc(x: number, y: number, r: number, a0: number, a1: number): void;
  setLineDash(segments: number[]): void;
}

export const COLORS = {
  background: "#ffffff",
  face: "#e8eef7",
  alert: "#e03131",
  wire: "#5f748d",
  handle: "#1c7ed6",
  preview: "#f08c00",
};

function tracePath(ctx: Ctx2D, view: Viewport, pos: number[][], face: number[]): void {
  const [a, b, c] = face;
  const pa = view.project(pos[a][0], pos[a][1]);
  const pb = view.project(pos[b][0], pos[b][1]);
  const pc = view.project(pos[c][0], pos[c][1]);
  ctx.beginPath();
  ctx.moveTo(pa[0], pa[1]);
  ctx.lineTo(pb[0], pb[1]);
  ctx.lineTo(pc[0], pc[1]);
  ctx.closePath();
}

/** Paint one frame.  Returns the number of alert-colored face fills. */
export function drawScene(ctx: Ctx2D, state: ViewState, view: Viewport): number {
  ctx.clearRect(0, 0, view.width, view.height);
  if (!state.hasMesh) return 0;
  const pos = state.positions;

  ctx.fillStyle = COLORS.face;
  for (const face of state.faces) {
    tracePath(ctx, view, pos, face);
    ctx.fill();
  }

  let alertFills = 0;
  if (state.showFlips) {
    ctx.fillStyle = COLORS.alert;
    for (const i of state.flipped) {
      tracePath(ctx, view, pos, state.faces[i]);
      ctx.fill();
      alertFills++;
    }
  }

  ctx.strokeStyle = COLORS.wire;
  ctx.lineWidth = 1;
  for (const face of state.faces) {
    tracePath(ctx, view, pos, face);
    ctx.stroke();
  }

  for (const [vertex, target] of state.handles) {
    const dragged = state.drag !== null && state.drag.vertex === vertex;
    const at = dragged ? state.drag!.target : target;
    const [sx, sy] = view.project(at[0], at[1]);
    ctx.fillStyle = dragged ? COLORS.preview : COLORS.handle;
    ctx.beginPath();
    ctx.arc(sx, sy, dragged ? 7 : 5, 0, 2 * Math.PI);
    ctx.fill();
    if (dragged) {
      // tether from the vertex's solved position to the preview target
      const [vx, vy] = view.project(pos[vertex][0], pos[vertex][1]);
      ctx.strokeStyle = COLORS.preview;
      ctx.setLineDash([4, 4]);
      ctx.beginPath();
      ctx.moveTo(vx, vy);
      ctx.lineTo(sx, sy);
      ctx.stroke();
      ctx.setLineDash([]);
    }
  }
  return alertFills;
}
