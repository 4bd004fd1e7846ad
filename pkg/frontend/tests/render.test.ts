import { describe, expect, it } from "vitest";
import { COLORS, Ctx2D, drawScene } from "../src/render.js";
import { ViewState } from "../src/state.js";
import { Viewport } from "../src/view.js";

/** Records fill calls by the active fillStyle. */
class StubCtx implements Ctx2D {
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 1;
  fills: string[] = [];
  clearRect(): void {}
  beginPath(): void {}
  moveTo(): void {}
  lineTo(): void {}
  closePath(): void {}
  fill(): void {
    this.fills.push(String(this.fillStyle));
  }
  stroke(): void {}
  arc(): void {}
  setLineDash(): void {}
}

function sceneWithFlips(): { state: ViewState; view: Viewport } {
  const state = new ViewState();
  // four triangles fanned around a hub at the square's center
  state.apply({
    type: "mesh",
    vertices: [
      [0, 0],
      [2, 0],
      [2, 2],
      [0, 2],
      [1, 1],
    ],
    faces: [
      [0, 1, 4],
      [1, 2, 4],
      [2, 3, 4],
      [3, 0, 4],
    ],
  });
  const view = new Viewport();
  view.resize(400, 400);
  view.fitTo(state.rest);
  return { state, view };
}

describe("drawScene", () => {
  it("paints no alert fills when nothing is flipped", () => {
    const { state, view } = sceneWithFlips();
    const ctx = new StubCtx();
    expect(drawScene(ctx, state, view)).toBe(0);
    expect(ctx.fills.filter((f) => f === COLORS.alert)).toEqual([]);
    expect(ctx.fills).toHaveLength(4);
  });

  it("paints exactly as many alert fills as there are flipped faces", () => {
    const { state, view } = sceneWithFlips();
    state.apply({
      type: "update",
      iter: 1,
      energy: 9,
      flips: 3,
      e_prim: 1,
      e_dual: 1,
      positions: [
        [0, 0],
        [2, 0],
        [2, 2],
        [2, 4], // corner 3 dragged across the top edge
        [3, -1], // hub below and right of the square: faces 0 and 1 invert
      ],
    });
    expect(state.clientFlips).toBe(3);
    expect(state.flipMismatch).toBe(false);
    const ctx = new StubCtx();
    const alertFills = drawScene(ctx, state, view);
    expect(alertFills).toBe(3);
    expect(ctx.fills.filter((f) => f === COLORS.alert)).toHaveLength(3);
  });

  it("latches a mismatch when the server count disagrees", () => {
    const { state } = sceneWithFlips();
    state.apply({
      type: "update",
      iter: 1,
      energy: 9,
      flips: 2, // wrong on purpose
      e_prim: 1,
      e_dual: 1,
      positions: [
        [0, 0],
        [2, 0],
        [2, 2],
        [2, 4],
        [3, -1],
      ],
    });
    expect(state.clientFlips).toBe(3);
    expect(state.serverFlips).toBe(2);
    expect(state.flipMismatch).toBe(true);
  });

  it("skips alert fills when the overlay is toggled off", () => {
    const { state, view } = sceneWithFlips();
    state.apply({
      type: "update",
      iter: 1,
      energy: 9,
      flips: 3,
      e_prim: 1,
      e_dual: 1,
      positions: [
        [0, 0],
        [2, 0],
        [2, 2],
        [2, 4],
        [3, -1],
      ],
    });
    state.showFlips = false;
    const ctx = new StubCtx();
    expect(drawScene(ctx, state, view)).toBe(0);
    expect(ctx.fills.filter((f) => f === COLORS.alert)).toEqual([]);
  });

  it("draws the drag preview at the target, leaving geometry alone", () => {
    const { state, view } = sceneWithFlips();
    state.handles.set(4, [1, 1]);
    state.drag = { vertex: 4, target: [1.5, 0.5] };
    const ctx = new StubCtx();
    drawScene(ctx, state, view);
    expect(ctx.fills.filter((f) => f === COLORS.preview)).toHaveLength(1);
    expect(state.positions[4]).toEqual([1, 1]); // preview never mutates geometry
  });
});
