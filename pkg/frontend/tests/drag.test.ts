import { beforeEach, describe, expect, it } from "vitest";
import { DragController, MessageValve } from "../src/drag.js";
import { ViewState } from "../src/state.js";
import { Viewport } from "../src/view.js";

type Timer = ReturnType<typeof setTimeout>;

class FakeClock {
  t = 0;
  private timers: { at: number; fn: () => void }[] = [];
  now = (): number => this.t;
  schedule = (fn: () => void, ms: number): Timer => {
    this.timers.push({ at: this.t + ms, fn });
    return 0 as unknown as Timer;
  };
  advance(to: number): void {
    for (;;) {
      this.timers.sort((a, b) => a.at - b.at);
      const next = this.timers[0];
      if (!next || next.at > to) break;
      this.timers.shift();
      this.t = next.at;
      next.fn();
    }
    this.t = to;
  }
}

describe("MessageValve", () => {
  it("never exceeds 30 messages per second and keeps the last payload", () => {
    const clock = new FakeClock();
    const sendTimes: number[] = [];
    let lastPayload = "";
    const valve = new MessageValve(
      (p) => {
        sendTimes.push(clock.t);
        lastPayload = p;
      },
      30,
      clock.now,
      clock.schedule,
    );
    let n = 0;
    for (let t = 0; t <= 1000; t += 5) {
      clock.advance(t);
      valve.offer(`msg-${n++}`);
    }
    clock.advance(2000); // trailing flush
    for (let i = 1; i < sendTimes.length; i++) {
      expect(sendTimes[i] - sendTimes[i - 1]).toBeGreaterThanOrEqual(1000 / 30 - 1e-9);
    }
    const inFirstSecond = sendTimes.filter((t) => t < 1000).length;
    expect(inFirstSecond).toBeLessThanOrEqual(30);
    expect(inFirstSecond).toBeGreaterThan(20); // throttled, not starved
    expect(lastPayload).toBe(`msg-${n - 1}`);
  });

  it("sends the first message immediately", () => {
    const clock = new FakeClock();
    const sent: string[] = [];
    const valve = new MessageValve((p) => sent.push(p), 30, clock.now, clock.schedule);
    valve.offer("a");
    expect(sent).toEqual(["a"]);
  });
});

describe("DragController", () => {
  let state: ViewState;
  let view: Viewport;
  let clock: FakeClock;
  let sent: string[];
  let drag: DragController;

  const lastHandles = () => JSON.parse(sent[sent.length - 1]).handles;

  beforeEach(() => {
    state = new ViewState();
    state.apply({
      type: "mesh",
      vertices: [
        [0, 0],
        [1, 0],
        [1, 1],
        [0, 1],
      ],
      faces: [
        [0, 1, 2],
        [0, 2, 3],
      ],
    });
    view = new Viewport();
    view.resize(800, 600);
    view.fitTo(state.rest); // scale 504, center (0.5, 0.5)
    clock = new FakeClock();
    sent = [];
    drag = new DragController(state, view, (p) => sent.push(p), {
      now: clock.now,
      schedule: clock.schedule,
    });
  });

  it("pins on pointer-down and streams unprojected targets while dragging", () => {
    const [sx, sy] = view.project(1, 1); // vertex 2
    drag.pointerDown(sx, sy, false);
    expect(sent.length).toBe(1);
    expect(JSON.parse(sent[0])).toEqual({
      type: "set_constraints",
      handles: [{ vertex: 2, position: [1, 1] }],
    });

    drag.pointerMove(sx + 100, sy);
    clock.advance(1000);
    expect(sent.length).toBeGreaterThanOrEqual(2);
    const handle = lastHandles()[0];
    expect(handle.vertex).toBe(2);
    // hand-side unprojection: 100 px at 504 px/unit, y untouched
    expect(handle.position[0]).toBeCloseTo(1 + 100 / 504, 14);
    expect(handle.position[1]).toBeCloseTo(1, 14);
    expect(state.drag?.target[0]).toBeCloseTo(1 + 100 / 504, 14);

    drag.pointerUp();
    clock.advance(2000);
    expect(state.drag).toBeNull();
    expect(state.handles.get(2)?.[0]).toBeCloseTo(1 + 100 / 504, 14);
  });

  it("keeps the drag preview current even between throttled sends", () => {
    const [sx, sy] = view.project(0, 0);
    drag.pointerDown(sx, sy, false);
    const before = sent.length;
    for (let i = 1; i <= 10; i++) drag.pointerMove(sx + i, sy); // 10 moves, no time passing
    expect(state.drag?.target[0]).toBeCloseTo(10 / 504, 12);
    expect(sent.length).toBe(before); // all coalesced behind the throttle
    expect(state.positions[0]).toEqual([0, 0]); // geometry itself untouched
  });

  it("pans on empty space without sending anything", () => {
    const cxBefore = view.camera.cx;
    drag.pointerDown(10, 10, false); // far from all vertices
    drag.pointerMove(60, 10);
    drag.pointerUp();
    expect(view.camera.cx).toBeCloseTo(cxBefore - 50 / 504, 12);
    expect(sent).toEqual([]);
  });

  it("unpins on modifier-click but refuses to drop the last handle", () => {
    const a = view.project(0, 0);
    const b = view.project(1, 1);
    drag.pointerDown(a[0], a[1], false);
    drag.pointerUp();
    clock.advance(100);
    drag.pointerDown(b[0], b[1], false);
    drag.pointerUp();
    clock.advance(200);
    expect(lastHandles().map((h: { vertex: number }) => h.vertex)).toEqual([0, 2]);

    drag.pointerDown(a[0], a[1], true); // unpin vertex 0
    clock.advance(300);
    expect(lastHandles().map((h: { vertex: number }) => h.vertex)).toEqual([2]);
    expect(state.warning).toBeNull();

    const n = sent.length;
    drag.pointerDown(b[0], b[1], true); // last one: refuse + warn
    clock.advance(400);
    expect(sent.length).toBe(n);
    expect(state.handles.has(2)).toBe(true);
    expect(state.warning).toMatch(/at least one pin/);
  });

  it("modifier-click on an unpinned vertex does nothing", () => {
    const [sx, sy] = view.project(0, 1);
    drag.pointerDown(sx, sy, true);
    drag.pointerUp();
    expect(sent).toEqual([]);
    expect(state.handles.size).toBe(0);
  });
});
