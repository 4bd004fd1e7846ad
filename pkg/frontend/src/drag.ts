import { ViewState } from "./state.js";
import { Viewport } from "./view.js";
import { constraintsMessage, HandleDoc } from "./wire.js";

type Timer = ReturnType<typeof setTimeout>;

/**
 * Rate limiter for outbound constraint edits.  Payloads always carry the
 * complete handle set, so coalescing to the latest one loses nothing; two
 * sends are never closer than the configured interval.
 */
export class MessageValve {
  readonly intervalMs: number;
  private lastSent = -Infinity;
  private pending: string | null = null;
  private timer: Timer | null = null;

  constructor(
    private readonly send: (payload: string) => void,
    ratePerSecond = 30,
    private readonly now: () => number = () => performance.now(),
    private readonly schedule: (fn: () => void, ms: number) => Timer = (fn, ms) =>
      setTimeout(fn, ms),
  ) {
    this.intervalMs = 1000 / ratePerSecond;
  }

  offer(payload: string): void {
    const t = this.now();
    if (this.timer === null && t - this.lastSent >= this.intervalMs) {
      this.lastSent = t;
      this.send(payload);
      return;
    }
    this.pending = payload;
    if (this.timer === null) {
      const wait = Math.max(0, this.lastSent + this.intervalMs - t);
      this.timer = this.schedule(() => this.fire(), wait);
    }
  }

  private fire(): void {
    this.timer = null;
    if (this.pending === null) return;
    const payload = this.pending;
    this.pending = null;
    this.lastSent = this.now();
    this.send(payload);
  }
}

export interface DragOptions {
  rateHz?: number;
  hitRadiusPx?: number;
  now?: () => number;
  schedule?: (fn: () => void, ms: number) => Timer;
}

/**
 * Pointer gestures: press on a vertex pins it and dragging streams
 * constraint edits through the valve; press on empty space pans; a
 * modifier press unpins.  Only the dragged handle's preview is local —
 * mesh geometry itself always comes from the server.
 */
export class DragController {
  readonly valve: MessageValve;
  private mode: "idle" | "drag" | "pan" = "idle";
  private lastScreen: [number, number] = [0, 0];
  private readonly hitRadiusPx: number;

  constructor(
    private readonly state: ViewState,
    private readonly view: Viewport,
    send: (payload: string) => void,
    opts: DragOptions = {},
  ) {
    this.valve = new MessageValve(send, opts.rateHz ?? 30, opts.now, opts.schedule);
    this.hitRadiusPx = opts.hitRadiusPx ?? 10;
  }

  pointerDown(sx: number, sy: number, modifier: boolean): void {
    this.lastScreen = [sx, sy];
    const vertex = this.hitVertex(sx, sy);
    if (vertex < 0) {
      this.mode = "pan";
      return;
    }
    if (modifier) {
      this.unpin(vertex);
      return;
    }
    this.state.warning = null;
    const p = this.state.positions[vertex];
    const pinnedAt: [number, number] =
      this.state.handles.get(vertex) ?? [p[0], p[1]];
    this.state.handles.set(vertex, pinnedAt);
    this.state.drag = { vertex, target: pinnedAt };
    this.mode = "drag";
    this.valve.offer(constraintsMessage(this.state.handleDocs()));
  }

  pointerMove(sx: number, sy: number): void {
    if (this.mode === "pan") {
      this.view.panBy(sx - this.lastScreen[0], sy - this.lastScreen[1]);
      this.lastScreen = [sx, sy];
      return;
    }
    if (this.mode !== "drag" || this.state.drag === null) return;
    this.lastScreen = [sx, sy];
    const target = this.view.unproject(sx, sy);
    this.state.drag.target = target;
    this.valve.offer(constraintsMessage(this.docsWithTarget()));
  }

  pointerUp(): void {
    if (this.mode === "drag" && this.state.drag !== null) {
      const { vertex, target } = this.state.drag;
      this.state.handles.set(vertex, target);
      this.valve.offer(constraintsMessage(this.docsWithTarget()));
      this.state.drag = null;
    }
    this.mode = "idle";
  }

  private unpin(vertex: number): void {
    if (!this.state.handles.has(vertex)) return;
    if (this.state.handles.size === 1) {
      this.state.warning = "cannot unpin the last handle: the solver needs at least one pin";
      return;
    }
    this.state.warning = null;
    this.state.handles.delete(vertex);
    this.valve.offer(constraintsMessage(this.state.handleDocs()));
  }

  private docsWithTarget(): HandleDoc[] {
    const drag = this.state.drag!;
    const docs = this.state
      .handleDocs()
      .filter((doc) => doc.vertex !== drag.vertex);
    docs.push({ vertex: drag.vertex, position: [drag.target[0], drag.target[1]] });
    docs.sort((a, b) => a.vertex - b.vertex);
    return docs;
  }

  private hitVertex(sx: number, sy: number): number {
    let best = -1;
    let bestDist = this.hitRadiusPx * this.hitRadiusPx;
    for (let v = 0; v < this.state.positions.length; v++) {
      const p = this.state.positions[v];
      const [px, py] = this.view.project(p[0], p[1]);
      const d = (px - sx) * (px - sx) + (py - sy) * (py - sy);
      if (d <= bestDist) {
        best = v;
        bestDist = d;
      }
    }
    return best;
  }
}
