// Replays a recorded service session through the client stack frame by
// frame: socket delivery, animation-frame batching, monotonicity filter,
// flip recount, canvas fills.  On every rendered frame the client's own
// orientation count must agree with the server's, and the renderer must
// paint exactly that many alert fills.
import { readFileSync } from "node:fs";
import { describe, expect, it } from "vitest";
import { Ctx2D, COLORS, drawScene } from "../src/render.js";
import { SessionClient, SocketLike } from "../src/session.js";
import { ViewState } from "../src/state.js";
import { Viewport } from "../src/view.js";
import { decodeBinaryFrame, UpdateMessage } from "../src/wire.js";

interface RecordedFrame {
  dir: "send" | "recv";
  t: number;
  text: string;
}

const fixture = JSON.parse(
  readFileSync(new URL("./fixtures/bar_drag_session.json", import.meta.url), "utf-8"),
) as {
  frames: RecordedFrame[];
  binary_probe: { b64: string; json: UpdateMessage };
};

class CountingCtx implements Ctx2D {
  fillStyle: string | CanvasGradient | CanvasPattern = "";
  strokeStyle: string | CanvasGradient | CanvasPattern = "";
  lineWidth = 1;
  alertFills = 0;
  clearRect(): void {}
  beginPath(): void {}
  moveTo(): void {}
  lineTo(): void {}
  closePath(): void {}
  fill(): void {
    if (this.fillStyle === COLORS.alert) this.alertFills++;
  }
  stroke(): void {}
  arc(): void {}
  setLineDash(): void {}
}

describe("recorded session replay", () => {
  it("matches the server flip count on every rendered frame", () => {
    const received = fixture.frames.filter((f) => f.dir === "recv");
    expect(received.length).toBeGreaterThan(50);

    let push: (data: string) => void = () => {};
    const session = new SessionClient("ws://replay", () => {
      const socket: SocketLike = {
        binaryType: "blob",
        send: () => {},
        close: () => {},
        onopen: null,
        onmessage: null,
        onclose: null,
        onerror: null,
      };
      push = (data) => socket.onmessage?.({ data });
      return socket;
    });
    session.connect();

    const state = new ViewState();
    const view = new Viewport();
    view.resize(800, 600);

    // deliver frames in 16 ms animation-frame batches, as recorded
    const batches: RecordedFrame[][] = [];
    for (const frame of received) {
      const tail = batches[batches.length - 1];
      if (tail && frame.t - tail[0].t < 16) tail.push(frame);
      else batches.push([frame]);
    }
    expect(batches.length).toBeGreaterThan(30);

    let renderedUpdates = 0;
    let framesWithFlips = 0;
    for (const batch of batches) {
      for (const frame of batch) push(frame.text);
      let lastApplied: UpdateMessage | null = null;
      for (const msg of session.drain()) {
        const repaint = state.apply(msg);
        if (msg.type === "mesh") view.fitTo(state.rest);
        if (msg.type === "update" && repaint) {
          lastApplied = msg;
          renderedUpdates++;
        }
      }
      expect(state.flipMismatch).toBe(false); // client recount == server, every frame
      const ctx = new CountingCtx();
      drawScene(ctx, state, view);
      expect(ctx.alertFills).toBe(state.clientFlips);
      if (lastApplied) {
        expect(ctx.alertFills).toBe(lastApplied.flips);
        if (lastApplied.flips > 0) framesWithFlips++;
      }
    }

    expect(renderedUpdates).toBeGreaterThanOrEqual(30);
    expect(framesWithFlips).toBeGreaterThanOrEqual(1); // the check has teeth
    expect(state.clientFlips).toBe(0); // session ended clean
    expect(state.status).toBe("converged");
  });

  it("decodes the server-encoded binary frame to its JSON twin", () => {
    const bytes = Buffer.from(fixture.binary_probe.b64, "base64");
    const buf = bytes.buffer.slice(bytes.byteOffset, bytes.byteOffset + bytes.byteLength);
    const decoded = decodeBinaryFrame(buf) as UpdateMessage;
    expect(decoded).toEqual(fixture.binary_probe.json);
  });
});
