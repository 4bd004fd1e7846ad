import { describe, expect, it } from "vitest";
import {
  commandMessage,
  constraintsMessage,
  decodeBinaryFrame,
  decodeFrame,
  energyMessage,
  UpdateMessage,
} from "../src/wire.js";

function binaryFrame(header: object, values: number[][]): ArrayBuffer {
  const head = new TextEncoder().encode(JSON.stringify(header));
  const rows = values.length;
  const cols = values[0].length;
  const buf = new ArrayBuffer(8 + head.length + rows * cols * 8);
  const view = new DataView(buf);
  view.setBigUint64(0, BigInt(head.length), true);
  new Uint8Array(buf, 8, head.length).set(head);
  for (let r = 0; r < rows; r++) {
    for (let c = 0; c < cols; c++) {
      view.setFloat64(8 + head.length + (r * cols + c) * 8, values[r][c], true);
    }
  }
  return buf;
}

describe("decodeFrame", () => {
  it("parses text update frames", () => {
    const msg = decodeFrame(
      '{"type":"update","iter":7,"energy":2.5,"flips":1,"e_prim":0.1,"e_dual":0.2,"positions":[[0,0],[1,0]]}',
    ) as UpdateMessage;
    expect(msg.type).toBe("update");
    expect(msg.iter).toBe(7);
    expect(msg.positions).toEqual([
      [0, 0],
      [1, 0],
    ]);
  });

  it("decodes a binary frame back to the text shape", () => {
    const positions = [
      [0.125, -3.5],
      [1e-300, 2 ** 53],
      [Math.PI, -0],
    ];
    const buf = binaryFrame(
      {
        type: "update",
        iter: 42,
        energy: 1.5,
        flips: 0,
        e_prim: 0,
        e_dual: 0,
        array: "positions",
        rows: 3,
        cols: 2,
      },
      positions,
    );
    const msg = decodeFrame(buf) as UpdateMessage;
    expect(msg.type).toBe("update");
    expect(msg.iter).toBe(42);
    expect(msg.positions).toEqual(positions);
    expect(msg).not.toHaveProperty("array");
    expect(msg).not.toHaveProperty("rows");
  });

  it("handles a body that is not 8-byte aligned", () => {
    // 21-byte header leaves the f64 body at offset 29
    const header = { type: "mesh", faces: [[0, 1, 2]], array: "vertices", rows: 1, cols: 2 };
    const head = JSON.stringify(header);
    expect(head.length % 8).not.toBe(0);
    const msg = decodeFrame(binaryFrame(header, [[0.5, 0.25]]));
    expect(msg).toMatchObject({ type: "mesh", vertices: [[0.5, 0.25]] });
  });

  it("rejects truncated binary frames", () => {
    const buf = binaryFrame({ type: "update", array: "positions", rows: 2, cols: 2 }, [
      [1, 2],
      [3, 4],
    ]);
    expect(() => decodeBinaryFrame(buf.slice(0, buf.byteLength - 8))).toThrow(/length/);
    expect(() => decodeBinaryFrame(new ArrayBuffer(4))).toThrow(/short/);
  });
});

describe("client messages", () => {
  it("builds the documented envelopes", () => {
    expect(JSON.parse(constraintsMessage([{ vertex: 3, position: [1, 2] }]))).toEqual({
      type: "set_constraints",
      handles: [{ vertex: 3, position: [1, 2] }],
    });
    expect(JSON.parse(commandMessage("pause"))).toEqual({ type: "pause" });
    expect(JSON.parse(energyMessage("sd"))).toEqual({ type: "set_energy", kind: "sd" });
  });
});
