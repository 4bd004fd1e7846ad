// Message schemas for the deformation session socket, plus the decoder for
// the binary frame variant.  Binary frames are:
//
//   8 bytes   little-endian u64: header length H
//   H bytes   UTF-8 JSON envelope with "array", "rows", "cols" fields
//   rest      rows*cols IEEE-754 binary64 values, little-endian, row-major
//
// The decoded result has the same shape as the JSON text variant: the
// positions (or vertices) land back under the field named by "array".

export interface HandleDoc {
  vertex: number;
  position: number[];
}

export interface MeshMessage {
  type: "mesh";
  vertices: number[][];
  faces: number[][];
}

export interface UpdateMessage {
  type: "update";
  iter: number;
  energy: number;
  flips: number;
  e_prim: number;
  e_dual: number;
  positions: number[][];
}

export interface StatusMessage {
  type: "status";
  state: "running" | "paused" | "converged";
  iter: number;
  handles: HandleDoc[];
  applied?: "rhs-only" | "refactorized";
}

export interface ErrorMessage {
  type: "error";
  message: string;
}

export type ServerMessage = MeshMessage | UpdateMessage | StatusMessage | ErrorMessage;

export function decodeFrame(data: string | ArrayBuffer): ServerMessage {
  if (typeof data === "string") {
    return JSON.parse(data) as ServerMessage;
  }
  return decodeBinaryFrame(data);
}

export function decodeBinaryFrame(buf: ArrayBuffer): ServerMessage {
  if (buf.byteLength < 8) {
    throw new Error(`binary frame too short: ${buf.byteLength} bytes`);
  }
  const headLen = Number(new DataView(buf).getBigUint64(0, true));
  const head = JSON.parse(new TextDecoder().decode(new Uint8Array(buf, 8, headLen)));
  const rows = head.rows as number;
  const cols = head.cols as number;
  const expect = 8 + headLen + rows * cols * 8;
  if (buf.byteLength !== expect) {
    throw new Error(`binary frame length ${buf.byteLength}, expected ${expect}`);
  }
  // The f64 body is not guaranteed 8-byte aligned after the header, so read
  // through a DataView instead of a Float64Array overlay.
  const body = new DataView(buf, 8 + headLen);
  const matrix: number[][] = [];
  for (let r = 0; r < rows; r++) {
    const row = new Array<number>(cols);
    for (let c = 0; c < cols; c++) {
      row[c] = body.getFloat64((r * cols + c) * 8, true);
    }
    matrix.push(row);
  }
  const doc: Record<string, unknown> = {};
  for (const key of Object.keys(head)) {
    if (key !== "array" && key !== "rows" && key !== "cols") doc[key] = head[key];
  }
  doc[head.array as string] = matrix;
  return doc as unknown as ServerMessage;
}

export function constraintsMessage(handles: HandleDoc[]): string {
  return JSON.stringify({ type: "set_constraints", handles });
}

export function commandMessage(name: "pause" | "resume" | "reset"): string {
  return JSON.stringify({ type: name });
}

export function energyMessage(kind: "sg" | "sd"): string {
  return JSON.stringify({ type: "set_energy", kind });
}
