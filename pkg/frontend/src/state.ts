import {
  HandleDoc,
  MeshMessage,
  ServerMessage,
  StatusMessage,
  UpdateMessage,
} from "./wire.js";
import { flippedFaces, restOrientations } from "./orientation.js";

export interface DragPreview {
  vertex: number;
  target: [number, number];
}

// Everything the renderer needs for one frame.  Geometry is only ever
// replaced wholesale from server updates; the in-flight drag preview is an
// overlay and never touches `positions`.
export class ViewState {
  faces: number[][] = [];
  rest: number[][] = [];
  restSign: Int8Array = new Int8Array(0);
  positions: number[][] = [];
  lastIter = -1;
  energy = NaN;
  serverFlips = 0;
  clientFlips = 0;
  flipped: number[] = [];
  flipMismatch = false;
  handles = new Map<number, [number, number]>();
  drag: DragPreview | null = null;
  status: StatusMessage["state"] | null = null;
  lastApplied: string | null = null;
  lastError: string | null = null;
  warning: string | null = null;
  showFlips = true;
  showEnergy = true;

  get hasMesh(): boolean {
    return this.faces.length > 0;
  }

  /** Apply one server message; returns true when a repaint is needed. */
  apply(msg: ServerMessage): boolean {
    switch (msg.type) {
      case "mesh":
        return this.applyMesh(msg);
      case "update":
        return this.applyUpdate(msg);
      case "status":
        return this.applyStatus(msg);
      case "error":
        this.lastError = msg.message;
        console.error("server error:", msg.message);
        return true;
    }
  }

  applyMesh(msg: MeshMessage): boolean {
    this.faces = msg.faces;
    this.rest = msg.vertices;
    this.restSign = restOrientations(msg.vertices, msg.faces);
    this.positions = msg.vertices.map((p) => [p[0], p[1]]);
    this.lastIter = -1; // fresh stream, reset the monotonicity watermark
    this.recountFlips(0);
    return true;
  }

  applyUpdate(msg: UpdateMessage): boolean {
    if (msg.iter <= this.lastIter) {
      return false; // stale or duplicate iterate: drop it
    }
    this.lastIter = msg.iter;
    this.positions = msg.positions;
    this.energy = msg.energy;
    this.recountFlips(msg.flips);
    return true;
  }

  applyStatus(msg: StatusMessage): boolean {
    this.status = msg.state;
    this.lastApplied = msg.applied ?? this.lastApplied;
    // The server's handle list is authoritative; an in-flight drag keeps
    // rendering at its preview target regardless.
    this.handles = new Map(msg.handles.map((h) => [h.vertex, [h.position[0], h.position[1]]]));
    return true;
  }

  private recountFlips(serverCount: number): void {
    this.serverFlips = serverCount;
    this.flipped = flippedFaces(this.positions, this.faces, this.restSign);
    this.clientFlips = this.flipped.length;
    if (this.clientFlips !== serverCount) {
      this.flipMismatch = true;
      console.error(
        `flip count mismatch: client sees ${this.clientFlips}, server reports ${serverCount}`,
      );
    }
  }

  handleDocs(): HandleDoc[] {
    const docs: HandleDoc[] = [];
    for (const [vertex, position] of this.handles) {
      docs.push({ vertex, position: [position[0], position[1]] });
    }
    docs.sort((a, b) => a.vertex - b.vertex);
    return docs;
  }
}
