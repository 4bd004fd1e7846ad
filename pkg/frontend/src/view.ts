// World <-> screen mapping.  World y points up, screen y points down;
// `scale` is pixels per world unit and (cx, cy) is the world point at the
// canvas center.

export interface Camera {
  cx: number;
  cy: number;
  scale: number;
}

export class Viewport {
  camera: Camera = { cx: 0, cy: 0, scale: 1 };
  width = 1;
  height = 1;

  resize(width: number, height: number): void {
    this.width = width;
    this.height = height;
  }

  fitTo(vertices: number[][], margin = 0.08): void {
    let xmin = Infinity;
    let xmax = -Infinity;
    let ymin = Infinity;
    let ymax = -Infinity;
    for (const p of vertices) {
      if (p[0] < xmin) xmin = p[0];
      if (p[0] > xmax) xmax = p[0];
      if (p[1] < ymin) ymin = p[1];
      if (p[1] > ymax) ymax = p[1];
    }
    if (!isFinite(xmin)) return;
    const spanX = Math.max(xmax - xmin, 1e-12);
    const spanY = Math.max(ymax - ymin, 1e-12);
    const usable = 1 - 2 * margin;
    this.camera.scale = Math.min((this.width * usable) / spanX, (this.height * usable) / spanY);
    this.camera.cx = (xmin + xmax) / 2;
    this.camera.cy = (ymin + ymax) / 2;
  }

  project(wx: number, wy: number): [number, number] {
    const { cx, cy, scale } = this.camera;
    return [this.width / 2 + (wx - cx) * scale, this.height / 2 - (wy - cy) * scale];
  }

  unproject(sx: number, sy: number): [number, number] {
    const { cx, cy, scale } = this.camera;
    return [cx + (sx - this.width / 2) / scale, cy - (sy - this.height / 2) / scale];
  }

  panBy(dxPixels: number, dyPixels: number): void {
    this.camera.cx -= dxPixels / this.camera.scale;
    this.camera.cy += dyPixels / this.camera.scale;
  }

  zoomAt(sx: number, sy: number, factor: number): void {
    const [wx, wy] = this.unproject(sx, sy);
    this.camera.scale *= factor;
    // keep the world point under the cursor fixed
    this.camera.cx = wx - (sx - this.width / 2) / this.camera.scale;
    this.camera.cy = wy + (sy - this.height / 2) / this.camera.scale;
  }
}
