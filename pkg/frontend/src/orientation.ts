// Client-side orientation check.  A triangle counts as flipped when the
// determinant of its deformation Jacobian is nonpositive, which for an
// affine triangle map is exactly sign(current signed area) against
// sign(rest signed area).  The server reports its own count with each
// update; the renderer recomputes independently and the two must agree.

export function doubledArea(pos: ArrayLike<number[]>, a: number, b: number, c: number): number {
  const pa = pos[a];
  const pb = pos[b];
  const pc = pos[c];
  return (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0]);
}

export function restOrientations(vertices: number[][], faces: number[][]): Int8Array {
  const sign = new Int8Array(faces.length);
  for (let i = 0; i < faces.length; i++) {
    const [a, b, c] = faces[i];
    sign[i] = doubledArea(vertices, a, b, c) >= 0 ? 1 : -1;
  }
  return sign;
}

export function flippedFaces(
  positions: number[][],
  faces: number[][],
  restSign: Int8Array,
): number[] {
  const out: number[] = [];
  for (let i = 0; i < faces.length; i++) {
    const [a, b, c] = faces[i];
    if (doubledArea(positions, a, b, c) * restSign[i] <= 0) out.push(i);
  }
  return out;
}
