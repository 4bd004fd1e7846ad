"""Mesh containers and file I/O for triangle surfaces and tetrahedral volumes.

The :class:`Mesh` container is immutable: geometry is validated once at load
time (index ranges, element measures) and then shared freely across threads.
Supported disk formats are Wavefront OBJ (``v``/``vt``/``f``), OFF, and a
minimal ASCII tet format (``n m`` header, ``n`` coordinate lines, ``m``
four-index lines).  Indices are one-based on disk for every format handled
here and zero-based in memory.
"""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Mesh",
    "MeshError",
    "HandleConstraints",
    "handles_from_json",
    "load_mesh",
    "mesh_from_arrays",
    "save_obj_with_uv",
    "boundary_loop",
    "boundary_surface",
]

_DEGENERATE_REL = 1e-14


class MeshError(ValueError):
    """Raised for malformed mesh files or invalid mesh/constraint data."""


def _frozen_array(x, dtype):
    a = np.ascontiguousarray(np.asarray(x, dtype=dtype))
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Mesh:
    """A simplicial mesh: triangles (planar or embedded in 3D) or tets.

    Attributes
    ----------
    vertices : (n, d_in) float array
        Rest positions ``V``.
    elements : (m, d+1) int array
        Vertex indices per element, zero-based.
    d : int
        Element dimension: 2 for triangles, 3 for tetrahedra.
    d_in : int
        Embedding dimension of the rest positions.
    d_out : int
        Dimension of maps optimised over this mesh (2 for surfaces, 3 for
        volumes).
    measures : (m,) float array
        Positive area/volume ``w_i`` per element.
    uv : (n, 2) float array, optional
        Per-vertex texture coordinates when the source file carried them.
    """

    vertices: np.ndarray
    elements: np.ndarray
    d: int
    d_in: int
    d_out: int
    measures: np.ndarray
    uv: np.ndarray | None = field(default=None)

    def __post_init__(self):
        v = _frozen_array(self.vertices, np.float64)
        e = _frozen_array(self.elements, np.int64)
        w = _frozen_array(self.measures, np.float64)
        if v.ndim != 2 or v.shape[0] == 0:
            raise MeshError("vertices must be a nonempty (n, d_in) array")
        if not np.all(np.isfinite(v)):
            raise MeshError("vertex coordinates must be finite")
        if self.d not in (2, 3):
            raise MeshError(f"element dimension must be 2 or 3, got {self.d}")
        if e.ndim != 2 or e.shape[1] != self.d + 1:
            raise MeshError(
                f"elements must have shape (m, {self.d + 1}) for d={self.d}"
            )
        n = v.shape[0]
        if e.size and (e.min() < 0 or e.max() >= n):
            bad = int(np.argmax((e < 0) | (e >= n)).item() // e.shape[1])
            raise MeshError(f"element {bad} references a vertex outside [0, {n})")
        if v.shape[1] != self.d_in or self.d_in not in (2, 3):
            raise MeshError("vertices shape disagrees with d_in")
        if self.d_out not in (2, 3) or self.d_out > self.d_in:
            raise MeshError("d_out must be 2 or 3 and no larger than d_in")
        if self.d == 2 and self.d_in == 3 and self.d_out != 2:
            raise MeshError("triangles embedded in 3D map to d_out = 2")
        if self.d == 3 and (self.d_in != 3 or self.d_out != 3):
            raise MeshError("tet meshes require d_in = d_out = 3")
        if w.shape != (e.shape[0],):
            raise MeshError("measures must be one positive scalar per element")
        if w.size and not np.all(w > 0):
            raise MeshError("all element measures must be positive")
        uv = self.uv
        if uv is not None:
            uv = _frozen_array(uv, np.float64)
            if uv.shape != (n, 2) or not np.all(np.isfinite(uv)):
                raise MeshError("uv must be a finite (n, 2) array")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "elements", e)
        object.__setattr__(self, "measures", w)
        object.__setattr__(self, "uv", uv)

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]


@dataclass(frozen=True)
class HandleConstraints:
    """Vertex-pinning constraints: ``W[vertices[k]] == positions[k]``."""

    vertices: np.ndarray
    positions: np.ndarray

    def __post_init__(self):
        ids = _frozen_array(np.atleast_1d(self.vertices), np.int64)
        pos = _frozen_array(np.atleast_2d(self.positions), np.float64)
        if ids.ndim != 1:
            raise MeshError("handle ids must be a flat integer list")
        if pos.shape[0] != ids.shape[0]:
            raise MeshError("one target position required per handle id")
        if ids.size:
            uniq, counts = np.unique(ids, return_counts=True)
            if np.any(counts > 1):
                dups = uniq[counts > 1].tolist()
                raise MeshError(f"duplicate handle vertex ids: {dups}")
        if not np.all(np.isfinite(pos)):
            raise MeshError("handle target positions must be finite")
        object.__setattr__(self, "vertices", ids)
        object.__setattr__(self, "positions", pos)

    def __len__(self) -> int:
        return int(self.vertices.shape[0])

    @classmethod
    def empty(cls, d_out: int) -> "HandleConstraints":
        return cls(np.zeros(0, np.int64), np.zeros((0, d_out)))

    def validate_for(self, mesh: Mesh) -> None:
        """Check ids are real vertices and targets have ``d_out`` coordinates."""
        n = mesh.n_vertices
        if self.vertices.size and (self.vertices.min() < 0 or self.vertices.max() >= n):
            bad = self.vertices[(self.vertices < 0) | (self.vertices >= n)]
            raise MeshError(f"handle ids {bad.tolist()} are not vertices of the mesh (n={n})")
        if len(self) and self.positions.shape[1] != mesh.d_out:
            raise MeshError(
                f"handle positions have {self.positions.shape[1]} coordinates,"
                f" mesh maps into {mesh.d_out}D"
            )

    def with_default_pin(self, w0: np.ndarray) -> "HandleConstraints":
        """Return self, or a single pin holding vertex 0 at ``w0[0]`` if empty.

        The global step needs at least one pinned vertex to be well posed.
        """
        if len(self):
            return self
        return HandleConstraints(np.array([0], np.int64), w0[:1].copy())


# ---------------------------------------------------------------------------
# measures & construction


def _triangle_areas(v: np.ndarray, tris: np.ndarray) -> np.ndarray:
    p0, p1, p2 = v[tris[:, 0]], v[tris[:, 1]], v[tris[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    if v.shape[1] == 2:
        return 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    return 0.5 * np.linalg.norm(np.cross(e1, e2), axis=1)


def _tet_signed_volumes(v: np.ndarray, tets: np.ndarray) -> np.ndarray:
    p0 = v[tets[:, 0]]
    mats = np.stack(
        [v[tets[:, 1]] - p0, v[tets[:, 2]] - p0, v[tets[:, 3]] - p0], axis=1
    )
    return np.linalg.det(mats) / 6.0


def _build_mesh(vertices, elements, uv=None, source="<arrays>") -> Mesh:
    v = np.asarray(vertices, dtype=np.float64)
    e = np.asarray(elements, dtype=np.int64)
    if e.ndim != 2 or e.shape[1] not in (3, 4):
        raise MeshError(f"{source}: elements must be triangles or tets")
    if e.shape[0] == 0:
        raise MeshError(f"{source}: mesh has no elements")
    if v.ndim != 2 or v.shape[0] == 0:
        raise MeshError(f"{source}: mesh has no vertices")
    if e.min() < 0 or e.max() >= v.shape[0]:
        rows = np.nonzero((e < 0).any(axis=1) | (e >= v.shape[0]).any(axis=1))[0]
        raise MeshError(
            f"{source}: element {rows[0]} references vertex index outside"
            f" [0, {v.shape[0]})"
        )
    d = e.shape[1] - 1
    if d == 2:
        # A 3-column vertex block whose z column is identically zero is a
        # planar mesh; drop the dead coordinate.
        if v.shape[1] == 3 and np.all(v[:, 2] == 0.0):
            v = v[:, :2]
        if v.shape[1] not in (2, 3):
            raise MeshError(f"{source}: triangle vertices must be 2D or 3D")
        w = _triangle_areas(v, e)
        d_out = 2
    else:
        if v.shape[1] != 3:
            raise MeshError(f"{source}: tet vertices must be 3D")
        w = np.abs(_tet_signed_volumes(v, e))
        d_out = 3
    wmax = w.max()
    bad = np.nonzero(w <= _DEGENERATE_REL * wmax)[0]
    if wmax <= 0.0 or bad.size:
        i = int(bad[0]) if bad.size else 0
        raise MeshError(
            f"{source}: element {i} is degenerate"
            f" (measure {w[i]:.3e} <= {_DEGENERATE_REL:g} * max measure {wmax:.3e})"
        )
    return Mesh(v, e, d, v.shape[1], d_out, w, uv=uv)


def mesh_from_arrays(vertices, elements) -> Mesh:
    """Build a validated :class:`Mesh` from raw vertex/element arrays.

    Element dimension is inferred from the column count (3 = triangles,
    4 = tets); planar triangle meshes given with a zero z column are
    collapsed to 2D.
    """
    return _build_mesh(vertices, elements)


def handles_from_json(entries, mesh: Mesh, where: str = "handles") -> HandleConstraints:
    """Build validated constraints from decoded JSON handle entries.

    ``entries`` must be a list of ``{"vertex": int, "position": [...]}``
    objects with one position coordinate per output dimension of ``mesh``.
    Raises :class:`MeshError` for any malformed entry, duplicate vertex id,
    or id that is not a vertex of the mesh.
    """
    if not isinstance(entries, list):
        raise MeshError(f"{where}: expected a JSON array of handles")
    ids, pos = [], []
    for k, entry in enumerate(entries):
        if not isinstance(entry, dict) or "vertex" not in entry or "position" not in entry:
            raise MeshError(f"{where}: handle {k} needs 'vertex' and 'position' keys")
        vid = entry["vertex"]
        if isinstance(vid, bool) or not isinstance(vid, int):
            raise MeshError(f"{where}: handle {k} vertex id must be an integer")
        p = entry["position"]
        if not isinstance(p, list) or len(p) != mesh.d_out:
            raise MeshError(
                f"{where}: handle {k} position needs {mesh.d_out} coordinates"
            )
        try:
            pos.append([float(c) for c in p])
        except (TypeError, ValueError) as exc:
            raise MeshError(f"{where}: handle {k} position: {exc}") from exc
        ids.append(vid)
    cons = HandleConstraints(
        np.asarray(ids, np.int64),
        np.asarray(pos, np.float64).reshape(len(ids), mesh.d_out),
    )
    cons.validate_for(mesh)
    return cons


# ---------------------------------------------------------------------------
# loaders


def _parse_obj_index(token: str, count: int, what: str, where: str) -> int:
    idx = int(token)
    if idx == 0:
        raise MeshError(f"{where}: {what} index 0 in a one-based format")
    if idx < 0:
        raise MeshError(f"{where}: negative (relative) {what} indices are not supported")
    if idx > count:
        raise MeshError(f"{where}: {what} index {idx} exceeds count {count}")
    return idx - 1


def _load_obj(path: str) -> Mesh:
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    faces: list[list[int]] = []
    face_uvs: list[list[int] | None] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            where = f"{path}:{lineno}"
            if parts[0] == "v":
                if len(parts) != 4:
                    raise MeshError(f"{where}: vertex line needs 3 coordinates")
                verts.append([float(p) for p in parts[1:4]])
            elif parts[0] == "vt":
                if len(parts) < 3:
                    raise MeshError(f"{where}: vt line needs 2 coordinates")
                uvs.append([float(parts[1]), float(parts[2])])
            elif parts[0] == "f":
                if len(parts) != 4:
                    raise MeshError(
                        f"{where}: face with {len(parts) - 1} corners;"
                        " only triangles are supported"
                    )
                vi, ti = [], []
                for corner in parts[1:]:
                    fields = corner.split("/")
                    vi.append(_parse_obj_index(fields[0], len(verts), "vertex", where))
                    if len(fields) > 1 and fields[1]:
                        ti.append(_parse_obj_index(fields[1], len(uvs), "texture", where))
                faces.append(vi)
                face_uvs.append(ti if len(ti) == 3 else None)
            # ignore normals, groups, materials and other records
    if not faces:
        raise MeshError(f"{path}: no faces found")
    uv = None
    if uvs and all(t is not None for t in face_uvs):
        uv_arr = np.zeros((len(verts), 2))
        seen = np.zeros(len(verts), dtype=bool)
        uvs_np = np.asarray(uvs)
        for vi, ti in zip(faces, face_uvs):
            uv_arr[vi] = uvs_np[ti]
            seen[vi] = True
        uv = uv_arr if seen.all() else None
    return _build_mesh(np.asarray(verts), np.asarray(faces), uv=uv, source=path)


def _load_off(path: str) -> Mesh:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [
            ln.strip()
            for ln in fh
            if ln.strip() and not ln.strip().startswith("#")
        ]
    if not lines or lines[0].split()[0] != "OFF":
        raise MeshError(f"{path}: missing OFF header")
    tokens: list[str] = []
    first = lines[0].split()[1:]
    tokens.extend(first)
    body = 1
    while len(tokens) < 3 and body < len(lines):
        tokens.extend(lines[body].split())
        body += 1
    if len(tokens) < 2:
        raise MeshError(f"{path}: malformed OFF counts line")
    n, m = int(tokens[0]), int(tokens[1])
    rows = lines[body:]
    if len(rows) < n + m:
        raise MeshError(f"{path}: expected {n} vertex and {m} face lines")
    verts = []
    for i in range(n):
        cols = rows[i].split()
        if len(cols) < 3:
            raise MeshError(f"{path}: vertex line {i} needs 3 coordinates")
        verts.append([float(c) for c in cols[:3]])
    faces = []
    for i in range(m):
        cols = rows[n + i].split()
        if not cols or int(cols[0]) != 3:
            raise MeshError(f"{path}: face line {i}: only triangles are supported")
        if len(cols) < 4:
            raise MeshError(f"{path}: face line {i} is truncated")
        faces.append(
            [_parse_obj_index(c, n, "vertex", f"{path} face {i}") for c in cols[1:4]]
        )
    return _build_mesh(np.asarray(verts), np.asarray(faces), source=path)


def _load_tet(path: str) -> Mesh:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [
            ln.strip()
            for ln in fh
            if ln.strip() and not ln.strip().startswith("#")
        ]
    if not lines:
        raise MeshError(f"{path}: empty tet file")
    head = lines[0].split()
    if len(head) != 2:
        raise MeshError(f"{path}: header must be '<n_vertices> <n_tets>'")
    n, m = int(head[0]), int(head[1])
    if len(lines) < 1 + n + m:
        raise MeshError(f"{path}: expected {n} coordinate and {m} tet lines")
    verts = []
    for i in range(n):
        cols = lines[1 + i].split()
        if len(cols) != 3:
            raise MeshError(f"{path}: coordinate line {i} needs 3 values")
        verts.append([float(c) for c in cols])
    tets = []
    for i in range(m):
        cols = lines[1 + n + i].split()
        if len(cols) != 4:
            raise MeshError(f"{path}: tet line {i} needs 4 indices")
        tets.append(
            [_parse_obj_index(c, n, "vertex", f"{path} tet {i}") for c in cols]
        )
    return _build_mesh(np.asarray(verts), np.asarray(tets), source=path)


_LOADERS = {"obj": _load_obj, "off": _load_off, "tet-msh": _load_tet}
_EXTENSIONS = {".obj": "obj", ".off": "off", ".tet": "tet-msh", ".msh": "tet-msh"}


def load_mesh(path: str, fmt: str | None = None) -> Mesh:
    """Load and validate a mesh.

    Parameters
    ----------
    path : str
        File to read.
    fmt : {'obj', 'off', 'tet-msh'}, optional
        Format override; inferred from the extension when omitted.

    Returns
    -------
    Mesh
        Validated mesh with positive element measures.  Planar inputs
        (2D format, or 3D coordinates with an all-zero z column) come back
        with ``d_in = 2``.
    """
    if fmt is None:
        ext = os.path.splitext(path)[1].lower()
        fmt = _EXTENSIONS.get(ext)
        if fmt is None:
            raise MeshError(
                f"cannot infer format from '{ext}'; pass fmt in {sorted(_LOADERS)}"
            )
    if fmt not in _LOADERS:
        raise MeshError(f"unknown format '{fmt}'; supported: {sorted(_LOADERS)}")
    return _LOADERS[fmt](path)


def save_obj_with_uv(mesh: Mesh, uv: np.ndarray, path: str) -> None:
    """Write a triangle mesh as OBJ with per-vertex texture coordinates.

    Coordinates are written with 9 decimals, so a save/load round trip
    preserves positions to 1e-9.
    """
    if mesh.d != 2:
        raise MeshError("save_obj_with_uv expects a triangle mesh")
    if mesh.n_elements == 0:
        raise MeshError("refusing to write an OBJ with zero faces")
    w = np.asarray(uv, dtype=np.float64)
    if w.shape != (mesh.n_vertices, 2) or not np.all(np.isfinite(w)):
        raise MeshError("uv must be a finite (n, 2) array")
    v = mesh.vertices
    with open(path, "w", encoding="utf-8") as fh:
        for row in v:
            x, y = row[0], row[1]
            z = row[2] if mesh.d_in == 3 else 0.0
            fh.write(f"v {x:.9f} {y:.9f} {z:.9f}\n")
        for row in w:
            fh.write(f"vt {row[0]:.9f} {row[1]:.9f}\n")
        for tri in mesh.elements:
            a, b, c = (int(t) + 1 for t in tri)
            fh.write(f"f {a}/{a} {b}/{b} {c}/{c}\n")


# ---------------------------------------------------------------------------
# boundary extraction


def _directed_boundary_edges(mesh: Mesh) -> dict[int, int]:
    counts: Counter = Counter()
    for a, b, c in mesh.elements:
        counts[(int(a), int(b))] += 1
        counts[(int(b), int(c))] += 1
        counts[(int(c), int(a))] += 1
    for (a, b), k in counts.items():
        if k > 1:
            raise MeshError(
                f"edge ({a}, {b}) appears {k} times with the same orientation;"
                " mesh is non-manifold or inconsistently oriented"
            )
    nxt: dict[int, int] = {}
    for (a, b) in counts:
        if (b, a) not in counts:
            if a in nxt:
                raise MeshError(f"boundary forks at vertex {a}; not a manifold boundary")
            nxt[a] = b
    return nxt


def boundary_loop(mesh: Mesh) -> np.ndarray:
    """Return the single boundary cycle of a triangle mesh.

    The cycle is ordered consistently with face orientation and visits each
    boundary edge exactly once.  Raises :class:`MeshError` for closed
    surfaces and for meshes with more than one boundary loop.
    """
    if mesh.d != 2:
        raise MeshError("boundary_loop expects a triangle mesh")
    nxt = _directed_boundary_edges(mesh)
    if not nxt:
        raise MeshError("mesh is closed: no boundary edges")
    start = min(nxt)
    loop = [start]
    cur = nxt[start]
    while cur != start:
        loop.append(cur)
        cur = nxt.get(cur, -1)
        if cur < 0:
            raise MeshError("boundary chain is broken; mesh is not manifold")
        if len(loop) > len(nxt):
            raise MeshError("boundary traversal did not close; mesh is not manifold")
    if len(loop) != len(nxt):
        raise MeshError(
            f"mesh has multiple boundary loops ({len(nxt) - len(loop)}"
            " boundary edges outside the first loop)"
        )
    return np.asarray(loop, dtype=np.int64)


def boundary_surface(mesh: Mesh) -> np.ndarray:
    """Extract the outward-oriented boundary triangles of a tet mesh."""
    if mesh.d != 3:
        raise MeshError("boundary_surface expects a tet mesh")
    signed = _tet_signed_volumes(mesh.vertices, mesh.elements)
    counts: Counter = Counter()
    oriented: dict[tuple[int, int, int], tuple[int, int, int]] = {}
    for tet, vol in zip(mesh.elements, signed):
        a, b, c, d = (int(t) for t in tet)
        faces = [(b, c, d), (a, d, c), (a, b, d), (a, c, b)]
        if vol < 0.0:
            faces = [(f[0], f[2], f[1]) for f in faces]
        for f in faces:
            key = tuple(sorted(f))
            counts[key] += 1
            oriented[key] = f
    tris = [oriented[k] for k, cnt in counts.items() if cnt == 1]
    if any(cnt > 2 for cnt in counts.values()):
        bad = next(k for k, cnt in counts.items() if cnt > 2)
        raise MeshError(f"face {bad} is shared by more than two tets")
    return np.asarray(sorted(tris), dtype=np.int64)
