"""Regenerate the mesh fixtures committed next to this script.

Everything here is deterministic — fixed topology, fixed seeds, positions
written with full ``repr`` precision — so re-running the script reproduces
the committed files byte for byte:

    python tests/fixtures/gen_fixtures.py

Files produced:

* ``hemisphere.obj``        open hemisphere, disk topology, 265 v / 506 f
* ``hemisphere_folded.obj`` same surface with its harmonic UVs, except a
                            connected patch of ~10% of the faces is mirrored
                            in place (the UV channel starts folded)
* ``disk200.obj``           irregular planar disk, ~200 faces, unit-circle rim
* ``grid20.obj``            20x20 unit grid at rest
* ``grid20_perturbed.obj``  same grid with every interior vertex displaced by
                            10% of the mean edge length (seeded directions)
* ``bar.obj``               planar 9x3 bar, 4:1 aspect
* ``cube5.tet``             5x5x5-vertex unit cube, six tets per cell (384)
* ``twist30.json``          handle targets twisting cube5's boundary by 30
                            degrees about the z-axis, linearly in z
"""

import json
import math
from collections import defaultdict, deque
from pathlib import Path

import numpy as np
from scipy.spatial import Delaunay

from flipfree.energies import EnergyKind, evaluate, tutte_init
from flipfree.jacobian import build_gradient_operator
from flipfree.mesh_io import boundary_surface, load_mesh, mesh_from_arrays, save_obj_with_uv

HERE = Path(__file__).resolve().parent


def write_obj(path, verts, faces):
    with open(path, "w", encoding="utf-8") as fh:
        for v in verts:
            row = [float(c) for c in v] + [0.0] * (3 - len(v))
            fh.write("v %r %r %r\n" % tuple(row))
        for f in faces:
            fh.write("f %d %d %d\n" % tuple(int(i) + 1 for i in f))


def write_tet(path, verts, tets):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("%d %d\n" % (len(verts), len(tets)))
        for p in verts:
            fh.write("%r %r %r\n" % (float(p[0]), float(p[1]), float(p[2])))
        for t in tets:
            fh.write("%d %d %d %d\n" % tuple(int(i) + 1 for i in t))


def hemisphere(nseg=22, nring=12):
    """Open hemisphere: a polar cap fan plus nring-1 quad rings, split."""
    verts = [(0.0, 0.0, 1.0)]
    for r in range(1, nring + 1):
        th = 0.5 * math.pi * r / nring
        for s in range(nseg):
            ph = 2.0 * math.pi * s / nseg
            verts.append(
                (math.sin(th) * math.cos(ph), math.sin(th) * math.sin(ph), math.cos(th))
            )
    faces = [(0, 1 + s, 1 + (s + 1) % nseg) for s in range(nseg)]
    for r in range(1, nring):
        a0, b0 = 1 + (r - 1) * nseg, 1 + r * nseg
        for s in range(nseg):
            s2 = (s + 1) % nseg
            faces += [(a0 + s, b0 + s, b0 + s2), (a0 + s, b0 + s2, a0 + s2)]
    return np.asarray(verts), np.asarray(faces)


def grid(nx, ny, width=1.0, height=1.0):
    xs, ys = np.meshgrid(
        np.linspace(0, width, nx), np.linspace(0, height, ny), indexing="ij"
    )
    verts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    tris = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            a, b = i * ny + j, (i + 1) * ny + j
            c, d = (i + 1) * ny + j + 1, i * ny + j + 1
            tris += [(a, b, c), (a, c, d)]
    return verts, np.asarray(tris)


def irregular_disk(nb=32, n_interior=85, seed=20205):
    """Unit-circle rim plus a seeded, blue-noise-ish interior scatter."""
    th = 2.0 * math.pi * np.arange(nb) / nb
    rim = np.stack([np.cos(th), np.sin(th)], axis=1)
    rng = np.random.default_rng(seed)
    pts = []
    attempts = 0
    while len(pts) < n_interior:
        attempts += 1
        if attempts > 200_000:
            raise RuntimeError("interior sampling did not terminate")
        p = rng.uniform(-0.88, 0.88, size=2)
        if math.hypot(p[0], p[1]) > 0.86:
            continue
        if pts and np.min(np.linalg.norm(np.asarray(pts) - p, axis=1)) < 0.115:
            continue
        pts.append(p)
    verts = np.vstack([rim, np.asarray(pts)])
    tri = Delaunay(verts)
    faces = tri.simplices.copy()
    # rim points are in convex position, so the hull is exactly the rim
    assert set(int(i) for i in tri.convex_hull.ravel()) == set(range(nb))
    e1 = verts[faces[:, 1]] - verts[faces[:, 0]]
    e2 = verts[faces[:, 2]] - verts[faces[:, 0]]
    area2 = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    flip = area2 < 0.0
    faces[flip] = faces[flip][:, [0, 2, 1]]
    assert np.all(np.abs(area2) > 1e-8)
    return verts, faces


def kuhn_cube(n=5):
    """n^3-vertex unit cube, every cell split into the six Kuhn tets."""
    coords = np.linspace(0.0, 1.0, n)
    verts = np.asarray([[x, y, z] for x in coords for y in coords for z in coords])

    def vid(i, j, k):
        return (i * n + j) * n + k

    tets = []
    for i in range(n - 1):
        for j in range(n - 1):
            for k in range(n - 1):
                c = [
                    vid(i, j, k), vid(i + 1, j, k), vid(i, j + 1, k), vid(i + 1, j + 1, k),
                    vid(i, j, k + 1), vid(i + 1, j, k + 1), vid(i, j + 1, k + 1),
                    vid(i + 1, j + 1, k + 1),
                ]
                for t in ((0, 1, 3, 7), (0, 1, 7, 5), (0, 5, 7, 4),
                          (0, 3, 2, 7), (0, 2, 6, 7), (0, 6, 4, 7)):
                    tets.append([c[t[0]], c[t[1]], c[t[2]], c[t[3]]])
    return verts, np.asarray(tets)


def fold_patch(mesh, uv, seed_vertex=40, n_faces=40):
    """Mirror the vertices of a connected n_faces face patch in place."""
    el = mesh.elements
    edge_faces = defaultdict(list)
    for fi, tri in enumerate(el):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edge_faces[(min(tri[a], tri[b]), max(tri[a], tri[b]))].append(fi)
    start = [fi for fi, tri in enumerate(el) if seed_vertex in tri]
    patch, queue = set(start), deque(sorted(start))
    while queue and len(patch) < n_faces:
        tri = el[queue.popleft()]
        for a, b in ((0, 1), (1, 2), (2, 0)):
            for nb in edge_faces[(min(tri[a], tri[b]), max(tri[a], tri[b]))]:
                if nb not in patch and len(patch) < n_faces:
                    patch.add(nb)
                    queue.append(nb)
    ids = np.unique(el[sorted(patch)])
    folded = uv.copy()
    c = folded[ids].mean(axis=0)
    folded[ids, 0] = 2.0 * c[0] - folded[ids, 0]
    return folded, len(patch)


def main():
    # open hemisphere and its folded-UV variant
    hv, hf = hemisphere()
    write_obj(HERE / "hemisphere.obj", hv, hf)
    hemi = load_mesh(str(HERE / "hemisphere.obj"))
    assert hemi.n_vertices == 265 and hemi.n_elements == 506
    op = build_gradient_operator(hemi)
    uv = tutte_init(hemi)
    assert evaluate(hemi, op, uv, EnergyKind.SYMMETRIC_GRADIENT).flips == 0
    folded, core = fold_patch(hemi, uv)
    flips = evaluate(hemi, op, folded, EnergyKind.SYMMETRIC_GRADIENT).flips
    assert 45 <= flips <= 60, flips  # ~10% of 506 faces start inverted
    save_obj_with_uv(hemi, folded, str(HERE / "hemisphere_folded.obj"))
    print(f"hemisphere: 265 v / 506 f; folded patch core {core} f, {flips} flips")

    # irregular disk
    dv, df = irregular_disk()
    write_obj(HERE / "disk200.obj", dv, df)
    print(f"disk200: {len(dv)} v / {len(df)} f")
    assert 180 <= len(df) <= 220

    # rest and perturbed 20x20 grids
    gv, gf = grid(20, 20)
    write_obj(HERE / "grid20.obj", gv, gf)
    edges = set()
    for tri in gf:
        for a, b in ((0, 1), (1, 2), (2, 0)):
            edges.add((min(tri[a], tri[b]), max(tri[a], tri[b])))
    e = np.asarray(sorted(edges))
    mean_edge = float(np.linalg.norm(gv[e[:, 0]] - gv[e[:, 1]], axis=1).mean())
    interior = ~(
        (gv[:, 0] == 0.0) | (gv[:, 0] == 1.0) | (gv[:, 1] == 0.0) | (gv[:, 1] == 1.0)
    )
    rng = np.random.default_rng(260816)
    dirs = rng.normal(size=(int(interior.sum()), 2))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    pv = gv.copy()
    pv[interior] += 0.1 * mean_edge * dirs
    write_obj(HERE / "grid20_perturbed.obj", pv, gf)
    print(f"grid20: mean edge {mean_edge:.6f}, {int(interior.sum())} interior moved")

    # planar bar
    bv, bf = grid(9, 3, width=4.0)
    write_obj(HERE / "bar.obj", bv, bf)

    # tet cube and its twisted boundary targets
    cv, ct = kuhn_cube(5)
    write_tet(HERE / "cube5.tet", cv, ct)
    cube = load_mesh(str(HERE / "cube5.tet"))
    assert cube.n_vertices == 125 and cube.n_elements == 384
    ids = np.unique(boundary_surface(cube))
    assert len(ids) == 98
    entries = []
    for i in ids:
        x, y, z = (float(c) for c in cube.vertices[int(i)])
        ang = (math.pi / 6.0) * z
        ca, sa = math.cos(ang), math.sin(ang)
        entries.append(
            {
                "vertex": int(i),
                "position": [
                    0.5 + ca * (x - 0.5) - sa * (y - 0.5),
                    0.5 + sa * (x - 0.5) + ca * (y - 0.5),
                    z,
                ],
            }
        )
    with open(HERE / "twist30.json", "w", encoding="utf-8") as fh:
        json.dump(entries, fh, indent=1)
        fh.write("\n")
    print(f"cube5: 125 v / 384 tets, {len(entries)} boundary handles")


if __name__ == "__main__":
    main()
