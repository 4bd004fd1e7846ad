"""Distortion-energy densities, mesh-level evaluation, and initializers.

Two solvable energies are supported — the symmetric-gradient density
``f_sg(X) = 0.5*||X||^2 - log det X`` and the symmetric Dirichlet density
``f_sd(X) = 0.5*(||X||^2 + ||X^-1||^2)`` — plus the evaluation-only ARAP
density ``f_arap(X) = 0.5*||X - rot(X)||^2``.  Both solvable densities blow
up as ``det X -> 0+``, which is what keeps minimizers away from flipped
elements.

Flipped Jacobians (``det <= 0``) are never an error when evaluating over a
mesh: they are counted and excluded from the total, so evaluation is always
well defined.  The initializers (:func:`tutte_init`, :func:`conformal_init`)
produce starting maps for the solver; Tutte embeddings of disk meshes are
flip-free by construction, conformal ones may contain flips (allowed).
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from . import jacobian, smallmat
from .kernels import batch
from .mesh_io import HandleConstraints, Mesh, MeshError, boundary_loop, boundary_surface

__all__ = [
    "EnergyKind",
    "EnergyReport",
    "f_sg",
    "grad_f_sg",
    "f_sd",
    "grad_f_sd",
    "f_arap",
    "evaluate",
    "tutte_init",
    "conformal_init",
]

_SQRT_EPS = math.sqrt(np.finfo(np.float64).eps)


class EnergyKind(enum.IntEnum):
    """Energy tags; the integer values double as kernel dispatch codes."""

    SYMMETRIC_GRADIENT = 0
    SYMMETRIC_DIRICHLET = 1
    ARAP = 2

    @property
    def solvable(self) -> bool:
        """Whether the local P-step has a closed form for this energy."""
        return self is not EnergyKind.ARAP

    @classmethod
    def from_name(cls, name: str) -> "EnergyKind":
        table = {
            "sg": cls.SYMMETRIC_GRADIENT,
            "sd": cls.SYMMETRIC_DIRICHLET,
            "arap": cls.ARAP,
        }
        try:
            return table[name.lower()]
        except KeyError:
            raise ValueError(f"unknown energy '{name}'; choose from {sorted(table)}")


@dataclass(frozen=True)
class EnergyReport:
    """Result of evaluating an energy over a mesh.

    ``total`` sums ``w_i * f((GW)_i)`` over orientation-preserving elements
    only; ``flips`` counts elements with ``det (GW)_i <= 0``.  The barrier
    flag stands in for the +inf these elements would contribute.
    """

    total: float
    flips: int
    barrier_active: bool
    per_element: np.ndarray | None = None

    def __post_init__(self):
        if self.barrier_active != (self.flips > 0):
            raise ValueError("barrier_active must mirror flips > 0")


def _check_matrix(x) -> np.ndarray:
    x = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if x.shape not in ((2, 2), (3, 3)):
        raise ValueError(f"expected a 2x2 or 3x3 matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("matrix entries must be finite")
    return x


def f_sg(x) -> float:
    """Symmetric-gradient density ``0.5*||X||^2 - log det X``.

    Returns ``inf`` when ``det X <= 0`` (the barrier sentinel).
    """
    x = _check_matrix(x)
    det = np.linalg.det(x)
    if det <= 0.0:
        return math.inf
    return 0.5 * float(np.sum(x * x)) - math.log(det)


def grad_f_sg(x) -> np.ndarray:
    """Gradient ``X - X^-T`` of :func:`f_sg`; undefined for ``det X <= 0``."""
    x = _check_matrix(x)
    if np.linalg.det(x) <= 0.0:
        raise ValueError("gradient of f_sg is undefined for det X <= 0")
    return x - np.linalg.inv(x).T


def f_sd(x) -> float:
    """Symmetric Dirichlet density ``0.5*(||X||^2 + ||X^-1||^2)``.

    Returns ``inf`` when ``det X <= 0``.
    """
    x = _check_matrix(x)
    if np.linalg.det(x) <= 0.0:
        return math.inf
    inv = np.linalg.inv(x)
    return 0.5 * float(np.sum(x * x) + np.sum(inv * inv))


def grad_f_sd(x) -> np.ndarray:
    """Gradient ``X - X^-T X^-1 X^-T`` of :func:`f_sd`."""
    x = _check_matrix(x)
    if np.linalg.det(x) <= 0.0:
        raise ValueError("gradient of f_sd is undefined for det X <= 0")
    inv = np.linalg.inv(x)
    return x - inv.T @ inv @ inv.T


def f_arap(x) -> float:
    """ARAP density ``0.5*||X - U||^2`` with ``U`` the flip-aware rotation."""
    x = _check_matrix(x)
    u, _ = smallmat.polar_flip_aware(x, _SQRT_EPS)
    return 0.5 * float(np.sum((x - u) ** 2))


def evaluate(
    mesh: Mesh,
    op: jacobian.JacobianOperator,
    w: np.ndarray,
    kind: EnergyKind,
    per_element: bool = False,
) -> EnergyReport:
    """Total energy and flip census of the map ``w``.

    Elements with nonpositive Jacobian determinant are excluded from the
    total and counted as flips, so this never returns an undefined value.
    With ``per_element=True`` the report carries the weighted per-element
    contributions (``inf`` on flipped elements).
    """
    kind = EnergyKind(kind)
    jac = jacobian.apply(op, w)
    vals, flipped = batch.energy_density(int(kind), jac)
    weighted = mesh.measures * vals
    total = float(np.sum(np.where(flipped, 0.0, weighted)))
    flips = int(np.count_nonzero(flipped))
    per = None
    if per_element:
        per = np.where(flipped, np.inf, weighted)
    return EnergyReport(total, flips, flips > 0, per)


# ---------------------------------------------------------------------------
# initializers


def _unique_edges(elements: np.ndarray) -> np.ndarray:
    k = elements.shape[1]
    pairs = [(a, b) for a in range(k) for b in range(a + 1, k)]
    stacked = np.concatenate([elements[:, list(p)] for p in pairs], axis=0)
    stacked.sort(axis=1)
    return np.unique(stacked, axis=0)


def _edge_laplacian(vertices: np.ndarray, edges: np.ndarray) -> sparse.csc_matrix:
    lengths = np.linalg.norm(vertices[edges[:, 0]] - vertices[edges[:, 1]], axis=1)
    if np.any(lengths == 0.0):
        bad = edges[np.argmax(lengths == 0.0)]
        raise MeshError(f"zero-length edge between vertices {bad.tolist()}")
    c = 1.0 / lengths
    i, j = edges[:, 0], edges[:, 1]
    rows = np.concatenate([i, j, i, j])
    cols = np.concatenate([j, i, i, j])
    vals = np.concatenate([-c, -c, c, c])
    n = vertices.shape[0]
    return sparse.csc_matrix((vals, (rows, cols)), shape=(n, n))


def _solve_dirichlet(
    lap: sparse.csc_matrix, fixed_ids: np.ndarray, fixed_pos: np.ndarray
) -> np.ndarray:
    n = lap.shape[0]
    free = np.setdiff1d(np.arange(n), fixed_ids)
    w = np.empty((n, fixed_pos.shape[1]))
    w[fixed_ids] = fixed_pos
    if free.size:
        lff = lap[np.ix_(free, free)].tocsc()
        rhs = -lap[np.ix_(free, fixed_ids)] @ fixed_pos
        solve = spla.splu(lff).solve
        w[free] = solve(np.asarray(rhs))
    return w


def tutte_init(mesh: Mesh, boundary_targets: HandleConstraints | None = None) -> np.ndarray:
    """Edge-weighted Tutte embedding as a starting map.

    Surfaces: the (single) boundary loop is pinned to the unit circle with
    arc-length-proportional spacing and the interior solves the edge-weight
    ``1/||V_i - V_j||`` graph Laplacian — flip-free for disk meshes.  Tet
    meshes require targets for every boundary vertex and harmonically
    extend them inward (the result may contain flipped tets; that is
    accepted and left to the solver).
    """
    edges = _unique_edges(mesh.elements)
    lap = _edge_laplacian(mesh.vertices, edges)

    if mesh.d == 2:
        if boundary_targets is not None and len(boundary_targets):
            boundary_targets.validate_for(mesh)
            fixed_ids = boundary_targets.vertices
            fixed_pos = boundary_targets.positions
        else:
            loop = boundary_loop(mesh)
            pts = mesh.vertices[loop]
            seg = np.linalg.norm(np.roll(pts, -1, axis=0) - pts, axis=1)
            cum = np.concatenate([[0.0], np.cumsum(seg[:-1])])
            theta = 2.0 * math.pi * cum / seg.sum()
            fixed_ids = loop
            fixed_pos = np.stack([np.cos(theta), np.sin(theta)], axis=1)
        w0 = _solve_dirichlet(lap, fixed_ids, fixed_pos)
        op = jacobian.build_gradient_operator(mesh)
        dets = np.linalg.det(jacobian.apply(op, w0))
        if np.count_nonzero(dets <= 0) > mesh.n_elements // 2:
            # boundary loop ran clockwise; mirror to restore orientation
            w0[:, 1] *= -1.0
        return w0

    if boundary_targets is None:
        raise MeshError("tet meshes need positions for every boundary vertex")
    boundary_targets.validate_for(mesh)
    required = np.unique(boundary_surface(mesh))
    missing = np.setdiff1d(required, boundary_targets.vertices)
    if missing.size:
        raise MeshError(
            f"boundary targets missing for {missing.size} vertices"
            f" (e.g. {missing[:8].tolist()})"
        )
    return _solve_dirichlet(lap, boundary_targets.vertices, boundary_targets.positions)


def _farthest_boundary_pair(mesh: Mesh) -> tuple[int, int]:
    loop = boundary_loop(mesh)
    pts = mesh.vertices[loop]
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    flat = int(np.argmax(d2))
    a, b = divmod(flat, len(loop))
    pa, pb = int(loop[a]), int(loop[b])
    return (pa, pb) if pa < pb else (pb, pa)


def conformal_init(mesh: Mesh, pins: tuple[int, int] | None = None) -> np.ndarray:
    """Least-squares conformal starting map with a two-pin gauge.

    Minimizes ``sum_i w_i * (0.5*||J_i||^2 - det J_i)`` — Dirichlet energy
    minus mapped area, nonnegative and zero exactly on similarity maps —
    with two pinned vertices fixing translation/rotation/scale.  Pins
    default to the farthest pair of boundary vertices.  The result is
    deterministic given the pins and may contain flips.
    """
    if mesh.d != 2:
        raise MeshError("conformal_init expects a triangle mesh")
    if pins is None:
        pins = _farthest_boundary_pair(mesh)
    a, b = int(pins[0]), int(pins[1])
    n = mesh.n_vertices
    if not (0 <= a < n and 0 <= b < n):
        raise MeshError(f"pin ids {pins} out of range [0, {n})")
    if a == b:
        raise MeshError("conformal pins must be two distinct vertices")

    op = jacobian.build_gradient_operator(mesh)
    lap = jacobian.assemble_weighted_laplacian(op, mesh.measures)

    # area form: A(W) = x^T S y with S assembled from the gradient blocks
    m = op.n_elements
    c0 = op.blocks[:, 0, :]
    c1 = op.blocks[:, 1, :]
    outer = mesh.measures[:, None, None] * (
        c0[:, :, None] * c1[:, None, :] - c1[:, :, None] * c0[:, None, :]
    )
    rows = np.repeat(op.elements, op.elements.shape[1], axis=1).ravel()
    cols = np.tile(op.elements, (1, op.elements.shape[1])).ravel()
    s = sparse.csc_matrix((outer.ravel(), (rows, cols)), shape=(n, n))

    h = sparse.bmat([[lap, -s], [-s.T, lap]], format="csc")
    gauge = np.linalg.norm(mesh.vertices[b] - mesh.vertices[a])
    fixed_ids = np.array([a, b, n + a, n + b])
    fixed_val = np.array([0.0, gauge, 0.0, 0.0])
    free = np.setdiff1d(np.arange(2 * n), fixed_ids)
    z = np.empty(2 * n)
    z[fixed_ids] = fixed_val
    rhs = -h[np.ix_(free, fixed_ids)] @ fixed_val
    z[free] = spla.splu(h[np.ix_(free, free)].tocsc()).solve(rhs)
    return np.stack([z[:n], z[n:]], axis=1)
