"""Per-element Jacobian operator and weighted-Laplacian assembly.

For a piecewise-linear map ``W`` over a simplicial mesh, the Jacobian on
element ``i`` is a constant ``d_out x d`` matrix ``(GW)_i``: a fixed linear
function of the element's vertex positions.  This module builds that linear
operator once per mesh (as per-element coefficient blocks plus one stacked
sparse matrix), applies it and its adjoint, and assembles the weighted
Gram matrix ``L = sum_i mu_i G_i^T G_i`` used by the global solve.

Triangles embedded in 3D are measured in a per-element tangent frame
(``e1`` along the first edge, ``e2 = normalize(n x e1)``), so their
Jacobians are 2x2 like the planar case.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .mesh_io import Mesh, MeshError

__all__ = [
    "JacobianOperator",
    "build_gradient_operator",
    "apply",
    "apply_adjoint",
    "assemble_weighted_laplacian",
]


@dataclass(frozen=True)
class JacobianOperator:
    """Discrete gradient: per-element blocks and the equivalent sparse map.

    ``blocks[i]`` has shape ``(d, d+1)``; column ``k`` holds the gradient
    coefficients of the element's ``k``-th vertex, so
    ``(GW)_i = (blocks[i] @ W[elements[i]]).T``.  ``matrix`` stacks all
    blocks into an ``(m*d, n)`` sparse operator acting on ``W`` columnwise.
    """

    blocks: np.ndarray
    elements: np.ndarray
    d_out: int
    n_vertices: int
    matrix: sparse.csr_matrix
    matrix_t: sparse.csr_matrix

    @property
    def d(self) -> int:
        return self.blocks.shape[1]

    @property
    def n_elements(self) -> int:
        return self.blocks.shape[0]


def _tangent_frame_edges(mesh: Mesh) -> np.ndarray:
    """Edge matrices of 3D-embedded triangles, expressed in tangent frames."""
    v = mesh.vertices
    el = mesh.elements
    u = v[el[:, 1]] - v[el[:, 0]]
    w = v[el[:, 2]] - v[el[:, 0]]
    n = np.cross(u, w)
    e1 = u / np.linalg.norm(u, axis=1, keepdims=True)
    e2 = np.cross(n, e1)
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    edges = np.empty((el.shape[0], 2, 2))
    edges[:, 0, 0] = np.einsum("ij,ij->i", u, e1)
    edges[:, 1, 0] = np.einsum("ij,ij->i", u, e2)
    edges[:, 0, 1] = np.einsum("ij,ij->i", w, e1)
    edges[:, 1, 1] = np.einsum("ij,ij->i", w, e2)
    return edges


def build_gradient_operator(mesh: Mesh) -> JacobianOperator:
    """Build the per-element gradient operator of a mesh.

    Returns
    -------
    JacobianOperator
        Applying it to the rest positions (or their tangent-frame
        coordinates for embedded surfaces) gives identity Jacobians;
        applying it to any constant map gives zero.
    """
    v = mesh.vertices
    el = mesh.elements
    m, d = el.shape[0], mesh.d
    if d == 2 and mesh.d_in == 3:
        edges = _tangent_frame_edges(mesh)
    else:
        edges = np.empty((m, d, d))
        for k in range(d):
            edges[:, :, k] = v[el[:, k + 1]] - v[el[:, 0]]
    inv = np.linalg.inv(edges)
    blocks = np.empty((m, d, d + 1))
    blocks[:, :, 1:] = np.transpose(inv, (0, 2, 1))
    blocks[:, :, 0] = -blocks[:, :, 1:].sum(axis=2)

    rows = np.repeat(np.arange(m * d), d + 1)
    cols = np.broadcast_to(el[:, None, :], (m, d, d + 1)).ravel()
    mat = sparse.csr_matrix(
        (blocks.ravel(), (rows, cols)), shape=(m * d, mesh.n_vertices)
    )
    mat.sum_duplicates()
    mat.sort_indices()
    mat_t = mat.T.tocsr()
    mat_t.sort_indices()
    blocks = blocks.copy()
    blocks.setflags(write=False)
    return JacobianOperator(
        blocks, mesh.elements, mesh.d_out, mesh.n_vertices, mat, mat_t
    )


def apply(op: JacobianOperator, w: np.ndarray) -> np.ndarray:
    """Evaluate all element Jacobians of the map ``w``.

    Parameters
    ----------
    op : JacobianOperator
    w : (n, d_out) array

    Returns
    -------
    (m, d_out, d) array
        ``out[i]`` is the Jacobian of ``w`` on element ``i``.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (op.n_vertices, op.d_out):
        raise ValueError(
            f"map must have shape ({op.n_vertices}, {op.d_out}), got {w.shape}"
        )
    m, d = op.blocks.shape[0], op.d
    stacked = (op.matrix @ w).reshape(m, d, op.d_out)
    return np.ascontiguousarray(stacked.transpose(0, 2, 1))


def apply_adjoint(op: JacobianOperator, r: np.ndarray) -> np.ndarray:
    """Adjoint of :func:`apply`: fold per-element matrices back onto vertices.

    Satisfies ``sum_i <(G w)_i, r_i> == <w, apply_adjoint(op, r)>`` for all
    ``w`` (Frobenius inner products, no element weighting).
    """
    r = np.asarray(r, dtype=np.float64)
    m, d = op.blocks.shape[0], op.d
    if r.shape != (m, op.d_out, d):
        raise ValueError(
            f"expected per-element matrices of shape ({m}, {op.d_out}, {d}),"
            f" got {r.shape}"
        )
    stacked = np.ascontiguousarray(r.transpose(0, 2, 1)).reshape(m * d, op.d_out)
    return op.matrix_t @ stacked


def assemble_weighted_laplacian(
    op: JacobianOperator, mu: np.ndarray
) -> sparse.csc_matrix:
    """Assemble ``L = sum_i mu_i G_i^T G_i`` as a sorted CSC matrix.

    ``L`` is symmetric positive semidefinite with zero row sums (constants
    lie in the kernel).  Assembly is deterministic: rebuilding with equal
    weights yields a bit-identical matrix.

    Raises
    ------
    ValueError
        If any weight is nonpositive or not finite.
    """
    mu = np.asarray(mu, dtype=np.float64)
    m, d = op.blocks.shape[0], op.d
    if mu.shape != (m,):
        raise ValueError(f"need one weight per element, got shape {mu.shape}")
    if not np.all(np.isfinite(mu)) or np.any(mu <= 0.0):
        bad = np.nonzero(~np.isfinite(mu) | (mu <= 0.0))[0]
        raise ValueError(f"weights must be positive and finite; element {bad[0]} is not")
    weighted = sparse.diags(np.repeat(mu, d)) @ op.matrix
    lap = (op.matrix_t @ weighted).tocsc()
    # enforce exact symmetry (sparse matmul may leave last-bit asymmetry)
    lap = ((lap + lap.T) * 0.5).tocsc()
    lap.sum_duplicates()
    lap.sort_indices()
    return lap
