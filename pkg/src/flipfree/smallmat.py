"""Validated closed-form factorisations for 2x2 and 3x3 matrices.

Thin safety layer over :mod:`flipfree.kernels.scalar`: each function
checks its preconditions, raising ``ValueError`` on violations, then
defers to the unchecked kernel.  The kernels avoid iterative LAPACK
paths on purpose -- the same code runs inside the compiled element
loops, and the closed forms keep per-call cost flat.
"""

import numpy as np

from .kernels import scalar as _sk

__all__ = [
    "sym_eig",
    "svd",
    "polar_flip_aware",
    "sqrt_spd",
    "quartic_unique_positive",
]


def _as_small_matrix(A, name):
    A = np.ascontiguousarray(A, dtype=np.float64)
    if A.shape != (2, 2) and A.shape != (3, 3):
        raise ValueError(
            "%s must have shape (2, 2) or (3, 3), got %r" % (name, (A.shape,))
        )
    if not np.isfinite(A).all():
        raise ValueError("%s contains non-finite entries" % name)
    return A


def sym_eig(S):
    """Eigendecomposition of a symmetric 2x2 or 3x3 matrix.

    Parameters
    ----------
    S : array_like, shape (d, d)
        Symmetric matrix; relative asymmetry above 1e-10 is rejected.

    Returns
    -------
    w : ndarray, shape (d,)
        Eigenvalues in ascending order.
    V : ndarray, shape (d, d)
        Orthonormal eigenvectors as columns, ``S = V @ diag(w) @ V.T``.
    """
    S = _as_small_matrix(S, "S")
    nrm = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > 1e-10 * max(nrm, 1e-300):
        raise ValueError("S is not symmetric (relative asymmetry above 1e-10)")
    return _sk.sym_eig_small(S)


def svd(A):
    """Singular value decomposition ``A = R1 @ diag(sig) @ R2.T``.

    ``R1`` and ``R2`` are orthogonal (not necessarily rotations) and
    ``sig`` is nonnegative, nonincreasing.
    """
    A = _as_small_matrix(A, "A")
    return _sk.svd_small(A)


def polar_flip_aware(A, eps_floor):
    """Rotation/SPD split ``A ~ U @ P`` that repairs inverted inputs.

    For ``det(A) > 0`` this is the polar decomposition with the stretch
    spectrum floored at ``eps_floor``; for ``det(A) <= 0`` the rotation
    is moved to the closer proper branch and the stretch collapses to
    ``eps_floor * I``, so the result is always a rotation times an SPD
    matrix.
    """
    A = _as_small_matrix(A, "A")
    eps_floor = float(eps_floor)
    if not np.isfinite(eps_floor) or eps_floor <= 0.0:
        raise ValueError("eps_floor must be a positive finite float")
    return _sk.polar_flip_aware(A, eps_floor)


def sqrt_spd(S):
    """Principal square root of a symmetric positive definite matrix."""
    S = _as_small_matrix(S, "S")
    nrm = np.linalg.norm(S)
    if np.linalg.norm(S - S.T) > 1e-12 * max(nrm, 1e-300):
        raise ValueError("S is not symmetric (relative asymmetry above 1e-12)")
    # Sylvester criterion on the symmetrised input
    Ss = 0.5 * (S + S.T)
    d = Ss.shape[0]
    minors_ok = Ss[0, 0] > 0.0 and np.linalg.det(Ss[:2, :2]) > 0.0
    if d == 3:
        minors_ok = minors_ok and np.linalg.det(Ss) > 0.0
    if not minors_ok:
        raise ValueError("S is not positive definite")
    return _sk.sqrt_spd_small(Ss)


def quartic_unique_positive(c4, c3, c0):
    """The unique positive root of ``c4*x**4 + c3*x**3 + c0``.

    Requires ``c4 > 0`` and ``c0 < 0`` (one sign change, hence exactly
    one positive root).  The root is polished until the residual is
    below ``1e-10 * (c4*x^4 + |c3|*x^3 + |c0|)``.
    """
    c4 = float(c4)
    c3 = float(c3)
    c0 = float(c0)
    if not (np.isfinite(c4) and np.isfinite(c3) and np.isfinite(c0)):
        raise ValueError("coefficients must be finite")
    if c4 <= 0.0:
        raise ValueError("c4 must be positive")
    if c0 >= 0.0:
        raise ValueError("c0 must be negative")
    return float(_sk.quartic_unique_positive(c4, c3, c0))
