"""Per-element ADMM sub-solvers: P-step, proximal U-step, polar init.

These are the closed-form local solves the driver runs for every element in
every iteration.  This module is the validated single-element API; the
batched versions used in the hot loop live in :mod:`flipfree.kernels` and
are tested for parity against these.

The P-step solves ``w * grad_f(P) + mu * P = mu * Q`` over SPD matrices:
for the symmetric-gradient energy via a matrix quadratic formula, for
symmetric Dirichlet via one quartic per eigenvalue of ``Q``.  The U-step is
a Procrustes problem on ``(J + Lambda) P + (h/mu) U_prev``.
"""

from __future__ import annotations

import numpy as np

from .energies import EnergyKind
from .kernels import scalar
from .smallmat import _as_small_matrix

__all__ = ["p_step", "u_step", "procrustes", "polar_init", "eps_floor_for"]

_EPS = float(np.finfo(np.float64).eps)


def eps_floor_for(kind: EnergyKind) -> float:
    """Eigenvalue floor used when repairing flipped/degenerate elements.

    A tighter floor is safe for the symmetric-gradient energy; symmetric
    Dirichlet needs more clearance from zero because its gradient grows
    like the inverse cube.
    """
    kind = EnergyKind(kind)
    if kind is EnergyKind.SYMMETRIC_DIRICHLET:
        return _EPS ** 0.125
    return _EPS ** 0.25


def p_step(kind: EnergyKind, q, w: float, mu: float) -> np.ndarray:
    """Solve the local proximal problem ``w*grad_f(P) + mu*P = mu*Q``.

    Parameters
    ----------
    kind : EnergyKind
        A solvable energy (symmetric gradient or symmetric Dirichlet).
    q : (d, d) array
        Symmetric right-hand-side matrix.
    w, mu : float
        Element measure and penalty weight, both positive.

    Returns
    -------
    (d, d) array
        The unique SPD critical point, with residual
        ``||w*grad_f(P) + mu*P - mu*Q|| <= 1e-8 * (1 + mu*||Q||)``.
    """
    kind = EnergyKind(kind)
    if not kind.solvable:
        raise ValueError(f"{kind.name} has no closed-form local solve")
    q = _as_small_matrix(q, "Q")
    asym = np.abs(q - q.T).max()
    if asym > 1e-10 * max(1.0, np.abs(q).max()):
        raise ValueError("Q must be symmetric")
    if not (w > 0.0 and mu > 0.0):
        raise ValueError("w and mu must be positive")
    q = 0.5 * (q + q.T)
    if kind is EnergyKind.SYMMETRIC_GRADIENT:
        return scalar.p_step_sg(q, float(w), float(mu))
    return scalar.p_step_sd(q, float(w), float(mu))


def procrustes(q, u_prev=None) -> np.ndarray:
    """Rotation maximizing ``<U, Q>`` over SO(d).

    The 2D path is closed-form with no trigonometric calls.  When the
    optimum is not unique (``Q = 0``, or a 3D reflection with a repeated
    smallest singular value) the tie-break returns ``u_prev`` when given,
    identity otherwise.
    """
    q = _as_small_matrix(q, "Q")
    d = q.shape[0]
    if u_prev is None:
        return scalar.procrustes(q, np.eye(d), False)
    u_prev = _as_small_matrix(u_prev, "u_prev")
    if u_prev.shape != q.shape:
        raise ValueError("u_prev must match Q's shape")
    return scalar.procrustes(q, u_prev, True)


def u_step(j, lam, p, u_prev, mu: float, h: float) -> np.ndarray:
    """Proximal rotation update: Procrustes on ``(J + Lambda) P + (h/mu) U_prev``."""
    j = _as_small_matrix(j, "J")
    lam = _as_small_matrix(lam, "Lambda")
    p = _as_small_matrix(p, "P")
    u_prev = _as_small_matrix(u_prev, "u_prev")
    if not mu > 0.0:
        raise ValueError("mu must be positive")
    if h < 0.0:
        raise ValueError("h must be nonnegative")
    q = (j + lam) @ p + (h / mu) * u_prev
    return scalar.procrustes(q, u_prev, True)


def polar_init(j0: np.ndarray, kind: EnergyKind) -> tuple[np.ndarray, np.ndarray]:
    """Split initial Jacobians into rotations and floored SPD factors.

    Flipped elements get their rotation repaired (last column negated so
    ``det U = 1``) and their stretch reset to ``eps * I``; all eigenvalues
    are floored at the energy-specific ``eps`` from :func:`eps_floor_for`.

    Parameters
    ----------
    j0 : (m, d, d) array
        Initial Jacobians, flips allowed.
    kind : EnergyKind
        Energy being optimized (selects the floor).

    Returns
    -------
    (u0, p0) : pair of (m, d, d) arrays
    """
    from .kernels import batch

    j0 = np.ascontiguousarray(np.asarray(j0, dtype=np.float64))
    if j0.ndim == 2:
        j0 = j0[None]
    if j0.ndim != 3 or j0.shape[1] != j0.shape[2] or j0.shape[1] not in (2, 3):
        raise ValueError(f"expected (m, d, d) Jacobians with d in 2/3, got {j0.shape}")
    if not np.all(np.isfinite(j0)):
        raise ValueError("Jacobians must be finite")
    return batch.polar_init(j0, eps_floor_for(kind))
