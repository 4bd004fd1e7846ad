"""Parallel element loops over the scalar kernels (numba backend).

Each function maps a per-element nonlinear operation over stacked
``(m, d, d)`` arrays with ``prange``.  Only per-element writes happen
inside the parallel regions -- reductions are left to the caller so
results do not depend on thread count.

Energy kinds are encoded as integers: 0 = symmetric gradient flavour,
1 = symmetric distortion flavour, 2 = rotation-distance flavour.
"""

import math

import numpy as np
from numba import njit, prange

from . import scalar as sk


@njit(cache=True, parallel=True)
def polar_init(J, eps):
    m = J.shape[0]
    U = np.empty_like(J)
    P = np.empty_like(J)
    for e in prange(m):
        Ue, Pe = sk.polar_flip_aware(J[e], eps)
        U[e] = Ue
        P[e] = Pe
    return U, P


@njit(cache=True, parallel=True)
def u_step(J, Lam, P, U_prev, mu, h):
    m = J.shape[0]
    d = J.shape[1]
    U = np.empty_like(J)
    for e in prange(m):
        Q = np.empty((d, d))
        ratio = h[e] / mu[e]
        for i in range(d):
            for j in range(d):
                s = ratio * U_prev[e, i, j]
                for k in range(d):
                    s += (J[e, i, k] + Lam[e, i, k]) * P[e, k, j]
                Q[i, j] = s
        U[e] = sk.procrustes(Q, U_prev[e], True)
    return U


@njit(cache=True, parallel=True)
def p_step(kind, J, Lam, U, w, mu):
    m = J.shape[0]
    d = J.shape[1]
    P = np.empty_like(J)
    for e in prange(m):
        Q = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                s = 0.0
                for k in range(d):
                    s += U[e, k, i] * (J[e, k, j] + Lam[e, k, j])
                Q[i, j] = s
        Qs = sk.sym_part(Q)
        if kind == 0:
            P[e] = sk.p_step_sg(Qs, w[e], mu[e])
        else:
            P[e] = sk.p_step_sd(Qs, w[e], mu[e])
    return P


@njit(cache=True, parallel=True)
def grad_norms(kind, P):
    m = P.shape[0]
    out = np.empty(m)
    for e in prange(m):
        if kind == 0:
            G = sk.grad_sg_spd(P[e])
        else:
            G = sk.grad_sd_spd(P[e])
        out[e] = math.sqrt(sk.frob2(G))
    return out


@njit(cache=True, parallel=True)
def energy_density(kind, J):
    m = J.shape[0]
    vals = np.zeros(m)
    flipped = np.zeros(m, dtype=np.bool_)
    for e in prange(m):
        det = sk.det_small(J[e])
        if det <= 0.0:
            flipped[e] = True
        elif kind == 0:
            vals[e] = sk.f_sg_scalar(J[e])
        elif kind == 1:
            vals[e] = sk.f_sd_scalar(J[e])
        else:
            vals[e] = sk.f_arap_scalar(J[e])
    return vals, flipped


@njit(cache=True, parallel=True)
def f_spd(kind, P):
    m = P.shape[0]
    vals = np.empty(m)
    for e in prange(m):
        if kind == 0:
            vals[e] = sk.f_sg_scalar(P[e])
        else:
            vals[e] = sk.f_sd_scalar(P[e])
    return vals
