"""Vectorised pure-NumPy batch kernels (fallback backend).

Same signatures and semantics as :mod:`flipfree.kernels.batch_numba`;
2x2 paths use the closed forms directly, 3x3 paths lean on the batched
``np.linalg`` decompositions.
"""

import numpy as np

EPS = 2.220446049250313e-16
SQRT_EPS = 1.4901161193847656e-08


def _frob2(A):
    return np.einsum("mij,mij->m", A, A)


def _dets(A):
    if A.shape[1] == 2:
        return A[:, 0, 0] * A[:, 1, 1] - A[:, 0, 1] * A[:, 1, 0]
    return (
        A[:, 0, 0] * (A[:, 1, 1] * A[:, 2, 2] - A[:, 1, 2] * A[:, 2, 1])
        - A[:, 0, 1] * (A[:, 1, 0] * A[:, 2, 2] - A[:, 1, 2] * A[:, 2, 0])
        + A[:, 0, 2] * (A[:, 1, 0] * A[:, 2, 1] - A[:, 1, 1] * A[:, 2, 0])
    )


def _sym(A):
    return 0.5 * (A + A.transpose(0, 2, 1))


def _assemble(V, w):
    """V @ diag(w) @ V.T batched (V columns orthonormal)."""
    return np.einsum("mik,mk,mjk->mij", V, w, V)


def _rotations_from_svd(Q):
    """Closest rotations to Q (batched), via SVD with determinant fix."""
    U, s, Vh = np.linalg.svd(Q)
    R = U @ Vh
    neg = _dets(R) < 0.0
    if np.any(neg):
        U = U.copy()
        U[neg, :, -1] = -U[neg, :, -1]
        R[neg] = U[neg] @ Vh[neg]
    return R


def _procrustes_batch(Q, U_prev):
    d = Q.shape[1]
    if d == 2:
        a = Q[:, 0, 0] + Q[:, 1, 1]
        b = Q[:, 1, 0] - Q[:, 0, 1]
        n = np.hypot(a, b)
        zero = n == 0.0
        n_safe = np.where(zero, 1.0, n)
        c = a / n_safe
        s = b / n_safe
        U = np.empty_like(Q)
        U[:, 0, 0] = c
        U[:, 0, 1] = -s
        U[:, 1, 0] = s
        U[:, 1, 1] = c
    else:
        U = _rotations_from_svd(Q)
        zero = _frob2(Q) == 0.0
    if np.any(zero):
        U[zero] = U_prev[zero]
    return U


def polar_init(J, eps):
    d = J.shape[1]
    R1, s, Vh = np.linalg.svd(J)
    U = R1 @ Vh
    neg = _dets(U) < 0.0
    if np.any(neg):
        U[neg, :, d - 1] = -U[neg, :, d - 1]
    sig = np.maximum(s, eps)
    if np.any(neg):
        sig[neg] = eps
    V = Vh.transpose(0, 2, 1)
    return U, _assemble(V, sig)


def u_step(J, Lam, P, U_prev, mu, h):
    Q = (J + Lam) @ P + (h / mu)[:, None, None] * U_prev
    return _procrustes_batch(Q, U_prev)


def _sqrt_spd_batch(M):
    d = M.shape[1]
    if d == 2:
        S = _sym(M)
        b = S[:, 0, 1]
        det = np.maximum(S[:, 0, 0] * S[:, 1, 1] - b * b, 0.0)
        sdet = np.sqrt(det)
        tr = S[:, 0, 0] + S[:, 1, 1]
        disc = tr + 2.0 * sdet
        bad = disc < SQRT_EPS
        den = np.sqrt(np.where(bad, 1.0, disc))
        R = np.empty_like(S)
        R[:, 0, 0] = (S[:, 0, 0] + sdet) / den
        R[:, 1, 1] = (S[:, 1, 1] + sdet) / den
        R[:, 0, 1] = b / den
        R[:, 1, 0] = b / den
        if np.any(bad):
            w, V = np.linalg.eigh(S[bad])
            R[bad] = _assemble(V, np.sqrt(np.maximum(w, 0.0)))
        return R
    w, V = np.linalg.eigh(_sym(M))
    return _assemble(V, np.sqrt(np.maximum(w, 0.0)))


def _spd_floor_batch(P, floor):
    d = P.shape[1]
    offsum = np.abs(P).sum(axis=2) - np.abs(np.diagonal(P, axis1=1, axis2=2))
    gmin = (np.diagonal(P, axis1=1, axis2=2) - offsum).min(axis=1)
    bad = gmin < floor
    if np.any(bad):
        w, V = np.linalg.eigh(P[bad])
        P = P.copy()
        P[bad] = _assemble(V, np.maximum(w, floor))
    return P


def _quartic_pos_batch(c4, c3, c0):
    """Unique positive roots of c4 x^4 + c3 x^3 + c0, elementwise."""
    a = c3 / c4
    d0 = c0 / c4
    abs_a = np.abs(a)
    abs_d = np.abs(d0)
    lo = np.maximum(0.5 * np.minimum(1.0, abs_d / (1.0 + abs_a)), 1e-300)
    hi = 2.0 * (1.0 + np.maximum(abs_a, abs_d))
    x = np.sqrt(lo * hi)
    done = np.zeros(x.shape, dtype=bool)
    for _ in range(200):
        f = ((x + a) * x * x) * x + d0
        scale = ((x + abs_a) * x * x) * x + abs_d
        done |= np.abs(f) <= 1e-12 * scale
        if done.all():
            break
        hi = np.where(~done & (f > 0.0), x, hi)
        lo = np.where(~done & (f <= 0.0), x, lo)
        df = (4.0 * x + 3.0 * a) * x * x
        with np.errstate(divide="ignore", invalid="ignore"):
            xn = x - f / df
        bad = ~np.isfinite(xn) | (xn <= lo) | (xn >= hi)
        xn = np.where(bad, 0.5 * (lo + hi), xn)
        x = np.where(done, x, xn)
    return x


def p_step(kind, J, Lam, U, w, mu):
    d = J.shape[1]
    Q = _sym(np.einsum("mki,mkj->mij", U, J + Lam))
    if kind == 0:
        c = 4.0 * w * (w + mu)
        denom = 2.0 * (w + mu)
        nq2 = _frob2(Q)
        series = nq2 < SQRT_EPS
        P = np.empty_like(Q)
        if np.any(~series):
            idx = ~series
            qw, V = np.linalg.eigh(Q[idx])
            mue = mu[idx][:, None]
            s = np.sqrt(mue * mue * qw * qw + c[idx][:, None])
            # conjugate form on the negative branch avoids cancellation
            lam = np.where(
                qw >= 0.0,
                (mue * qw + s) / denom[idx][:, None],
                2.0 * w[idx][:, None] / (s - mue * qw),
            )
            P[idx] = _assemble(V, np.maximum(lam, SQRT_EPS))
        if np.any(series):
            idx = series
            sc = np.sqrt(c[idx])
            Ps = mu[idx, None, None] * Q[idx]
            Ps += (mu[idx] ** 2 / (2.0 * sc))[:, None, None] * (Q[idx] @ Q[idx])
            Ps[:, range(d), range(d)] += sc[:, None]
            P[idx] = _spd_floor_batch(_sym(Ps / denom[idx, None, None]), SQRT_EPS)
        return P
    qw, V = np.linalg.eigh(Q)
    m = Q.shape[0]
    c4 = np.repeat(w + mu, d)
    c3 = (-mu[:, None] * qw).ravel()
    c0 = np.repeat(-w, d)
    lam = _quartic_pos_batch(c4, c3, c0).reshape(m, d)
    return _assemble(V, np.maximum(lam, SQRT_EPS))


def grad_norms(kind, P):
    Pi = np.linalg.inv(P)
    if kind == 0:
        G = P - Pi
    else:
        G = P - Pi @ Pi @ Pi
    return np.sqrt(_frob2(G))


def energy_density(kind, J):
    m = J.shape[0]
    det = _dets(J)
    flipped = det <= 0.0
    vals = np.zeros(m)
    ok = ~flipped
    if np.any(ok):
        Jok = J[ok]
        if kind == 0:
            vals[ok] = 0.5 * _frob2(Jok) - np.log(det[ok])
        elif kind == 1:
            Ji = np.linalg.inv(Jok)
            vals[ok] = 0.5 * (_frob2(Jok) + _frob2(Ji))
        else:
            R = _rotations_from_svd(Jok)
            vals[ok] = 0.5 * _frob2(Jok - R)
    return vals, flipped


def f_spd(kind, P):
    if kind == 0:
        return 0.5 * _frob2(P) - np.log(_dets(P))
    Pi = np.linalg.inv(P)
    return 0.5 * (_frob2(P) + _frob2(Pi))
