"""Closed-form per-element numerics for 2x2 and 3x3 matrices.

Everything in this module is written so ``numba.njit`` can compile it
(no Python objects, no exceptions, explicit loops instead of fancy
indexing).  When numba is disabled the same functions run as plain
Python; the public wrappers in :mod:`flipfree.smallmat` add input
validation on top.

Conventions
-----------
* ``sym_eig_*`` returns eigenvalues ascending, eigenvectors as columns.
* ``svd_*`` returns ``(R1, sig, R2)`` with ``A = R1 @ diag(sig) @ R2.T``
  and singular values nonnegative, nonincreasing.
* All matrices are float64 C-contiguous arrays.
"""

import math

import numpy as np

from ._jit import njit

EPS = 2.220446049250313e-16
SQRT_EPS = 1.4901161193847656e-08  # sqrt(EPS)


# ---------------------------------------------------------------------------
# small-matrix helpers
# ---------------------------------------------------------------------------


@njit(cache=True)
def det_small(A):
    if A.shape[0] == 2:
        return A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
    return (
        A[0, 0] * (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1])
        - A[0, 1] * (A[1, 0] * A[2, 2] - A[1, 2] * A[2, 0])
        + A[0, 2] * (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0])
    )


@njit(cache=True)
def frob2(A):
    n = A.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(A.shape[1]):
            s += A[i, j] * A[i, j]
    return s


@njit(cache=True)
def mat_mul(A, B):
    n = A.shape[0]
    m = B.shape[1]
    k = A.shape[1]
    C = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += A[i, l] * B[l, j]
            C[i, j] = s
    return C


@njit(cache=True)
def mat_mul_tn(A, B):
    """A.T @ B without materialising the transpose."""
    n = A.shape[1]
    m = B.shape[1]
    k = A.shape[0]
    C = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += A[l, i] * B[l, j]
            C[i, j] = s
    return C


@njit(cache=True)
def mat_mul_nt(A, B):
    """A @ B.T without materialising the transpose."""
    n = A.shape[0]
    m = B.shape[0]
    k = A.shape[1]
    C = np.empty((n, m))
    for i in range(n):
        for j in range(m):
            s = 0.0
            for l in range(k):
                s += A[i, l] * B[j, l]
            C[i, j] = s
    return C


@njit(cache=True)
def sym_part(A):
    n = A.shape[0]
    S = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            S[i, j] = 0.5 * (A[i, j] + A[j, i])
    return S


@njit(cache=True)
def inv_small(A):
    n = A.shape[0]
    Ai = np.empty((n, n))
    if n == 2:
        det = A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]
        Ai[0, 0] = A[1, 1] / det
        Ai[0, 1] = -A[0, 1] / det
        Ai[1, 0] = -A[1, 0] / det
        Ai[1, 1] = A[0, 0] / det
        return Ai
    det = det_small(A)
    Ai[0, 0] = (A[1, 1] * A[2, 2] - A[1, 2] * A[2, 1]) / det
    Ai[0, 1] = (A[0, 2] * A[2, 1] - A[0, 1] * A[2, 2]) / det
    Ai[0, 2] = (A[0, 1] * A[1, 2] - A[0, 2] * A[1, 1]) / det
    Ai[1, 0] = (A[1, 2] * A[2, 0] - A[1, 0] * A[2, 2]) / det
    Ai[1, 1] = (A[0, 0] * A[2, 2] - A[0, 2] * A[2, 0]) / det
    Ai[1, 2] = (A[0, 2] * A[1, 0] - A[0, 0] * A[1, 2]) / det
    Ai[2, 0] = (A[1, 0] * A[2, 1] - A[1, 1] * A[2, 0]) / det
    Ai[2, 1] = (A[0, 1] * A[2, 0] - A[0, 0] * A[2, 1]) / det
    Ai[2, 2] = (A[0, 0] * A[1, 1] - A[0, 1] * A[1, 0]) / det
    return Ai


# ---------------------------------------------------------------------------
# symmetric eigendecomposition
# ---------------------------------------------------------------------------


@njit(cache=True)
def sym_eig_2(S):
    a = S[0, 0]
    b = 0.5 * (S[0, 1] + S[1, 0])
    c = S[1, 1]
    half_tr = 0.5 * (a + c)
    h = math.hypot(0.5 * (a - c), b)
    w = np.empty(2)
    w[0] = half_tr - h
    w[1] = half_tr + h
    V = np.empty((2, 2))
    if h == 0.0:
        V[0, 0] = 1.0
        V[0, 1] = 0.0
        V[1, 0] = 0.0
        V[1, 1] = 1.0
        return w, V
    # eigenvector of the larger eigenvalue is (cos t, sin t)
    t = 0.5 * math.atan2(2.0 * b, a - c)
    ct = math.cos(t)
    st = math.sin(t)
    V[0, 0] = -st
    V[1, 0] = ct
    V[0, 1] = ct
    V[1, 1] = st
    return w, V


@njit(cache=True)
def sym_eig_3(S):
    A = sym_part(S)
    V = np.eye(3)
    nrm = math.sqrt(frob2(A))
    if nrm == 0.0:
        return np.zeros(3), V
    for _sweep in range(30):
        off = math.sqrt(
            A[0, 1] * A[0, 1] + A[0, 2] * A[0, 2] + A[1, 2] * A[1, 2]
        )
        if off <= 1e-14 * nrm:
            break
        for p in range(2):
            for q in range(p + 1, 3):
                apq = A[p, q]
                if apq == 0.0:
                    continue
                theta = 0.5 * (A[q, q] - A[p, p]) / apq
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                A[p, p] -= t * apq
                A[q, q] += t * apq
                A[p, q] = 0.0
                A[q, p] = 0.0
                for r in range(3):
                    if r != p and r != q:
                        arp = A[r, p]
                        arq = A[r, q]
                        A[r, p] = c * arp - s * arq
                        A[p, r] = A[r, p]
                        A[r, q] = s * arp + c * arq
                        A[q, r] = A[r, q]
                for r in range(3):
                    vrp = V[r, p]
                    vrq = V[r, q]
                    V[r, p] = c * vrp - s * vrq
                    V[r, q] = s * vrp + c * vrq
    w = np.empty(3)
    w[0] = A[0, 0]
    w[1] = A[1, 1]
    w[2] = A[2, 2]
    # insertion sort ascending, permuting columns of V along
    for i in range(1, 3):
        wi = w[i]
        v0 = V[0, i]
        v1 = V[1, i]
        v2 = V[2, i]
        j = i - 1
        while j >= 0 and w[j] > wi:
            w[j + 1] = w[j]
            V[0, j + 1] = V[0, j]
            V[1, j + 1] = V[1, j]
            V[2, j + 1] = V[2, j]
            j -= 1
        w[j + 1] = wi
        V[0, j + 1] = v0
        V[1, j + 1] = v1
        V[2, j + 1] = v2
    return w, V


@njit(cache=True)
def sym_eig_small(S):
    if S.shape[0] == 2:
        return sym_eig_2(S)
    return sym_eig_3(S)


@njit(cache=True)
def eig_reassemble(w, V):
    """V @ diag(w) @ V.T for column-eigenvector V."""
    n = V.shape[0]
    P = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            s = 0.0
            for k in range(n):
                s += V[i, k] * w[k] * V[j, k]
            P[i, j] = s
            P[j, i] = s
    return P


# ---------------------------------------------------------------------------
# singular value decomposition
# ---------------------------------------------------------------------------


@njit(cache=True)
def svd_2(A):
    # rotation-angle form: A = R(g) @ diag(sx, sy) @ R(b), sx >= |sy|
    e = 0.5 * (A[0, 0] + A[1, 1])
    f = 0.5 * (A[0, 0] - A[1, 1])
    g = 0.5 * (A[1, 0] + A[0, 1])
    h = 0.5 * (A[1, 0] - A[0, 1])
    q = math.hypot(e, h)
    r = math.hypot(f, g)
    sx = q + r
    sy = q - r
    a1 = math.atan2(g, f)
    a2 = math.atan2(h, e)
    beta = 0.5 * (a2 - a1)
    gamma = 0.5 * (a2 + a1)
    cg = math.cos(gamma)
    sg = math.sin(gamma)
    cb = math.cos(beta)
    sb = math.sin(beta)
    R1 = np.empty((2, 2))
    R1[0, 0] = cg
    R1[0, 1] = -sg
    R1[1, 0] = sg
    R1[1, 1] = cg
    # R2 = R(b).T
    R2 = np.empty((2, 2))
    R2[0, 0] = cb
    R2[0, 1] = sb
    R2[1, 0] = -sb
    R2[1, 1] = cb
    sig = np.empty(2)
    sig[0] = sx
    if sy < 0.0:
        sig[1] = -sy
        R1[0, 1] = -R1[0, 1]
        R1[1, 1] = -R1[1, 1]
    else:
        sig[1] = sy
    return R1, sig, R2


@njit(cache=True)
def svd_3(A):
    # one-sided Jacobi: orthogonalise the columns of B = A @ V
    B = A.copy()
    V = np.eye(3)
    for _sweep in range(60):
        rotated = False
        for p in range(2):
            for q in range(p + 1, 3):
                app = 0.0
                aqq = 0.0
                apq = 0.0
                for r in range(3):
                    app += B[r, p] * B[r, p]
                    aqq += B[r, q] * B[r, q]
                    apq += B[r, p] * B[r, q]
                if apq == 0.0 or abs(apq) <= 1e-15 * math.sqrt(app * aqq):
                    continue
                theta = 0.5 * (aqq - app) / apq
                if theta >= 0.0:
                    t = 1.0 / (theta + math.sqrt(1.0 + theta * theta))
                else:
                    t = -1.0 / (-theta + math.sqrt(1.0 + theta * theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                for r in range(3):
                    brp = B[r, p]
                    brq = B[r, q]
                    B[r, p] = c * brp - s * brq
                    B[r, q] = s * brp + c * brq
                    vrp = V[r, p]
                    vrq = V[r, q]
                    V[r, p] = c * vrp - s * vrq
                    V[r, q] = s * vrp + c * vrq
                rotated = True
        if not rotated:
            break
    sig = np.empty(3)
    for j in range(3):
        sig[j] = math.sqrt(B[0, j] ** 2 + B[1, j] ** 2 + B[2, j] ** 2)
    # sort descending (selection sort over 3 columns)
    for i in range(2):
        k = i
        for j in range(i + 1, 3):
            if sig[j] > sig[k]:
                k = j
        if k != i:
            sig[i], sig[k] = sig[k], sig[i]
            for r in range(3):
                B[r, i], B[r, k] = B[r, k], B[r, i]
                V[r, i], V[r, k] = V[r, k], V[r, i]
    U = np.eye(3)
    if sig[0] > 0.0:
        tol = sig[0] * 1e-13
        for j in range(3):
            if sig[j] > tol:
                # Gram-Schmidt against previous columns, then normalise
                u0 = B[0, j]
                u1 = B[1, j]
                u2 = B[2, j]
                for k in range(j):
                    d = u0 * U[0, k] + u1 * U[1, k] + u2 * U[2, k]
                    u0 -= d * U[0, k]
                    u1 -= d * U[1, k]
                    u2 -= d * U[2, k]
                nn = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
                U[0, j] = u0 / nn
                U[1, j] = u1 / nn
                U[2, j] = u2 / nn
            elif j == 1:
                # complete orthonormally: axis least aligned with U[:,0]
                k = 0
                if abs(U[1, 0]) < abs(U[k, 0]):
                    k = 1
                if abs(U[2, 0]) < abs(U[k, 0]):
                    k = 2
                u0 = -U[k, 0] * U[0, 0]
                u1 = -U[k, 0] * U[1, 0]
                u2 = -U[k, 0] * U[2, 0]
                if k == 0:
                    u0 += 1.0
                elif k == 1:
                    u1 += 1.0
                else:
                    u2 += 1.0
                nn = math.sqrt(u0 * u0 + u1 * u1 + u2 * u2)
                U[0, 1] = u0 / nn
                U[1, 1] = u1 / nn
                U[2, 1] = u2 / nn
            else:  # j == 2
                U[0, 2] = U[1, 0] * U[2, 1] - U[2, 0] * U[1, 1]
                U[1, 2] = U[2, 0] * U[0, 1] - U[0, 0] * U[2, 1]
                U[2, 2] = U[0, 0] * U[1, 1] - U[1, 0] * U[0, 1]
    return U, sig, V


@njit(cache=True)
def svd_small(A):
    if A.shape[0] == 2:
        return svd_2(A)
    return svd_3(A)


# ---------------------------------------------------------------------------
# rotation fitting and flip-aware polar factors
# ---------------------------------------------------------------------------


@njit(cache=True)
def procrustes_2(Q, U_prev, has_prev):
    """Rotation maximising <U, Q>, trig-free."""
    a = Q[0, 0] + Q[1, 1]
    b = Q[1, 0] - Q[0, 1]
    n = math.hypot(a, b)
    U = np.empty((2, 2))
    if n == 0.0:
        if has_prev:
            return U_prev.copy()
        return np.eye(2)
    c = a / n
    s = b / n
    U[0, 0] = c
    U[0, 1] = -s
    U[1, 0] = s
    U[1, 1] = c
    return U


@njit(cache=True)
def procrustes_3(Q, U_prev, has_prev):
    if frob2(Q) == 0.0:
        if has_prev:
            return U_prev.copy()
        return np.eye(3)
    R1, sig, R2 = svd_3(Q)
    d1 = det_small(R1)
    d2 = det_small(R2)
    if d1 * d2 < 0.0:
        # flipping the column of the smallest singular value costs least
        R1[0, 2] = -R1[0, 2]
        R1[1, 2] = -R1[1, 2]
        R1[2, 2] = -R1[2, 2]
    return mat_mul_nt(R1, R2)


@njit(cache=True)
def procrustes(Q, U_prev, has_prev):
    if Q.shape[0] == 2:
        return procrustes_2(Q, U_prev, has_prev)
    return procrustes_3(Q, U_prev, has_prev)


@njit(cache=True)
def polar_flip_aware(A, eps_floor):
    """Rotation/SPD split ``A ~ U @ P`` that repairs inverted elements.

    For an orientation-preserving ``A`` this is the polar decomposition
    with the stretch eigenvalues floored at ``eps_floor``.  When
    ``det(A) < 0`` the rotation is taken on the closer proper branch and
    the stretch collapses to ``eps_floor * I``.
    """
    d = A.shape[0]
    R1, sig, R2 = svd_small(A)
    U = mat_mul_nt(R1, R2)
    sf = np.empty(d)
    if det_small(U) < 0.0:
        for i in range(d):
            U[i, d - 1] = -U[i, d - 1]
        for j in range(d):
            sf[j] = eps_floor
    else:
        for j in range(d):
            sf[j] = sig[j] if sig[j] > eps_floor else eps_floor
    P = eig_reassemble(sf, R2)
    return U, P


# ---------------------------------------------------------------------------
# SPD square root (invariant-based closed forms)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _sqrt_spd_eig(S):
    w, V = sym_eig_small(S)
    for i in range(w.shape[0]):
        w[i] = math.sqrt(w[i]) if w[i] > 0.0 else 0.0
    return eig_reassemble(w, V)


@njit(cache=True)
def sqrt_spd_2(S):
    det = S[0, 0] * S[1, 1] - 0.25 * (S[0, 1] + S[1, 0]) ** 2
    if det < 0.0:
        det = 0.0
    tr = S[0, 0] + S[1, 1]
    sdet = math.sqrt(det)
    disc = tr + 2.0 * sdet
    if disc < SQRT_EPS:
        return _sqrt_spd_eig(S)
    den = math.sqrt(disc)
    R = np.empty((2, 2))
    b = 0.5 * (S[0, 1] + S[1, 0])
    R[0, 0] = (S[0, 0] + sdet) / den
    R[0, 1] = b / den
    R[1, 0] = b / den
    R[1, 1] = (S[1, 1] + sdet) / den
    return R


@njit(cache=True)
def sqrt_spd_3(S):
    A = sym_part(S)
    i_a = A[0, 0] + A[1, 1] + A[2, 2]
    if i_a <= 0.0:
        return _sqrt_spd_eig(A)
    # cancellation-free spread invariant k = I^2 - 3 II
    k = 0.5 * (
        (A[0, 0] - A[1, 1]) ** 2
        + (A[1, 1] - A[2, 2]) ** 2
        + (A[2, 2] - A[0, 0]) ** 2
    ) + 3.0 * (A[0, 1] ** 2 + A[0, 2] ** 2 + A[1, 2] ** 2)
    c = i_a / 3.0
    kappa = k / (c * c)
    if kappa <= 0.01:
        # near-scalar spectrum: the closed form's own limit, as a
        # binomial series in the deviator X = A/c - I (|X|_F <= 0.082)
        X = np.empty((3, 3))
        for i in range(3):
            for j in range(3):
                X[i, j] = A[i, j] / c
            X[i, i] -= 1.0
        R = np.eye(3)
        T = X.copy()
        coef = 1.0
        for n in range(1, 9):
            coef *= (1.5 - n) / n
            if n > 1:
                T = mat_mul(T, X)
            for i in range(3):
                for j in range(3):
                    R[i, j] += coef * T[i, j]
        sc = math.sqrt(c)
        for i in range(3):
            for j in range(3):
                R[i, j] *= sc
        return R
    if kappa < 0.1:
        # middle band: trig intermediates lose digits, eigensolve instead
        return _sqrt_spd_eig(A)
    A2 = mat_mul(A, A)
    tr2 = A2[0, 0] + A2[1, 1] + A2[2, 2]
    ii_a = 0.5 * (i_a * i_a - tr2)
    iii_a = det_small(A)
    l = i_a * (i_a * i_a - 4.5 * ii_a) + 13.5 * iii_a
    arg = l / (k * math.sqrt(k))
    if abs(arg) > 1.0 - 1e-3:
        # clustered pair: acos argument too close to +-1 to trust
        return _sqrt_spd_eig(A)
    phi = math.acos(arg)
    lam2 = (i_a + 2.0 * math.sqrt(k) * math.cos(phi / 3.0)) / 3.0
    lam = math.sqrt(lam2) if lam2 > 0.0 else 0.0
    if lam == 0.0:
        return _sqrt_spd_eig(A)
    iii_u = math.sqrt(iii_a) if iii_a > 0.0 else 0.0
    rad = i_a - lam2 + 2.0 * iii_u / lam
    i_u = lam + (math.sqrt(rad) if rad > 0.0 else 0.0)
    ii_u = 0.5 * (i_u * i_u - i_a)
    den = i_u * ii_u - iii_u
    if den < SQRT_EPS:
        return _sqrt_spd_eig(A)
    c1 = (i_u * i_u - ii_u) / den
    c0 = i_u * iii_u / den
    R = np.empty((3, 3))
    for i in range(3):
        for j in range(3):
            R[i, j] = c1 * A[i, j] - A2[i, j] / den
        R[i, i] += c0
    return R


@njit(cache=True)
def sqrt_spd_small(S):
    if S.shape[0] == 2:
        return sqrt_spd_2(S)
    return sqrt_spd_3(S)


# ---------------------------------------------------------------------------
# polynomial roots
# ---------------------------------------------------------------------------


@njit(cache=True)
def _cbrt(x):
    if x >= 0.0:
        return x ** (1.0 / 3.0)
    return -((-x) ** (1.0 / 3.0))


@njit(cache=True)
def _cubic_largest_root(b2, b1, b0):
    """Largest real root of t^3 + b2 t^2 + b1 t + b0."""
    p = b1 - b2 * b2 / 3.0
    q = 2.0 * b2 * b2 * b2 / 27.0 - b2 * b1 / 3.0 + b0
    disc = 0.25 * q * q + p * p * p / 27.0
    if disc > 0.0:
        sq = math.sqrt(disc)
        s = _cbrt(-0.5 * q + sq) + _cbrt(-0.5 * q - sq)
    elif p < 0.0:
        m = 2.0 * math.sqrt(-p / 3.0)
        arg = 3.0 * q / (p * m)
        if arg > 1.0:
            arg = 1.0
        elif arg < -1.0:
            arg = -1.0
        s = m * math.cos(math.acos(arg) / 3.0)
    else:
        s = 0.0
    t = s - b2 / 3.0
    # one Newton step to tighten the closed form
    f = ((t + b2) * t + b1) * t + b0
    df = (3.0 * t + 2.0 * b2) * t + b1
    if df != 0.0:
        t -= f / df
    return t


@njit(cache=True)
def quartic_unique_positive(c4, c3, c0):
    """The unique positive root of c4 x^4 + c3 x^3 + c0 (c4 > 0 > c0).

    Descartes gives exactly one sign change, so one positive root.  A
    Ferrari resolvent seeds a bracketed Newton iteration; the bracket
    alone already guarantees convergence, the seed just makes it fast.
    """
    a = c3 / c4
    d0 = c0 / c4  # negative
    abs_a = abs(a)
    abs_d = abs(d0)

    # p(x) = x^4 + a x^3 + d0 is negative on (0, lo] and positive at hi
    lo = 0.5 * min(1.0, abs_d / (1.0 + abs_a))
    if lo <= 0.0:
        lo = 1e-300
    hi = 2.0 * (1.0 + max(abs_a, abs_d))
    flo = ((lo + a) * lo * lo) * lo + d0
    n_grow = 0
    while flo >= 0.0 and n_grow < 60:
        lo *= 0.5
        flo = ((lo + a) * lo * lo) * lo + d0
        n_grow += 1
    fhi = ((hi + a) * hi * hi) * hi + d0
    n_grow = 0
    while fhi <= 0.0 and n_grow < 60:
        hi *= 2.0
        fhi = ((hi + a) * hi * hi) * hi + d0
        n_grow += 1

    # Ferrari: depress with x = y - a/4, split into two quadratics
    p = -0.375 * a * a
    q = 0.125 * a * a * a
    r = -3.0 * a * a * a * a / 256.0 + d0
    x = -1.0
    best = np.inf
    t = _cubic_largest_root(p, 0.25 * p * p - r, -0.125 * q * q)
    if t < 0.0:
        t = 0.0
    s2t = math.sqrt(2.0 * t)
    if s2t > 1e-150:
        qq = q / (2.0 * s2t)
        for branch in range(2):
            if branch == 0:
                bq = -s2t
                cq = 0.5 * p + t + qq
            else:
                bq = s2t
                cq = 0.5 * p + t - qq
            disc = bq * bq - 4.0 * cq
            if disc < 0.0:
                continue
            sq = math.sqrt(disc)
            for sgn in range(2):
                y = 0.5 * (-bq + sq) if sgn == 0 else 0.5 * (-bq - sq)
                cand = y - 0.25 * a
                if cand > 0.0:
                    fc = abs(((cand + a) * cand * cand) * cand + d0)
                    if fc < best:
                        best = fc
                        x = cand
    else:
        # q ~ 0: biquadratic y^4 + p y^2 + r = 0
        disc = p * p - 4.0 * r
        if disc >= 0.0:
            sq = math.sqrt(disc)
            for sgn in range(2):
                y2 = 0.5 * (-p + sq) if sgn == 0 else 0.5 * (-p - sq)
                if y2 > 0.0:
                    cand = math.sqrt(y2) - 0.25 * a
                    if cand > 0.0:
                        fc = abs(((cand + a) * cand * cand) * cand + d0)
                        if fc < best:
                            best = fc
                            x = cand

    if x <= lo or x >= hi:
        x = 0.5 * (lo + hi)

    # safeguarded Newton on p(x), bracket [lo, hi] maintained by sign
    for _it in range(200):
        f = ((x + a) * x * x) * x + d0
        scale = ((x + abs_a) * x * x) * x + abs_d
        if abs(f) <= 1e-12 * scale:
            break
        if f > 0.0:
            hi = x
        else:
            lo = x
        df = (4.0 * x + 3.0 * a) * x * x
        xn = x - f / df if df != 0.0 else 0.5 * (lo + hi)
        if not (lo < xn < hi):
            xn = 0.5 * (lo + hi)
        if xn == x:
            break
        x = xn
        if hi - lo <= 4.0 * EPS * x:
            break
    return x


# ---------------------------------------------------------------------------
# proximal stretch updates
# ---------------------------------------------------------------------------


@njit(cache=True)
def spd_floor(P, floor):
    """Clamp the spectrum of symmetric P at ``floor``.

    A Gershgorin bound certifies most inputs without decomposing; only
    uncertified ones pay for the eigensolve.
    """
    n = P.shape[0]
    gmin = np.inf
    for i in range(n):
        s = 0.0
        for j in range(n):
            if j != i:
                s += abs(P[i, j])
        g = P[i, i] - s
        if g < gmin:
            gmin = g
    if gmin >= floor:
        return P
    w, V = sym_eig_small(P)
    for i in range(n):
        if w[i] < floor:
            w[i] = floor
    return eig_reassemble(w, V)


@njit(cache=True)
def p_step_sg(Q, w, mu):
    """Minimise w*f(P) + mu/2 ||P - Q||^2 for f(X) = ||X||^2/2 - logdet X.

    Closed form P = (mu Q + sqrt(mu^2 Q^2 + 4w(w+mu) I)) / (2(w+mu)),
    evaluated in the eigenbasis of Q so the small stretches keep full
    relative accuracy (the matrix-sum form loses them to cancellation
    when Q has large negative eigenvalues).
    """
    d = Q.shape[0]
    c = 4.0 * w * (w + mu)
    denom = 2.0 * (w + mu)
    if frob2(Q) < SQRT_EPS:
        # series for sqrt(mu^2 Q^2 + c I) near Q = 0
        QQ = mat_mul(Q, Q)
        P = np.empty((d, d))
        sc = math.sqrt(c)
        for i in range(d):
            for j in range(d):
                P[i, j] = (mu * Q[i, j] + mu * mu * QQ[i, j] / (2.0 * sc)) / denom
            P[i, i] += sc / denom
        return spd_floor(sym_part(P), SQRT_EPS)
    qw, V = sym_eig_small(Q)
    lam = np.empty(d)
    for j in range(d):
        q = qw[j]
        s = math.sqrt(mu * mu * q * q + c)
        if q >= 0.0:
            p = (mu * q + s) / denom
        else:
            # conjugate form, exact cancellation-free branch for q < 0
            p = 2.0 * w / (s - mu * q)
        lam[j] = p if p > SQRT_EPS else SQRT_EPS
    return eig_reassemble(lam, V)


@njit(cache=True)
def p_step_sd(Q, w, mu):
    """Minimise w*f(P) + mu/2 ||P - Q||^2 for f(X) = (||X||^2+||X^-1||^2)/2.

    Diagonalises Q; each eigenvalue solves the scalar quartic
    (w+mu) t^4 - mu q t^3 - w = 0.
    """
    d = Q.shape[0]
    qw, V = sym_eig_small(Q)
    lam = np.empty(d)
    for j in range(d):
        lam[j] = quartic_unique_positive(w + mu, -mu * qw[j], -w)
        if lam[j] < SQRT_EPS:
            lam[j] = SQRT_EPS
    return eig_reassemble(lam, V)


# ---------------------------------------------------------------------------
# energy densities and gradients on SPD arguments
# ---------------------------------------------------------------------------


@njit(cache=True)
def grad_sg_spd(P):
    """X - X^{-T} evaluated at symmetric positive definite P."""
    d = P.shape[0]
    Pi = inv_small(P)
    G = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            G[i, j] = P[i, j] - Pi[i, j]
    return G


@njit(cache=True)
def grad_sd_spd(P):
    """X - X^{-T} X^{-1} X^{-T} evaluated at symmetric positive definite P."""
    d = P.shape[0]
    Pi = inv_small(P)
    Pi3 = mat_mul(mat_mul(Pi, Pi), Pi)
    G = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            G[i, j] = P[i, j] - Pi3[i, j]
    return G


@njit(cache=True)
def f_sg_scalar(X):
    """0.5||X||^2 - logdet X (caller guarantees det > 0)."""
    return 0.5 * frob2(X) - math.log(det_small(X))


@njit(cache=True)
def f_sd_scalar(X):
    Xi = inv_small(X)
    return 0.5 * (frob2(X) + frob2(Xi))


@njit(cache=True)
def f_arap_scalar(X):
    d = X.shape[0]
    U, _ = polar_flip_aware(X, SQRT_EPS)
    s = 0.0
    for i in range(d):
        for j in range(d):
            t = X[i, j] - U[i, j]
            s += t * t
    return 0.5 * s
