# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled trajectory kernels (see _pykernels for the reference semantics)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, exp, fabs, ceil, log2, isfinite, isnan

cnp.import_array()

cdef double[5] THETA = [1.495585217958292e-2, 2.539398330063230e-1,
                        9.504178996162932e-1, 2.097847961257068e0, 5.371920351148152e0]
cdef int[5] DEGREES = [3, 5, 7, 9, 13]

cdef double[4] B3 = [120.0, 60.0, 12.0, 1.0]
cdef double[6] B5 = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0]
cdef double[8] B7 = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0]
cdef double[10] B9 = [17643225600.0, 8821612800.0, 2075673600.0, 302702400.0, 30270240.0,
                      2162160.0, 110880.0, 3960.0, 90.0, 1.0]
cdef double[14] B13 = [64764752532480000.0, 32382376266240000.0, 7771770303897600.0,
                       1187353796428800.0, 129060195264000.0, 10559470521600.0,
                       670442572800.0, 33522128640.0, 1323241920.0, 40840800.0,
                       960960.0, 16380.0, 182.0, 1.0]


cdef inline void matmul(double[:, ::1] a, double[:, ::1] b, double[:, ::1] out, int m) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(m):
        for j in range(m):
            s = 0.0
            for k in range(m):
                s += a[i, k] * b[k, j]
            out[i, j] = s


cdef int lu_solve(double[:, ::1] a, double[:, ::1] b, int m) noexcept nogil:
    """Solve a x = b in place (b <- x) by Gaussian elimination with partial pivoting."""
    cdef int i, j, k, p
    cdef double big, t, f
    for k in range(m):
        p = k
        big = fabs(a[k, k])
        for i in range(k + 1, m):
            if fabs(a[i, k]) > big:
                big = fabs(a[i, k])
                p = i
        if big == 0.0:
            return -1
        if p != k:
            for j in range(m):
                t = a[k, j]; a[k, j] = a[p, j]; a[p, j] = t
                t = b[k, j]; b[k, j] = b[p, j]; b[p, j] = t
        for i in range(k + 1, m):
            f = a[i, k] / a[k, k]
            if f != 0.0:
                for j in range(k, m):
                    a[i, j] -= f * a[k, j]
                for j in range(m):
                    b[i, j] -= f * b[k, j]
    for k in range(m - 1, -1, -1):
        for j in range(m):
            t = b[k, j]
            for i in range(k + 1, m):
                t -= a[k, i] * b[i, j]
            b[k, j] = t / a[k, k]
    return 0


cdef class ExpmWork:
    """Scratch space for one m x m Pade exponential."""
    cdef double[:, ::1] x, x2, x4, x6, u, v, t1, t2, r
    cdef int m

    def __init__(self, int m):
        self.m = m
        self.x = np.zeros((m, m)); self.x2 = np.zeros((m, m)); self.x4 = np.zeros((m, m))
        self.x6 = np.zeros((m, m)); self.u = np.zeros((m, m)); self.v = np.zeros((m, m))
        self.t1 = np.zeros((m, m)); self.t2 = np.zeros((m, m)); self.r = np.zeros((m, m))


cdef int expm_into(ExpmWork w, double[:, ::1] a, double[:, ::1] out) noexcept nogil:
    """out = exp(a) with the same degree/scaling selection as linalg.mat_exp."""
    cdef int m = w.m
    cdef int i, j, k, slot, sq, deg, npow
    cdef double norm = 0.0, col, scale
    cdef double* b
    if m == 1:
        out[0, 0] = exp(a[0, 0])
        return 0
    for j in range(m):
        col = 0.0
        for i in range(m):
            col += fabs(a[i, j])
        if col > norm:
            norm = col
    slot = 0
    while slot < 5 and norm > THETA[slot]:
        slot += 1
    sq = 0
    if slot == 5:
        slot = 4
        sq = <int>ceil(log2(norm / THETA[4]))
    deg = DEGREES[slot]
    scale = 1.0
    for k in range(sq):
        scale *= 0.5
    for i in range(m):
        for j in range(m):
            w.x[i, j] = a[i, j] * scale
    matmul(w.x, w.x, w.x2, m)
    if deg == 13:
        b = B13
        matmul(w.x2, w.x2, w.x4, m)
        matmul(w.x4, w.x2, w.x6, m)
        for i in range(m):
            for j in range(m):
                w.t1[i, j] = b[13] * w.x6[i, j] + b[11] * w.x4[i, j] + b[9] * w.x2[i, j]
        matmul(w.x6, w.t1, w.t2, m)
        for i in range(m):
            for j in range(m):
                w.t2[i, j] += b[7] * w.x6[i, j] + b[5] * w.x4[i, j] + b[3] * w.x2[i, j]
            w.t2[i, i] += b[1]
        matmul(w.x, w.t2, w.u, m)
        for i in range(m):
            for j in range(m):
                w.t1[i, j] = b[12] * w.x6[i, j] + b[10] * w.x4[i, j] + b[8] * w.x2[i, j]
        matmul(w.x6, w.t1, w.v, m)
        for i in range(m):
            for j in range(m):
                w.v[i, j] += b[6] * w.x6[i, j] + b[4] * w.x4[i, j] + b[2] * w.x2[i, j]
            w.v[i, i] += b[0]
    else:
        if deg == 3:
            b = B3
        elif deg == 5:
            b = B5
        elif deg == 7:
            b = B7
        else:
            b = B9
        npow = deg // 2 + 1
        # t1 accumulates the odd part, v the even part; t2 holds the running power of x2
        for i in range(m):
            for j in range(m):
                w.t1[i, j] = 0.0
                w.v[i, j] = 0.0
                w.t2[i, j] = 0.0
            w.t1[i, i] = b[1]
            w.v[i, i] = b[0]
            w.t2[i, i] = 1.0
        for k in range(1, npow):
            matmul(w.t2, w.x2, w.x4, m)
            for i in range(m):
                for j in range(m):
                    w.t2[i, j] = w.x4[i, j]
                    w.t1[i, j] += b[2 * k + 1] * w.t2[i, j]
                    w.v[i, j] += b[2 * k] * w.t2[i, j]
        matmul(w.x, w.t1, w.u, m)
    for i in range(m):
        for j in range(m):
            w.t1[i, j] = w.v[i, j] - w.u[i, j]
            w.r[i, j] = w.v[i, j] + w.u[i, j]
    if lu_solve(w.t1, w.r, m) != 0:
        return -1
    for k in range(sq):
        matmul(w.r, w.r, w.t1, m)
        for i in range(m):
            for j in range(m):
                w.r[i, j] = w.t1[i, j]
    for i in range(m):
        for j in range(m):
            out[i, j] = w.r[i, j]
    return 0


def expm(a):
    """Matrix exponential of one square matrix (exposed for testing)."""
    cdef double[:, ::1] arr = np.ascontiguousarray(a, dtype=np.float64)
    cdef int m = arr.shape[0]
    out = np.empty((m, m))
    cdef double[:, ::1] o = out
    if expm_into(ExpmWork(m), arr, o) != 0:
        raise ArithmeticError("singular Pade denominator")
    return out


def affine_sequence(d0, mats, coef, y0):
    d_arr = np.ascontiguousarray(d0, dtype=np.float64)
    cdef int m = d_arr.shape[0]
    m_arr = np.ascontiguousarray(mats, dtype=np.float64).reshape(-1, m, m)
    c_arr = np.ascontiguousarray(coef, dtype=np.float64)
    y_arr = np.ascontiguousarray(y0, dtype=np.float64)
    cdef int P = c_arr.shape[0], N = c_arr.shape[1], K = c_arr.shape[2]
    traj_arr = np.empty((P, N + 1, m))
    g_arr = np.empty((m, m))
    cdef double[:, ::1] Dv = d_arr
    cdef double[:, :, ::1] Cv = c_arr
    cdef double[:, ::1] Yv = y_arr
    cdef double[:, :, ::1] Tv = traj_arr
    cdef double[:, ::1] Gv = g_arr
    cdef double* D = &Dv[0, 0]
    cdef double* Mp = NULL
    cdef double[:, :, ::1] Mv
    if m_arr.shape[0] > 0:
        Mv = m_arr
        Mp = &Mv[0, 0, 0]
    cdef double* G = &Gv[0, 0]
    cdef double* T
    cdef double* Cp
    cdef double* yold
    cdef double* ynew
    cdef double* row
    cdef double* mk
    cdef int p, n, k, i, j, mm = m * m
    cdef double c, s
    with nogil:
        for p in range(P):
            T = &Tv[p, 0, 0]
            for i in range(m):
                T[i] = Yv[p, i]
            for n in range(N):
                Cp = &Cv[p, n, 0]
                for i in range(mm):
                    G[i] = D[i]
                for k in range(K):
                    c = Cp[k]
                    if c != 0.0:
                        mk = Mp + k * mm
                        for i in range(mm):
                            G[i] += c * mk[i]
                yold = T + n * m
                ynew = yold + m
                for i in range(m):
                    row = G + i * m
                    s = 0.0
                    for j in range(m):
                        s += row[j] * yold[j]
                    ynew[i] = s
    return traj_arr


def expm_sequence(m0, mats, coef, y0, pre=None):
    cdef double[:, ::1] M0 = np.ascontiguousarray(m0, dtype=np.float64)
    cdef int m = M0.shape[0]
    cdef double[:, :, ::1] M = np.ascontiguousarray(mats, dtype=np.float64).reshape(-1, m, m)
    cdef double[:, :, ::1] C = np.ascontiguousarray(coef, dtype=np.float64)
    cdef double[:, ::1] Y0 = np.ascontiguousarray(y0, dtype=np.float64)
    cdef bint has_pre = pre is not None
    cdef double[:, ::1] PRE = np.ascontiguousarray(pre if has_pre else np.eye(m), dtype=np.float64)
    cdef int P = C.shape[0], N = C.shape[1], K = C.shape[2]
    traj_arr = np.empty((P, N + 1, m))
    cdef double[:, :, ::1] T = traj_arr
    cdef double[::1] y = np.empty(m)
    cdef double[::1] z = np.empty(m)
    cdef double[:, ::1] arg = np.empty((m, m))
    cdef double[:, ::1] E = np.empty((m, m))
    cdef ExpmWork work = ExpmWork(m)
    cdef int p, n, k, i, j, status = 0
    cdef double c, s
    with nogil:
        for p in range(P):
            for i in range(m):
                y[i] = Y0[p, i]
                T[p, 0, i] = y[i]
            for n in range(N):
                for i in range(m):
                    for j in range(m):
                        arg[i, j] = M0[i, j]
                for k in range(K):
                    c = C[p, n, k]
                    if c != 0.0:
                        for i in range(m):
                            for j in range(m):
                                arg[i, j] += c * M[k, i, j]
                if expm_into(work, arg, E) != 0:
                    status = -1
                if has_pre:
                    for i in range(m):
                        s = 0.0
                        for j in range(m):
                            s += PRE[i, j] * y[j]
                        z[i] = s
                    for i in range(m):
                        y[i] = z[i]
                for i in range(m):
                    s = 0.0
                    for j in range(m):
                        s += E[i, j] * y[j]
                    T[p, n + 1, i] = s
                for i in range(m):
                    y[i] = T[p, n + 1, i]
    if status != 0:
        raise ArithmeticError("singular Pade denominator")
    return traj_arr


cdef inline double clip(double x, double lo, double hi) noexcept nogil:
    if x < lo:
        return lo
    if x > hi:
        return hi
    return x


cdef inline int diffusion(double v, double mu, double eps, double* b) noexcept nogil:
    """Diagonal of B at (v, mu) with mu clamped; -1 outside the domain."""
    cdef double d, om
    if not (v > -1.0) or isnan(mu):
        return -1
    mu = clip(mu, -(1.0 - eps), 1.0 - eps)
    d = 0.5 * (1.0 / (v + 1.0))
    om = 1.0 - mu * mu
    b[0] = sqrt(2.0 * d)
    b[1] = sqrt(2.0 * d * om)
    b[2] = sqrt(2.0 * d / om)
    return 0


cdef int coulomb_step(int kind, double* s, double* w, double* a, double dt, double eps,
                      int sweeps, bint simpson, bint null, double* out) noexcept nogil:
    cdef double v, mu, phi, inv, D, F, dD, om, ratio, root, sq_v, sq_m
    cdef double avm, avp, amp
    cdef double bs[3]
    cdef double be[3]
    cdef double bm[3]
    cdef double cur[3]
    cdef double mid[3]
    cdef double ef[3]
    cdef double eh[3]
    cdef double dg[3]
    cdef int sweep, i
    # incoming state policy: reflect v, clamp mu
    v = fabs(s[0])
    mu = s[1]
    if isnan(mu):
        return -1
    mu = clip(mu, -(1.0 - eps), 1.0 - eps)
    phi = s[2]
    if not (v > -1.0):
        return -1
    if kind <= 1:
        inv = 1.0 / (v + 1.0)
        D = 0.5 * inv
        F = -(0.5 * inv)
        dD = -(0.5 * inv * inv)
        om = 1.0 - mu * mu
        out[0] = v + F * dt + sqrt(2.0 * D) * w[0]
        out[1] = mu - 2.0 * D * mu * dt + sqrt(2.0 * D * om) * w[1]
        out[2] = phi + sqrt(2.0 * D / om) * w[2]
        if kind == 1:
            if null:
                sq_v = 0.0
                sq_m = 0.0
            else:
                sq_v = w[0] * w[0] - dt
                sq_m = w[1] * w[1] - dt
            avm = 0.5 * (w[0] * w[1]) - 0.5 * (a[1] * w[0] - a[0] * w[1])
            avp = 0.5 * (w[0] * w[2]) - 0.5 * (a[2] * w[0] - a[0] * w[2])
            amp = 0.5 * (w[1] * w[2]) - 0.5 * (a[2] * w[1] - a[1] * w[2])
            ratio = sqrt(D / D)
            root = sqrt(om)
            out[0] += dD * 0.5 * sq_v
            out[1] += -2.0 * mu * D * 0.5 * sq_m + ratio * root * dD * avm
            out[2] += ratio / root * dD * avp + 2.0 * D * mu / om * amp
    else:
        cur[0] = v; cur[1] = mu; cur[2] = phi
        if diffusion(v, mu, eps, bs) != 0:
            return -1
        for sweep in range(sweeps):
            if cur[0] == 0.0 or not (cur[0] > -1.0):
                return -1
            inv = 1.0 / (cur[0] + 1.0)
            dg[0] = -(0.5 * inv) / cur[0]
            dg[1] = -2.0 * (0.5 * inv)
            dg[2] = 0.0
            for i in range(3):
                ef[i] = exp(dg[i] * dt)
            if diffusion(cur[0], cur[1], eps, be) != 0:
                return -1
            if simpson:
                for i in range(3):
                    eh[i] = exp(dg[i] * (0.5 * dt))
                mid[0] = 0.5 * (v + cur[0]); mid[1] = 0.5 * (mu + cur[1]); mid[2] = 0.5 * (phi + cur[2])
                if diffusion(mid[0], mid[1], eps, bm) != 0:
                    return -1
                out[0] = ef[0] * v + (be[0] + 4.0 * eh[0] * bm[0] + ef[0] * bs[0]) * w[0] / 6.0
                out[1] = ef[1] * mu + (be[1] + 4.0 * eh[1] * bm[1] + ef[1] * bs[1]) * w[1] / 6.0
                out[2] = ef[2] * phi + (be[2] + 4.0 * eh[2] * bm[2] + ef[2] * bs[2]) * w[2] / 6.0
            else:
                out[0] = ef[0] * v + 0.5 * (be[0] + ef[0] * bs[0]) * w[0]
                out[1] = ef[1] * mu + 0.5 * (be[1] + ef[1] * bs[1]) * w[1]
                out[2] = ef[2] * phi + 0.5 * (be[2] + ef[2] * bs[2]) * w[2]
            for i in range(3):
                if not isfinite(out[i]):
                    return -1
            cur[0] = fabs(out[0])
            cur[1] = clip(out[1], -(1.0 - eps), 1.0 - eps)
            cur[2] = out[2]
    for i in range(3):
        if not isfinite(out[i]):
            return -1
    return 0


def coulomb_sequence(int kind, s0, incr, aux, double dt, double eps, int sweeps, bint simpson, bint null):
    cdef double[:, ::1] S0 = np.ascontiguousarray(s0, dtype=np.float64)
    cdef double[:, :, ::1] W = np.ascontiguousarray(incr, dtype=np.float64)
    cdef double[:, :, ::1] A = np.ascontiguousarray(aux, dtype=np.float64)
    cdef int P = W.shape[0], N = W.shape[1]
    traj_arr = np.full((P, N + 1, 3), np.nan)
    clamps_arr = np.zeros(P, dtype=np.int64)
    failed_arr = np.zeros(P, dtype=bool)
    cdef double[:, :, ::1] T = traj_arr
    cdef cnp.int64_t[::1] CL = clamps_arr
    cdef cnp.uint8_t[::1] FL = failed_arr.view(np.uint8)
    cdef double s[3]
    cdef double out[3]
    cdef double bound = 1.0 - eps
    cdef int p, n, i
    with nogil:
        for p in range(P):
            for i in range(3):
                s[i] = S0[p, i]
                T[p, 0, i] = s[i]
            for n in range(N):
                if coulomb_step(kind, s, &W[p, n, 0], &A[p, n, 0], dt, eps, sweeps, simpson, null, out) != 0:
                    FL[p] = 1
                    break
                if out[0] < 0.0:
                    out[0] = -out[0]
                    CL[p] += 1
                if fabs(out[1]) > bound:
                    out[1] = clip(out[1], -bound, bound)
                    CL[p] += 1
                for i in range(3):
                    s[i] = out[i]
                    T[p, n + 1, i] = out[i]
    return traj_arr, clamps_arr, failed_arr
