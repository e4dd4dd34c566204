# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: damped Gauss-Newton batches and the exhaustive
association scan.  `_ref` holds the pure-numpy twins with identical
semantics."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, sqrt

cnp.import_array()

cdef double _LAM0 = 1e-3
cdef double _LAM_MIN = 1e-12
cdef double _LAM_MAX = 1e12
cdef double _D_FLOOR = 1e-12


cdef inline double _cost4(double x, double y, const double* cx, const double* cy,
                          const double* meas, const double* w) noexcept nogil:
    cdef double c = 0.0, dx, dy, d, f
    cdef int i
    for i in range(4):
        dx = x - cx[i]
        dy = y - cy[i]
        d = sqrt(dx * dx + dy * dy)
        f = w[i] * (meas[i] - d)
        c += f * f
    return c


cdef void _gn_single(double x0, double y0, const double* cx, const double* cy,
                     const double* meas, const double* w,
                     int max_iters, double step_tol, double* out) noexcept nogil:
    cdef double x = x0, y = y0
    cdef double lam = _LAM0
    cdef double cost = _cost4(x, y, cx, cy, meas, w)
    cdef double a00, a01, a11, g0, g1, det, d0, d1, nx, ny, ncost, step
    cdef double dx, dy, d, f, jx, jy
    cdef int it, i
    for it in range(max_iters):
        a00 = 0.0; a01 = 0.0; a11 = 0.0; g0 = 0.0; g1 = 0.0
        for i in range(4):
            dx = x - cx[i]
            dy = y - cy[i]
            d = sqrt(dx * dx + dy * dy)
            f = w[i] * (meas[i] - d)
            if d < _D_FLOOR:
                continue
            jx = -w[i] * dx / d
            jy = -w[i] * dy / d
            a00 += jx * jx
            a01 += jx * jy
            a11 += jy * jy
            g0 += jx * f
            g1 += jy * f
        det = (a00 + lam) * (a11 + lam) - a01 * a01
        if det > 0:
            d0 = (-(a11 + lam) * g0 + a01 * g1) / det
            d1 = (a01 * g0 - (a00 + lam) * g1) / det
            nx = x + d0
            ny = y + d1
            ncost = _cost4(nx, ny, cx, cy, meas, w)
            if ncost < cost:
                x = nx; y = ny; cost = ncost
                lam = lam * 0.1
                if lam < _LAM_MIN:
                    lam = _LAM_MIN
                step = sqrt(d0 * d0 + d1 * d1)
                if step < step_tol:
                    break
                continue
        lam = lam * 10.0
        if lam > _LAM_MAX:
            break
    out[0] = x
    out[1] = y
    out[2] = cost


def gn_localize_batch(anchors, meas, weights, starts, int max_iters=100,
                      double step_tol=1e-8):
    """See `_ref.gn_localize_batch`; same contract, compiled inner loops."""
    a = np.ascontiguousarray(anchors, dtype=np.float64)
    m_arr = np.ascontiguousarray(meas, dtype=np.float64)
    w_arr = np.ascontiguousarray(weights, dtype=np.float64)
    s_arr = np.ascontiguousarray(starts, dtype=np.float64)

    cdef double[:, ::1] av = a
    cdef double[:, ::1] mv = m_arr
    cdef double[:, ::1] wv = w_arr
    cdef double[:, :, ::1] sv = s_arr
    cdef Py_ssize_t p_n = mv.shape[0]
    cdef Py_ssize_t s_n = sv.shape[1]

    pos = np.empty((p_n, 2), dtype=np.float64)
    cost = np.empty(p_n, dtype=np.float64)
    cdef double[:, ::1] pos_v = pos
    cdef double[::1] cost_v = cost

    cdef double cx[4]
    cdef double cy[4]
    cx[0] = av[0, 0]; cx[1] = av[1, 0]; cx[2] = av[2, 0]; cx[3] = av[2, 0]
    cy[0] = av[0, 1]; cy[1] = av[1, 1]; cy[2] = av[2, 1]; cy[3] = av[2, 1]

    cdef double best_x, best_y, best_c
    cdef double cur[3]
    cdef Py_ssize_t p, s
    with nogil:
        for p in range(p_n):
            best_x = sv[p, 0, 0]
            best_y = sv[p, 0, 1]
            best_c = INFINITY
            for s in range(s_n):
                _gn_single(sv[p, s, 0], sv[p, s, 1], cx, cy,
                           &mv[p, 0], &wv[p, 0], max_iters, step_tol, cur)
                if cur[2] < best_c:
                    best_x = cur[0]; best_y = cur[1]; best_c = cur[2]
            pos_v[p, 0] = best_x
            pos_v[p, 1] = best_y
            cost_v[p] = best_c
    return pos, cost


def association_scan(table, perms):
    """See `_ref.association_scan`; same contract, O(1) extra memory."""
    t = np.ascontiguousarray(table, dtype=np.float64)
    p_arr = np.ascontiguousarray(perms, dtype=np.int64)
    cdef double[:, :, :, ::1] tv = t
    cdef cnp.int64_t[:, ::1] pv = p_arr
    cdef Py_ssize_t k_n = tv.shape[0]
    cdef Py_ssize_t f_n = pv.shape[0]
    cdef Py_ssize_t a, b, c, k
    cdef double tot, best = INFINITY
    cdef Py_ssize_t ba = 0, bb = 0, bc = 0
    with nogil:
        for a in range(f_n):
            for b in range(f_n):
                for c in range(f_n):
                    tot = 0.0
                    for k in range(k_n):
                        tot += tv[k, pv[a, k], pv[b, k], pv[c, k]]
                    if tot < best:
                        best = tot
                        ba = a; bb = b; bc = c
    return best, int(ba), int(bb), int(bc)
