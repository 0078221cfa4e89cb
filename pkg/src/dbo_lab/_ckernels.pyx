# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels. Same signatures and semantics as ``_pykernels``."""
import numpy as np

from libc.math cimport exp, fabs, sqrt

NAME = "cython"


cdef inline double _dpsi(double t) noexcept nogil:
    cdef double e = exp(-fabs(t))
    if t >= 0:
        return -e / (1.0 + e)
    return -1.0 / (1.0 + e)


cdef inline double _d2psi(double t) noexcept nogil:
    cdef double e = exp(-fabs(t))
    return e / ((1.0 + e) * (1.0 + e))


cdef inline double _dot4(const double* a, const double* b, Py_ssize_t p) noexcept nogil:
    # four independent partial sums so the reduction can use SIMD lanes
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t c = 0
    while c + 4 <= p:
        s0 = s0 + a[c] * b[c]
        s1 = s1 + a[c + 1] * b[c + 1]
        s2 = s2 + a[c + 2] * b[c + 2]
        s3 = s3 + a[c + 3] * b[c + 3]
        c += 4
    while c < p:
        s0 = s0 + a[c] * b[c]
        c += 1
    return (s0 + s1) + (s2 + s3)


cdef void _gossip(const Py_ssize_t[:, ::1] idx, const double[:, ::1] w,
                  const double[:, ::1] z, double[:, ::1] out) noexcept nogil:
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1], ns = idx.shape[1]
    cdef Py_ssize_t i, s, j, c
    cdef double wij
    for i in range(n):
        for c in range(d):
            out[i, c] = 0.0
        for s in range(ns):
            j = idx[i, s]
            wij = w[i, s]
            for c in range(d):
                out[i, c] = out[i, c] + wij * z[j, c]


def gossip(const Py_ssize_t[:, ::1] slot_idx, const double[:, ::1] slot_w,
           const double[:, ::1] z):
    out = np.empty((z.shape[0], z.shape[1]))
    cdef double[:, ::1] o = out
    with nogil:
        _gossip(slot_idx, slot_w, z, o)
    return out


def track(const Py_ssize_t[:, ::1] slot_idx, const double[:, ::1] slot_w,
          const double[:, ::1] t_prev, const double[:, ::1] d_prev,
          const double[:, ::1] d):
    out = np.empty((t_prev.shape[0], t_prev.shape[1]))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, c
    with nogil:
        _gossip(slot_idx, slot_w, t_prev, o)
        for i in range(o.shape[0]):
            for c in range(o.shape[1]):
                o[i, c] = (o[i, c] - d_prev[i, c]) + d[i, c]
    return out


def combine(const Py_ssize_t[:, ::1] slot_idx, const double[:, ::1] slot_w,
            const double[:, ::1] z, const double[:, ::1] t, double step,
            double radius):
    cdef Py_ssize_t n = z.shape[0], d = z.shape[1], ns = slot_idx.shape[1]
    cdef Py_ssize_t i, s, j, c
    cdef double wij, nrm, scale
    out = np.empty((n, d))
    active = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] o = out
    cdef unsigned char[::1] act = active
    with nogil:
        for i in range(n):
            for c in range(d):
                o[i, c] = 0.0
            for s in range(ns):
                j = slot_idx[i, s]
                wij = slot_w[i, s]
                for c in range(d):
                    o[i, c] = o[i, c] + wij * (z[j, c] + step * t[j, c])
            if radius >= 0:
                nrm = 0.0
                for c in range(d):
                    nrm = nrm + o[i, c] * o[i, c]
                nrm = sqrt(nrm)
                if nrm > radius:
                    act[i] = 1
                    scale = radius / nrm
                    for c in range(d):
                        o[i, c] = o[i, c] * scale
    return out, active.astype(bool)


def logistic_directions(const double[:, ::1] x_tr, const double[::1] y_tr,
                        const double[:, ::1] x_te, const double[::1] y_te,
                        const double[::1] lam, const double[::1] omega,
                        const double[::1] v, double w_tr, double w_te):
    cdef Py_ssize_t p = omega.shape[0], m_tr = x_tr.shape[0], m_te = x_te.shape[0]
    cdef Py_ssize_t e, c
    cdef double margin, xv, a, b, el, ex
    dy = np.zeros(p)
    dv = np.zeros(p)
    dx = np.empty(p)
    cdef double[::1] gy = dy, gv = dv, gx = dx
    cdef double[::1] hv = np.zeros(p)
    with nogil:
        for e in range(m_tr):
            margin = _dot4(&x_tr[e, 0], &omega[0], p)
            xv = _dot4(&x_tr[e, 0], &v[0], p)
            margin = margin * y_tr[e]
            # one exp serves both psi' and psi''
            ex = exp(-fabs(margin))
            a = (-ex / (1.0 + ex) if margin >= 0 else -1.0 / (1.0 + ex)) * y_tr[e]
            b = ex / ((1.0 + ex) * (1.0 + ex)) * xv
            for c in range(p):
                gy[c] = gy[c] + a * x_tr[e, c]
                hv[c] = hv[c] + b * x_tr[e, c]
        for e in range(m_te):
            margin = _dot4(&x_te[e, 0], &omega[0], p)
            a = _dpsi(margin * y_te[e]) * y_te[e]
            for c in range(p):
                gv[c] = gv[c] + a * x_te[e, c]
        for c in range(p):
            el = exp(lam[c])
            gy[c] = w_tr * gy[c] + el * omega[c]
            gv[c] = w_te * gv[c] - (w_tr * hv[c] + el * v[c])
            gx[c] = -(el * omega[c] * v[c])
    return dy, dv, dx
