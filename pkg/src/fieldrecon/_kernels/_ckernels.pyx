# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled assembly kernels; see ``_pykernels`` for the reference semantics."""
from libc.math cimport sqrt

ctypedef long long idx_t


def hex_batch(const double[:, :, ::1] coords, const double[:, ::1] N,
              const double[:, :, ::1] dN, const double[::1] w,
              double k, double rhocp,
              double[:, :, ::1] ke_out, double[:, :, ::1] ce_out):
    cdef Py_ssize_t n_el = coords.shape[0], n_g = w.shape[0]
    cdef Py_ssize_t e, g, a, b, i, l
    cdef double jac[3][3]
    cdef double inv[3][3]
    cdef double B[3][8]
    cdef double det, wd, s

    for e in range(n_el):
        for a in range(8):
            for b in range(8):
                ke_out[e, a, b] = 0.0
                ce_out[e, a, b] = 0.0
        for g in range(n_g):
            for l in range(3):
                for i in range(3):
                    s = 0.0
                    for a in range(8):
                        s += dN[g, l, a] * coords[e, a, i]
                    jac[l][i] = s
            inv[0][0] = jac[1][1] * jac[2][2] - jac[1][2] * jac[2][1]
            inv[0][1] = jac[0][2] * jac[2][1] - jac[0][1] * jac[2][2]
            inv[0][2] = jac[0][1] * jac[1][2] - jac[0][2] * jac[1][1]
            inv[1][0] = jac[1][2] * jac[2][0] - jac[1][0] * jac[2][2]
            inv[1][1] = jac[0][0] * jac[2][2] - jac[0][2] * jac[2][0]
            inv[1][2] = jac[0][2] * jac[1][0] - jac[0][0] * jac[1][2]
            inv[2][0] = jac[1][0] * jac[2][1] - jac[1][1] * jac[2][0]
            inv[2][1] = jac[0][1] * jac[2][0] - jac[0][0] * jac[2][1]
            inv[2][2] = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0]
            det = jac[0][0] * inv[0][0] + jac[0][1] * inv[1][0] + jac[0][2] * inv[2][0]
            if det <= 0.0:
                return e
            for i in range(3):
                for a in range(8):
                    s = 0.0
                    for l in range(3):
                        s += inv[i][l] * dN[g, l, a]
                    B[i][a] = s / det
            wd = w[g] * det
            for a in range(8):
                for b in range(8):
                    s = B[0][a] * B[0][b] + B[1][a] * B[1][b] + B[2][a] * B[2][b]
                    ke_out[e, a, b] += k * wd * s
                    ce_out[e, a, b] += rhocp * wd * N[g, a] * N[g, b]
    return -1


def quad_batch(const double[:, :, ::1] coords, const double[:, ::1] N,
               const double[:, :, ::1] dN, const double[::1] w,
               double h, double h_ta,
               double[:, :, ::1] he_out, double[:, ::1] fe_out):
    cdef Py_ssize_t n_f = coords.shape[0], n_g = w.shape[0]
    cdef Py_ssize_t e, g, a, b, i
    cdef double t0[3]
    cdef double t1[3]
    cdef double nx, ny, nz, js, wj

    for e in range(n_f):
        for a in range(4):
            fe_out[e, a] = 0.0
            for b in range(4):
                he_out[e, a, b] = 0.0
        for g in range(n_g):
            for i in range(3):
                t0[i] = 0.0
                t1[i] = 0.0
                for a in range(4):
                    t0[i] += dN[g, 0, a] * coords[e, a, i]
                    t1[i] += dN[g, 1, a] * coords[e, a, i]
            nx = t0[1] * t1[2] - t0[2] * t1[1]
            ny = t0[2] * t1[0] - t0[0] * t1[2]
            nz = t0[0] * t1[1] - t0[1] * t1[0]
            js = sqrt(nx * nx + ny * ny + nz * nz)
            if js <= 0.0:
                return e
            wj = w[g] * js
            for a in range(4):
                fe_out[e, a] += h_ta * wj * N[g, a]
                for b in range(4):
                    he_out[e, a, b] += h * wj * N[g, a] * N[g, b]
    return -1


def scatter_add(const idx_t[:, ::1] conn, const double[:, :, ::1] vals,
                const idx_t[::1] indptr, const idx_t[::1] indices,
                double[::1] data):
    cdef Py_ssize_t n_el = conn.shape[0], npe = conn.shape[1]
    cdef Py_ssize_t e, a, b
    cdef idx_t row, col, lo, hi, mid
    for e in range(n_el):
        for a in range(npe):
            row = conn[e, a]
            for b in range(npe):
                col = conn[e, b]
                lo = indptr[row]
                hi = indptr[row + 1] - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if indices[mid] < col:
                        lo = mid + 1
                    else:
                        hi = mid
                data[lo] += vals[e, a, b]
