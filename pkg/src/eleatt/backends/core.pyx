# cython: language_level=3
"""Compiled batched cell kernels (BLAS-backed).

Same interface as `numpy_backend`: forward kernels fill caller buffers,
backward kernels fill dx/dh and accumulate parameter gradients in place.
All arrays must be C-contiguous float64.

Matrix products go through dgemm.  BLAS is column-major, so a row-major
product C = A @ B is computed as C^T = B^T A^T on the untransposed memory.
"""

import numpy as np

from libc.math cimport exp, tanh as ctanh
from scipy.linalg.cython_blas cimport dgemm

NAME = "compiled"


cdef inline double sig(double u) noexcept nogil:
    cdef double e
    if u >= 0.0:
        return 1.0 / (1.0 + exp(-u))
    e = exp(u)
    return e / (1.0 + e)


cdef void mm_nt(double[:, ::1] a, double[:, ::1] w, double[:, ::1] c,
                double beta) noexcept nogil:
    # c = beta*c + a @ w.T   a (B,K), w (M,K), c (B,M)
    cdef int B = a.shape[0], K = a.shape[1], M = w.shape[0]
    cdef double one = 1.0
    cdef char *ta = b'T'
    cdef char *tb = b'N'
    dgemm(ta, tb, &M, &B, &K, &one, &w[0, 0], &K, &a[0, 0], &K,
          &beta, &c[0, 0], &M)


cdef void mm_nn(double[:, ::1] a, double[:, ::1] w, double[:, ::1] c,
                double beta) noexcept nogil:
    # c = beta*c + a @ w     a (B,M), w (M,K), c (B,K)
    cdef int B = a.shape[0], M = a.shape[1], K = w.shape[1]
    cdef double one = 1.0
    cdef char *ta = b'N'
    cdef char *tb = b'N'
    dgemm(ta, tb, &K, &B, &M, &one, &w[0, 0], &K, &a[0, 0], &M,
          &beta, &c[0, 0], &K)


cdef void mm_tn_acc(double[:, ::1] a, double[:, ::1] x,
                    double[:, ::1] g) noexcept nogil:
    # g += a.T @ x           a (B,M), x (B,K), g (M,K)
    cdef int B = a.shape[0], M = a.shape[1], K = x.shape[1]
    cdef double one = 1.0
    cdef char *ta = b'N'
    cdef char *tb = b'T'
    dgemm(ta, tb, &K, &M, &B, &one, &x[0, 0], &K, &a[0, 0], &M,
          &one, &g[0, 0], &K)


cdef void colsum_acc(double[:, ::1] a, double[::1] out) noexcept nogil:
    cdef Py_ssize_t i, j
    for i in range(a.shape[0]):
        for j in range(a.shape[1]):
            out[j] += a[i, j]


def srnn_fwd(double[:, ::1] w_xh, double[:, ::1] w_hh, double[::1] b_h,
             double[:, ::1] x, double[:, ::1] h, double[:, ::1] h_out):
    cdef Py_ssize_t i, j
    mm_nt(x, w_xh, h_out, 0.0)
    mm_nt(h, w_hh, h_out, 1.0)
    for i in range(h_out.shape[0]):
        for j in range(h_out.shape[1]):
            h_out[i, j] = ctanh(h_out[i, j] + b_h[j])


def srnn_bwd(double[:, ::1] w_xh, double[:, ::1] w_hh,
             double[:, ::1] x, double[:, ::1] h,
             double[:, ::1] h_new, double[:, ::1] dh_new,
             double[:, ::1] dx, double[:, ::1] dh,
             double[:, ::1] g_wxh, double[:, ::1] g_whh, double[::1] g_bh):
    cdef Py_ssize_t B = h_new.shape[0], N = h_new.shape[1]
    cdef double[:, ::1] du = np.empty((B, N))
    cdef Py_ssize_t i, j
    cdef double v
    for i in range(B):
        for j in range(N):
            v = h_new[i, j]
            du[i, j] = dh_new[i, j] * (1.0 - v * v)
    mm_tn_acc(du, x, g_wxh)
    mm_tn_acc(du, h, g_whh)
    colsum_acc(du, g_bh)
    mm_nn(du, w_xh, dx, 0.0)
    mm_nn(du, w_hh, dh, 0.0)


def lstm_fwd(double[:, ::1] w_xi, double[:, ::1] w_xf, double[:, ::1] w_xc,
             double[:, ::1] w_xo, double[:, ::1] w_hi, double[:, ::1] w_hf,
             double[:, ::1] w_hc, double[:, ::1] w_ho,
             double[::1] b_i, double[::1] b_f, double[::1] b_c,
             double[::1] b_o,
             double[:, ::1] x, double[:, ::1] h, double[:, ::1] c,
             double[:, ::1] i_out, double[:, ::1] f_out, double[:, ::1] g_out,
             double[:, ::1] o_out, double[:, ::1] c_out, double[:, ::1] tc_out,
             double[:, ::1] h_out):
    cdef Py_ssize_t B = x.shape[0], N = h.shape[1]
    cdef Py_ssize_t i, j
    mm_nt(x, w_xi, i_out, 0.0)
    mm_nt(h, w_hi, i_out, 1.0)
    mm_nt(x, w_xf, f_out, 0.0)
    mm_nt(h, w_hf, f_out, 1.0)
    mm_nt(x, w_xc, g_out, 0.0)
    mm_nt(h, w_hc, g_out, 1.0)
    mm_nt(x, w_xo, o_out, 0.0)
    mm_nt(h, w_ho, o_out, 1.0)
    for i in range(B):
        for j in range(N):
            i_out[i, j] = sig(i_out[i, j] + b_i[j])
            f_out[i, j] = sig(f_out[i, j] + b_f[j])
            g_out[i, j] = ctanh(g_out[i, j] + b_c[j])
            o_out[i, j] = sig(o_out[i, j] + b_o[j])
            c_out[i, j] = f_out[i, j] * c[i, j] + i_out[i, j] * g_out[i, j]
            tc_out[i, j] = ctanh(c_out[i, j])
            h_out[i, j] = o_out[i, j] * tc_out[i, j]


def lstm_bwd(double[:, ::1] w_xi, double[:, ::1] w_xf, double[:, ::1] w_xc,
             double[:, ::1] w_xo, double[:, ::1] w_hi, double[:, ::1] w_hf,
             double[:, ::1] w_hc, double[:, ::1] w_ho,
             double[:, ::1] x, double[:, ::1] h, double[:, ::1] c,
             double[:, ::1] i, double[:, ::1] f, double[:, ::1] g,
             double[:, ::1] o, double[:, ::1] tc,
             double[:, ::1] dh_new, double[:, ::1] dc_new,
             double[:, ::1] dx, double[:, ::1] dh, double[:, ::1] dc,
             double[:, ::1] g_wxi, double[:, ::1] g_wxf, double[:, ::1] g_wxc,
             double[:, ::1] g_wxo, double[:, ::1] g_whi, double[:, ::1] g_whf,
             double[:, ::1] g_whc, double[:, ::1] g_who,
             double[::1] g_bi, double[::1] g_bf, double[::1] g_bc,
             double[::1] g_bo):
    cdef Py_ssize_t B = x.shape[0], N = h.shape[1]
    cdef double[:, ::1] dui = np.empty((B, N))
    cdef double[:, ::1] duf = np.empty((B, N))
    cdef double[:, ::1] dug = np.empty((B, N))
    cdef double[:, ::1] duo = np.empty((B, N))
    cdef Py_ssize_t a, j
    cdef double dct, tv, iv, fv, gv, ov
    for a in range(B):
        for j in range(N):
            tv = tc[a, j]
            iv = i[a, j]
            fv = f[a, j]
            gv = g[a, j]
            ov = o[a, j]
            dct = dc_new[a, j] + dh_new[a, j] * ov * (1.0 - tv * tv)
            duo[a, j] = (dh_new[a, j] * tv) * ov * (1.0 - ov)
            duf[a, j] = (dct * c[a, j]) * fv * (1.0 - fv)
            dui[a, j] = (dct * gv) * iv * (1.0 - iv)
            dug[a, j] = (dct * iv) * (1.0 - gv * gv)
            dc[a, j] = dct * fv
    mm_tn_acc(dui, x, g_wxi)
    mm_tn_acc(duf, x, g_wxf)
    mm_tn_acc(dug, x, g_wxc)
    mm_tn_acc(duo, x, g_wxo)
    mm_tn_acc(dui, h, g_whi)
    mm_tn_acc(duf, h, g_whf)
    mm_tn_acc(dug, h, g_whc)
    mm_tn_acc(duo, h, g_who)
    colsum_acc(dui, g_bi)
    colsum_acc(duf, g_bf)
    colsum_acc(dug, g_bc)
    colsum_acc(duo, g_bo)
    mm_nn(dui, w_xi, dx, 0.0)
    mm_nn(duf, w_xf, dx, 1.0)
    mm_nn(dug, w_xc, dx, 1.0)
    mm_nn(duo, w_xo, dx, 1.0)
    mm_nn(dui, w_hi, dh, 0.0)
    mm_nn(duf, w_hf, dh, 1.0)
    mm_nn(dug, w_hc, dh, 1.0)
    mm_nn(duo, w_ho, dh, 1.0)


def gru_fwd(double[:, ::1] w_xr, double[:, ::1] w_xz, double[:, ::1] w_xh,
            double[:, ::1] w_hr, double[:, ::1] w_hz, double[:, ::1] w_hh,
            double[::1] b_r, double[::1] b_z, double[::1] b_h,
            double[:, ::1] x, double[:, ::1] h,
            double[:, ::1] r_out, double[:, ::1] z_out, double[:, ::1] hc_out,
            double[:, ::1] h_out):
    cdef Py_ssize_t B = x.shape[0], N = h.shape[1]
    cdef double[:, ::1] rh = np.empty((B, N))
    cdef Py_ssize_t i, j
    mm_nt(x, w_xr, r_out, 0.0)
    mm_nt(h, w_hr, r_out, 1.0)
    mm_nt(x, w_xz, z_out, 0.0)
    mm_nt(h, w_hz, z_out, 1.0)
    for i in range(B):
        for j in range(N):
            r_out[i, j] = sig(r_out[i, j] + b_r[j])
            z_out[i, j] = sig(z_out[i, j] + b_z[j])
            rh[i, j] = r_out[i, j] * h[i, j]
    mm_nt(x, w_xh, hc_out, 0.0)
    mm_nt(rh, w_hh, hc_out, 1.0)
    for i in range(B):
        for j in range(N):
            hc_out[i, j] = ctanh(hc_out[i, j] + b_h[j])
            h_out[i, j] = z_out[i, j] * h[i, j] \
                + (1.0 - z_out[i, j]) * hc_out[i, j]


def gru_bwd(double[:, ::1] w_xr, double[:, ::1] w_xz, double[:, ::1] w_xh,
            double[:, ::1] w_hr, double[:, ::1] w_hz, double[:, ::1] w_hh,
            double[:, ::1] x, double[:, ::1] h,
            double[:, ::1] r, double[:, ::1] z, double[:, ::1] hc,
            double[:, ::1] dh_new,
            double[:, ::1] dx, double[:, ::1] dh,
            double[:, ::1] g_wxr, double[:, ::1] g_wxz, double[:, ::1] g_wxh,
            double[:, ::1] g_whr, double[:, ::1] g_whz, double[:, ::1] g_whh,
            double[::1] g_br, double[::1] g_bz, double[::1] g_bh):
    cdef Py_ssize_t B = x.shape[0], N = h.shape[1]
    cdef double[:, ::1] duz = np.empty((B, N))
    cdef double[:, ::1] duh = np.empty((B, N))
    cdef double[:, ::1] dur = np.empty((B, N))
    cdef double[:, ::1] drh = np.empty((B, N))
    cdef double[:, ::1] rh = np.empty((B, N))
    cdef Py_ssize_t i, j
    cdef double zv, rv, hv, hcv
    for i in range(B):
        for j in range(N):
            zv = z[i, j]
            hcv = hc[i, j]
            duz[i, j] = dh_new[i, j] * (h[i, j] - hcv) * zv * (1.0 - zv)
            duh[i, j] = dh_new[i, j] * (1.0 - zv) * (1.0 - hcv * hcv)
            dh[i, j] = dh_new[i, j] * zv
            rh[i, j] = r[i, j] * h[i, j]
    mm_nn(duh, w_hh, drh, 0.0)
    for i in range(B):
        for j in range(N):
            rv = r[i, j]
            hv = h[i, j]
            dh[i, j] += drh[i, j] * rv
            dur[i, j] = (drh[i, j] * hv) * rv * (1.0 - rv)
    mm_tn_acc(duh, x, g_wxh)
    mm_tn_acc(duh, rh, g_whh)
    colsum_acc(duh, g_bh)
    mm_tn_acc(duz, x, g_wxz)
    mm_tn_acc(duz, h, g_whz)
    colsum_acc(duz, g_bz)
    mm_tn_acc(dur, x, g_wxr)
    mm_tn_acc(dur, h, g_whr)
    colsum_acc(dur, g_br)
    mm_nn(duh, w_xh, dx, 0.0)
    mm_nn(duz, w_xz, dx, 1.0)
    mm_nn(dur, w_xr, dx, 1.0)
    mm_nn(duz, w_hz, dh, 1.0)
    mm_nn(dur, w_hr, dh, 1.0)
