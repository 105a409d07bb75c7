# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Statement-for-statement mirror of ``pyref.py``; both backends must return
bit-identical arrays (the build disables FMA contraction to keep C doubles
on the same rounding path as Python floats).
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport ceil, floor

cnp.import_array()

BACKEND_NAME = "compiled"


cdef inline Py_ssize_t _pairs_scan(
    cnp.int64_t[::1] order,
    double[::1] u_alpha,
    double[::1] u_beta,
    double[::1] conic_a,
    double[::1] conic_b,
    double[::1] conic_c,
    double[::1] bb_da,
    double[::1] bb_db,
    cnp.uint8_t[::1] pole,
    cnp.uint8_t[::1] active,
    long n_elev,
    long n_azim,
    double elev_step,
    double azim_step,
    double cutoff_sq,
    cnp.int64_t[::1] out_g,
    cnp.int64_t[::1] out_c,
    double[::1] out_da,
    double[::1] out_db,
    double[::1] out_m2,
    bint fill,
) noexcept:
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, idx
    cdef cnp.int64_t g
    cdef long m_lo, m_hi, c_lo, c_hi, m, j, col, row_base
    cdef long top_base = (n_elev - 1) * n_azim
    cdef double ua, ub, a, b, c, da, db, m2
    idx = 0
    for i in range(n):
        g = order[i]
        if not active[g]:
            continue
        if pole[g]:
            c = conic_c[g]
            db = (n_elev - 1 + 0.5) * elev_step - u_beta[g]
            m2 = c * db * db
            if m2 <= cutoff_sq:
                for col in range(n_azim):
                    if fill:
                        out_g[idx] = g
                        out_c[idx] = top_base + col
                        out_da[idx] = 0.0
                        out_db[idx] = db
                        out_m2[idx] = m2
                    idx += 1
            continue
        ua = u_alpha[g]
        ub = u_beta[g]
        a = conic_a[g]
        b = conic_b[g]
        c = conic_c[g]
        m_lo = <long>ceil((ub - bb_db[g]) / elev_step - 0.5)
        m_hi = <long>floor((ub + bb_db[g]) / elev_step - 0.5)
        if m_lo < 0:
            m_lo = 0
        if m_hi > n_elev - 1:
            m_hi = n_elev - 1
        if bb_da[g] >= 180.0:
            c_lo = 0
            c_hi = n_azim - 1
        else:
            c_lo = <long>ceil((ua - bb_da[g]) / azim_step - 0.5)
            c_hi = <long>floor((ua + bb_da[g]) / azim_step - 0.5)
            if c_hi - c_lo + 1 >= n_azim:
                c_lo = 0
                c_hi = n_azim - 1
        for m in range(m_lo, m_hi + 1):
            db = (m + 0.5) * elev_step - ub
            row_base = m * n_azim
            for j in range(c_lo, c_hi + 1):
                col = j % n_azim
                if col < 0:
                    col += n_azim
                da = (col + 0.5) * azim_step - ua
                da = da - 360.0 * floor((da + 180.0) / 360.0)
                m2 = a * da * da + 2.0 * b * da * db + c * db * db
                if m2 <= cutoff_sq:
                    if fill:
                        out_g[idx] = g
                        out_c[idx] = row_base + col
                        out_da[idx] = da
                        out_db[idx] = db
                        out_m2[idx] = m2
                    idx += 1
    return idx


cdef Py_ssize_t _candidate_upper_bound(
    cnp.int64_t[::1] order,
    double[::1] u_beta,
    double[::1] bb_da,
    double[::1] bb_db,
    cnp.uint8_t[::1] pole,
    cnp.uint8_t[::1] active,
    long n_elev,
    long n_azim,
    double elev_step,
    double azim_step,
) noexcept:
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t i, total = 0
    cdef cnp.int64_t g
    cdef long m_lo, m_hi, c_lo, c_hi, rows, cols
    cdef double ub
    for i in range(n):
        g = order[i]
        if not active[g]:
            continue
        if pole[g]:
            total += n_azim
            continue
        ub = u_beta[g]
        m_lo = <long>ceil((ub - bb_db[g]) / elev_step - 0.5)
        m_hi = <long>floor((ub + bb_db[g]) / elev_step - 0.5)
        if m_lo < 0:
            m_lo = 0
        if m_hi > n_elev - 1:
            m_hi = n_elev - 1
        rows = m_hi - m_lo + 1
        if rows <= 0:
            continue
        if bb_da[g] >= 180.0:
            cols = n_azim
        else:
            # center-independent width bound: floor(2 bb / step) + 1
            cols = <long>floor(2.0 * bb_da[g] / azim_step) + 1
            if cols >= n_azim:
                cols = n_azim
            if cols < 0:
                cols = 0
        total += rows * cols
    return total


def find_pairs(
    order,
    u_alpha,
    u_beta,
    conic_a,
    conic_b,
    conic_c,
    bb_da,
    bb_db,
    pole,
    active,
    n_elev,
    n_azim,
    elev_step,
    azim_step,
    cutoff_sq,
):
    cdef cnp.int64_t[::1] order_v = order
    cdef Py_ssize_t cap = _candidate_upper_bound(
        order_v, u_beta, bb_da, bb_db, pole, active,
        n_elev, n_azim, elev_step, azim_step,
    )
    out_g = np.empty(cap, dtype=np.int64)
    out_c = np.empty(cap, dtype=np.int64)
    out_da = np.empty(cap)
    out_db = np.empty(cap)
    out_m2 = np.empty(cap)
    cdef Py_ssize_t count = 0
    if cap:
        count = _pairs_scan(
            order_v, u_alpha, u_beta, conic_a, conic_b, conic_c, bb_da, bb_db,
            pole, active, n_elev, n_azim, elev_step, azim_step, cutoff_sq,
            out_g, out_c, out_da, out_db, out_m2, True,
        )
    return (
        out_g[:count],
        out_c[:count],
        out_da[:count],
        out_db[:count],
        out_m2[:count],
    )


def group_by_cell(pair_cell, n_cells, pair_gauss, dalpha, dbeta, msq):
    """Stable counting sort by cell (same order as a stable argsort).

    Returns (seg_start, gauss, cell, dalpha, dbeta, msq) with all pair
    arrays compacted into cell-grouped order in one scatter pass.
    """
    cdef cnp.int64_t[::1] cells = pair_cell
    cdef cnp.int64_t[::1] gauss = pair_gauss
    cdef double[::1] da_in = dalpha
    cdef double[::1] db_in = dbeta
    cdef double[::1] m2_in = msq
    cdef Py_ssize_t n_pairs = cells.shape[0]
    cdef Py_ssize_t nk = int(n_cells)
    seg_start = np.zeros(nk + 1, dtype=np.int64)
    out_g = np.empty(n_pairs, dtype=np.int64)
    out_c = np.empty(n_pairs, dtype=np.int64)
    out_da = np.empty(n_pairs)
    out_db = np.empty(n_pairs)
    out_m2 = np.empty(n_pairs)
    cdef cnp.int64_t[::1] seg = seg_start
    cdef cnp.int64_t[::1] og = out_g
    cdef cnp.int64_t[::1] oc = out_c
    cdef double[::1] oda = out_da
    cdef double[::1] odb = out_db
    cdef double[::1] om2 = out_m2
    cdef cnp.int64_t[::1] cursor = np.zeros(nk, dtype=np.int64)
    cdef Py_ssize_t j, k, pos
    for j in range(n_pairs):
        seg[cells[j] + 1] += 1
    for k in range(1, nk + 1):
        seg[k] += seg[k - 1]
    for j in range(n_pairs):
        k = cells[j]
        pos = seg[k] + cursor[k]
        cursor[k] += 1
        og[pos] = gauss[j]
        oc[pos] = k
        oda[pos] = da_in[j]
        odb[pos] = db_in[j]
        om2[pos] = m2_in[j]
    return seg_start, out_g, out_c, out_da, out_db, out_m2


def weight_backward(
    cnp.int64_t[::1] pair_gauss,
    double[::1] dalpha,
    double[::1] dbeta,
    double[::1] w,
    double[::1] adj_w,
    double[::1] conic_a,
    double[::1] conic_b,
    double[::1] conic_c,
    cnp.uint8_t[::1] pole,
    Py_ssize_t n_gauss,
):
    adj_ca_arr = np.zeros(n_gauss)
    adj_cb_arr = np.zeros(n_gauss)
    adj_cc_arr = np.zeros(n_gauss)
    adj_ua_arr = np.zeros(n_gauss)
    adj_ub_arr = np.zeros(n_gauss)
    cdef double[::1] adj_ca = adj_ca_arr
    cdef double[::1] adj_cb = adj_cb_arr
    cdef double[::1] adj_cc = adj_cc_arr
    cdef double[::1] adj_ua = adj_ua_arr
    cdef double[::1] adj_ub = adj_ub_arr
    cdef Py_ssize_t j, n_pairs = pair_gauss.shape[0]
    cdef cnp.int64_t g
    cdef double am2, da, db, adj_da, adj_db
    for j in range(n_pairs):
        g = pair_gauss[j]
        da = dalpha[j]
        db = dbeta[j]
        am2 = -0.5 * w[j] * adj_w[j]
        adj_ca[g] += da * da * am2
        adj_cb[g] += 2.0 * da * db * am2
        adj_cc[g] += db * db * am2
        if not pole[g]:
            adj_da = (2.0 * conic_a[g] * da + 2.0 * conic_b[g] * db) * am2
            adj_db = (2.0 * conic_b[g] * da + 2.0 * conic_c[g] * db) * am2
            adj_ua[g] += -adj_da
            adj_ub[g] += -adj_db
    return adj_ca_arr, adj_cb_arr, adj_cc_arr, adj_ua_arr, adj_ub_arr


def accumulate_forward(
    cnp.int64_t[::1] seg_start,
    cnp.int64_t[::1] pair_gauss,
    double[::1] w,
    double[::1] s_re,
    double[::1] s_im,
    double[::1] d_re,
    double[::1] d_im,
):
    cdef Py_ssize_t n_cells = seg_start.shape[0] - 1
    cdef Py_ssize_t n_pairs = pair_gauss.shape[0]
    r_re_arr = np.zeros(n_cells)
    r_im_arr = np.zeros(n_cells)
    pre_re_out = np.empty(n_pairs)
    pre_im_out = np.empty(n_pairs)
    cdef double[::1] r_re = r_re_arr
    cdef double[::1] r_im = r_im_arr
    cdef double[::1] pre_re_arr = pre_re_out
    cdef double[::1] pre_im_arr = pre_im_out
    cdef Py_ssize_t k, j, lo, hi
    cdef cnp.int64_t g
    cdef double pre_re, pre_im, acc_re, acc_im, t1, t2, new_re, new_im
    for k in range(n_cells):
        lo = seg_start[k]
        hi = seg_start[k + 1]
        if lo == hi:
            continue
        pre_re = 1.0
        pre_im = 0.0
        acc_re = 0.0
        acc_im = 0.0
        for j in range(lo, hi):
            g = pair_gauss[j]
            pre_re_arr[j] = pre_re
            pre_im_arr[j] = pre_im
            t1 = w[j] * s_re[g]
            t2 = w[j] * s_im[g]
            acc_re += t1 * pre_re - t2 * pre_im
            acc_im += t1 * pre_im + t2 * pre_re
            new_re = pre_re * d_re[g] - pre_im * d_im[g]
            new_im = pre_re * d_im[g] + pre_im * d_re[g]
            pre_re = new_re
            pre_im = new_im
        r_re[k] = acc_re
        r_im[k] = acc_im
    return r_re_arr, r_im_arr, pre_re_out, pre_im_out


def accumulate_backward(
    cnp.int64_t[::1] seg_start,
    cnp.int64_t[::1] pair_gauss,
    double[::1] w,
    double[::1] s_re,
    double[::1] s_im,
    double[::1] d_re,
    double[::1] d_im,
    double[::1] pre_re_arr,
    double[::1] pre_im_arr,
    double[::1] adj_r_re,
    double[::1] adj_r_im,
    Py_ssize_t n_gauss,
):
    cdef Py_ssize_t n_cells = seg_start.shape[0] - 1
    cdef Py_ssize_t n_pairs = pair_gauss.shape[0]
    adj_w_arr = np.zeros(n_pairs)
    adj_s_re_arr = np.zeros(n_gauss)
    adj_s_im_arr = np.zeros(n_gauss)
    adj_d_re_arr = np.zeros(n_gauss)
    adj_d_im_arr = np.zeros(n_gauss)
    cdef double[::1] adj_w = adj_w_arr
    cdef double[::1] adj_s_re = adj_s_re_arr
    cdef double[::1] adj_s_im = adj_s_im_arr
    cdef double[::1] adj_d_re = adj_d_re_arr
    cdef double[::1] adj_d_im = adj_d_im_arr
    cdef Py_ssize_t k, j, lo, hi
    cdef cnp.int64_t g
    cdef double ar, ai, acc_re, acc_im, pre_re, pre_im
    cdef double t1, t2, u_re, u_im, new_re, new_im
    for k in range(n_cells):
        lo = seg_start[k]
        hi = seg_start[k + 1]
        if lo == hi:
            continue
        ar = adj_r_re[k]
        ai = adj_r_im[k]
        acc_re = 0.0
        acc_im = 0.0
        for j in range(hi - 1, lo - 1, -1):
            g = pair_gauss[j]
            pre_re = pre_re_arr[j]
            pre_im = pre_im_arr[j]
            t1 = w[j] * s_re[g]
            t2 = w[j] * s_im[g]
            u_re = s_re[g] * pre_re - s_im[g] * pre_im
            u_im = s_re[g] * pre_im + s_im[g] * pre_re
            adj_w[j] = u_re * ar + u_im * ai
            adj_s_re[g] += w[j] * (pre_re * ar + pre_im * ai)
            adj_s_im[g] += w[j] * (pre_re * ai - pre_im * ar)
            if j < hi - 1:
                adj_d_re[g] += pre_re * acc_re + pre_im * acc_im
                adj_d_im[g] += pre_re * acc_im - pre_im * acc_re
                new_re = (t1 * ar + t2 * ai) + (d_re[g] * acc_re + d_im[g] * acc_im)
                new_im = (t1 * ai - t2 * ar) + (d_re[g] * acc_im - d_im[g] * acc_re)
                acc_re = new_re
                acc_im = new_im
            else:
                acc_re = t1 * ar + t2 * ai
                acc_im = t1 * ai - t2 * ar
    return adj_w_arr, adj_s_re_arr, adj_s_im_arr, adj_d_re_arr, adj_d_im_arr
