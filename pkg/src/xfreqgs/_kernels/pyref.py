"""Pure-Python kernel backend.

Reference semantics for the hot loops: contributor-pair enumeration, stable
cell grouping, and the depth-ordered complex accumulation (forward and exact
backward).  The compiled backend in ``_accum.pyx`` mirrors this code; both
must produce bit-identical results, so keep floating-point expression shapes
in the two files in sync.
"""

from __future__ import annotations

import math

import numpy as np

BACKEND_NAME = "python"


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
    """Contributor pairs (gaussian, cell) under the Mahalanobis cutoff.

    Gaussians are traversed in the given order (callers pass the depth rank),
    cells row-major within each Gaussian.  Azimuth differences wrap into
    [-180, 180); pole-flagged Gaussians cover the whole top elevation row
    with zero azimuth offset.  Returns (gauss, cell, dalpha, dbeta, msq)
    arrays in traversal order.
    """
    out_g, out_c, out_da, out_db, out_m2 = [], [], [], [], []
    top_base = (n_elev - 1) * n_azim
    for g in order:
        g = int(g)
        if not active[g]:
            continue
        if pole[g]:
            c = conic_c[g]
            db = (n_elev - 1 + 0.5) * elev_step - u_beta[g]
            m2 = c * db * db
            if m2 <= cutoff_sq:
                for col in range(n_azim):
                    out_g.append(g)
                    out_c.append(top_base + col)
                    out_da.append(0.0)
                    out_db.append(db)
                    out_m2.append(m2)
            continue
        ua = u_alpha[g]
        ub = u_beta[g]
        a = conic_a[g]
        b = conic_b[g]
        c = conic_c[g]
        m_lo = int(math.ceil((ub - bb_db[g]) / elev_step - 0.5))
        m_hi = int(math.floor((ub + bb_db[g]) / elev_step - 0.5))
        if m_lo < 0:
            m_lo = 0
        if m_hi > n_elev - 1:
            m_hi = n_elev - 1
        if bb_da[g] >= 180.0:
            c_lo, c_hi = 0, n_azim - 1
        else:
            c_lo = int(math.ceil((ua - bb_da[g]) / azim_step - 0.5))
            c_hi = int(math.floor((ua + bb_da[g]) / azim_step - 0.5))
            if c_hi - c_lo + 1 >= n_azim:
                c_lo, c_hi = 0, n_azim - 1
        for m in range(m_lo, m_hi + 1):
            db = (m + 0.5) * elev_step - ub
            row_base = m * n_azim
            for j in range(c_lo, c_hi + 1):
                col = j % n_azim
                da = (col + 0.5) * azim_step - ua
                da = da - 360.0 * math.floor((da + 180.0) / 360.0)
                m2 = a * da * da + 2.0 * b * da * db + c * db * db
                if m2 <= cutoff_sq:
                    out_g.append(g)
                    out_c.append(row_base + col)
                    out_da.append(da)
                    out_db.append(db)
                    out_m2.append(m2)
    return (
        np.asarray(out_g, dtype=np.int64),
        np.asarray(out_c, dtype=np.int64),
        np.asarray(out_da, dtype=np.float64),
        np.asarray(out_db, dtype=np.float64),
        np.asarray(out_m2, dtype=np.float64),
    )


def group_by_cell(pair_cell, n_cells, pair_gauss, dalpha, dbeta, msq):
    """Stable grouping by cell (same order as a stable argsort).

    Returns (seg_start, gauss, cell, dalpha, dbeta, msq) with all pair
    arrays compacted into cell-grouped order.
    """
    pair_cell = np.asarray(pair_cell, dtype=np.int64)
    perm = np.argsort(pair_cell, kind="stable")
    counts = np.bincount(pair_cell, minlength=n_cells)
    seg_start = np.zeros(n_cells + 1, dtype=np.int64)
    np.cumsum(counts, out=seg_start[1:])
    return (
        seg_start,
        np.ascontiguousarray(pair_gauss)[perm],
        pair_cell[perm],
        np.ascontiguousarray(dalpha)[perm],
        np.ascontiguousarray(dbeta)[perm],
        np.ascontiguousarray(msq)[perm],
    )


def weight_backward(
    pair_gauss,
    dalpha,
    dbeta,
    w,
    adj_w,
    conic_a,
    conic_b,
    conic_c,
    pole,
    n_gauss,
):
    """Adjoints of w = exp(-m2/2) back to the footprint conic and the
    projected center, accumulated per Gaussian in pair order.

    Pole-caught Gaussians keep their conic adjoints but drop the center
    adjoints (their projection is frozen at the catch-all row).
    """
    adj_m2 = -0.5 * w * adj_w
    adj_ca = np.bincount(pair_gauss, weights=dalpha * dalpha * adj_m2, minlength=n_gauss)
    adj_cb = np.bincount(
        pair_gauss, weights=2.0 * dalpha * dbeta * adj_m2, minlength=n_gauss
    )
    adj_cc = np.bincount(pair_gauss, weights=dbeta * dbeta * adj_m2, minlength=n_gauss)
    a = conic_a[pair_gauss]
    b = conic_b[pair_gauss]
    c = conic_c[pair_gauss]
    adj_da = (2.0 * a * dalpha + 2.0 * b * dbeta) * adj_m2
    adj_db = (2.0 * b * dalpha + 2.0 * c * dbeta) * adj_m2
    pole_pair = pole[pair_gauss].astype(bool)
    adj_da[pole_pair] = 0.0
    adj_db[pole_pair] = 0.0
    adj_ua = np.bincount(pair_gauss, weights=-adj_da, minlength=n_gauss)
    adj_ub = np.bincount(pair_gauss, weights=-adj_db, minlength=n_gauss)
    return adj_ca, adj_cb, adj_cc, adj_ua, adj_ub


def accumulate_forward(seg_start, pair_gauss, w, s_re, s_im, d_re, d_im):
    """Ordered complex accumulation per cell.

    Per cell k over its depth-ordered pairs j: the pair's term is
    (w_j * S_gj) * pre_j, where pre_j is the running product of the
    attenuations of all earlier pairs in the cell.  Returns the per-cell
    complex response and the per-pair prefix products (needed by backward).
    """
    n_cells = len(seg_start) - 1
    n_pairs = len(pair_gauss)
    r_re = np.zeros(n_cells)
    r_im = np.zeros(n_cells)
    pre_re_arr = np.empty(n_pairs)
    pre_im_arr = np.empty(n_pairs)
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
    return r_re, r_im, pre_re_arr, pre_im_arr


def accumulate_backward(
    seg_start,
    pair_gauss,
    w,
    s_re,
    s_im,
    d_re,
    d_im,
    pre_re_arr,
    pre_im_arr,
    adj_r_re,
    adj_r_im,
    n_gauss,
):
    """Exact adjoints of accumulate_forward.

    Returns per-pair weight adjoints and per-Gaussian adjoints of the signal
    and attenuation values (accumulated over cells in ascending cell order,
    reverse pair order within a cell).
    """
    n_cells = len(seg_start) - 1
    n_pairs = len(pair_gauss)
    adj_w = np.zeros(n_pairs)
    adj_s_re = np.zeros(n_gauss)
    adj_s_im = np.zeros(n_gauss)
    adj_d_re = np.zeros(n_gauss)
    adj_d_im = np.zeros(n_gauss)
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
            # term = w * (S * pre): adjoint of w is Re(conj(S*pre) * adjR)
            u_re = s_re[g] * pre_re - s_im[g] * pre_im
            u_im = s_re[g] * pre_im + s_im[g] * pre_re
            adj_w[j] = u_re * ar + u_im * ai
            # adj_S += w * conj(pre) * adjR
            adj_s_re[g] += w[j] * (pre_re * ar + pre_im * ai)
            adj_s_im[g] += w[j] * (pre_re * ai - pre_im * ar)
            if j < hi - 1:
                # acc holds the adjoint of the next pair's prefix product
                adj_d_re[g] += pre_re * acc_re + pre_im * acc_im
                adj_d_im[g] += pre_re * acc_im - pre_im * acc_re
                new_re = (t1 * ar + t2 * ai) + (d_re[g] * acc_re + d_im[g] * acc_im)
                new_im = (t1 * ai - t2 * ar) + (d_re[g] * acc_im - d_im[g] * acc_re)
                acc_re = new_re
                acc_im = new_im
            else:
                acc_re = t1 * ar + t2 * ai
                acc_im = t1 * ai - t2 * ar
    return adj_w, adj_s_re, adj_s_im, adj_d_re, adj_d_im
