# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled mirrors of madbal._npkernels.

slic_iterate and connected_components are arithmetic-for-arithmetic identical
to the NumPy versions (bitwise-equal outputs); fused_pixel_uncertainty matches
them up to libm-vs-vectorized log/exp rounding.  Keep expression trees in sync
with _npkernels.py when touching this file.
"""

import numpy as np

from libc.math cimport log, exp, INFINITY


def fused_pixel_uncertainty(double[:, :, ::1] probs,
                            double[:, :, :, ::1] heads,
                            double[:, :, ::1] weights,
                            double[:, :, ::1] loss_scores,
                            unsigned char[:, ::1] boundary,
                            bint with_js, bint with_mult):
    cdef Py_ssize_t C = probs.shape[0]
    cdef Py_ssize_t H = probs.shape[1]
    cdef Py_ssize_t W = probs.shape[2]
    u_arr = np.zeros((H, W), dtype=np.float64)
    acc_arr = np.zeros((3, H, W), dtype=np.float64)
    lp_arr = np.zeros((H, W), dtype=np.float64)
    cdef double[:, ::1] u = u_arr
    cdef double[:, :, ::1] acc = acc_arr
    cdef double[:, ::1] lp = lp_arr
    cdef Py_ssize_t c, k, i, j
    cdef double p, q, m, lm, lq, tp, tq, z, sig

    for c in range(C):
        for i in range(H):
            for j in range(W):
                p = probs[c, i, j]
                if p > 0:
                    lp[i, j] = log(p)
                    u[i, j] -= p * lp[i, j]
                else:
                    lp[i, j] = 0.0
        if with_js:
            for k in range(3):
                for i in range(H):
                    for j in range(W):
                        p = probs[c, i, j]
                        q = heads[k, c, i, j]
                        m = 0.5 * (p + q)
                        lm = log(m) if m > 0 else 0.0
                        lq = log(q) if q > 0 else 0.0
                        tp = p * (lp[i, j] - lm) if p > 0 else 0.0
                        tq = q * (lq - lm) if q > 0 else 0.0
                        acc[k, i, j] += 0.5 * (tp + tq)
    if with_js:
        for k in range(3):
            for i in range(H):
                for j in range(W):
                    u[i, j] = u[i, j] + weights[k, i, j] * acc[k, i, j]
    if with_mult:
        for i in range(H):
            for j in range(W):
                if boundary[i, j] == 0:
                    z = loss_scores[0, i, j]
                else:
                    z = loss_scores[1, i, j]
                if z >= 0.0:
                    sig = 1.0 / (1.0 + exp(-z))
                else:
                    sig = exp(z) / (1.0 + exp(z))
                u[i, j] = u[i, j] * exp(sig)
    return u_arr


def slic_iterate(double[:, :, ::1] lab, centroids, labels,
                 double ratio2, int radius, int n_iters):
    cdef Py_ssize_t H = lab.shape[0]
    cdef Py_ssize_t W = lab.shape[1]
    cent_arr = np.array(centroids, dtype=np.float64, copy=True)
    lab_out = np.array(labels, dtype=np.int32, copy=True)
    cdef double[:, ::1] cent = cent_arr
    cdef int[:, ::1] lmap = lab_out
    cdef Py_ssize_t n = cent.shape[0]
    best_arr = np.empty((H, W), dtype=np.float64)
    cdef double[:, ::1] best = best_arr
    sums_arr = np.empty((n, 5), dtype=np.float64)
    cnt_arr = np.empty(n, dtype=np.float64)
    cdef double[:, ::1] sums = sums_arr
    cdef double[::1] cnt = cnt_arr
    cdef Py_ssize_t it, k, i, j, y0, y1, x0, x1
    cdef double cy, cx, dL, da, db, dy, dx, dist

    for it in range(n_iters):
        for i in range(H):
            for j in range(W):
                best[i, j] = INFINITY
        for k in range(n):
            cy = cent[k, 3]
            cx = cent[k, 4]
            y0 = max(0, <Py_ssize_t>cy - radius)
            y1 = min(H, <Py_ssize_t>cy + radius + 1)
            x0 = max(0, <Py_ssize_t>cx - radius)
            x1 = min(W, <Py_ssize_t>cx + radius + 1)
            for i in range(y0, y1):
                dy = i - cy
                for j in range(x0, x1):
                    dx = j - cx
                    dL = lab[i, j, 0] - cent[k, 0]
                    da = lab[i, j, 1] - cent[k, 1]
                    db = lab[i, j, 2] - cent[k, 2]
                    dist = dL * dL + da * da + db * db + ratio2 * (dy * dy + dx * dx)
                    if dist < best[i, j]:
                        best[i, j] = dist
                        lmap[i, j] = <int>k
        for k in range(n):
            cnt[k] = 0.0
            for j in range(5):
                sums[k, j] = 0.0
        for i in range(H):
            for j in range(W):
                k = lmap[i, j]
                cnt[k] += 1.0
                sums[k, 0] += lab[i, j, 0]
                sums[k, 1] += lab[i, j, 1]
                sums[k, 2] += lab[i, j, 2]
                sums[k, 3] += <double>i
                sums[k, 4] += <double>j
        for k in range(n):
            if cnt[k] > 0:
                for j in range(5):
                    cent[k, j] = sums[k, j] / cnt[k]
    return lab_out, cent_arr


def connected_components(int[:, ::1] labels):
    cdef Py_ssize_t H = labels.shape[0]
    cdef Py_ssize_t W = labels.shape[1]
    comp_arr = np.full((H, W), -1, dtype=np.int32)
    cdef int[:, ::1] comp = comp_arr
    stack_arr = np.empty(H * W, dtype=np.int64)
    cdef long long[::1] stack = stack_arr
    cdef Py_ssize_t i, j, y, x, top
    cdef int nid = 0
    cdef int lab

    for i in range(H):
        for j in range(W):
            if comp[i, j] >= 0:
                continue
            lab = labels[i, j]
            comp[i, j] = nid
            top = 0
            stack[top] = i * W + j
            top += 1
            while top > 0:
                top -= 1
                y = stack[top] // W
                x = stack[top] % W
                if y > 0 and comp[y - 1, x] < 0 and labels[y - 1, x] == lab:
                    comp[y - 1, x] = nid
                    stack[top] = (y - 1) * W + x
                    top += 1
                if y + 1 < H and comp[y + 1, x] < 0 and labels[y + 1, x] == lab:
                    comp[y + 1, x] = nid
                    stack[top] = (y + 1) * W + x
                    top += 1
                if x > 0 and comp[y, x - 1] < 0 and labels[y, x - 1] == lab:
                    comp[y, x - 1] = nid
                    stack[top] = y * W + x - 1
                    top += 1
                if x + 1 < W and comp[y, x + 1] < 0 and labels[y, x + 1] == lab:
                    comp[y, x + 1] = nid
                    stack[top] = y * W + x + 1
                    top += 1
            nid += 1
    return comp_arr
