"""NumPy implementations of the hot kernels.

These are the reference implementations; madbal._ckernels holds the compiled
mirrors.  The two backends are kept operation-for-operation identical so that
slic_iterate and connected_components agree bitwise and fused_pixel_uncertainty
agrees to ~1e-15 relative (libm vs vectorized log/exp is the only divergence).
Keep expression trees in sync with _ckernels.pyx when touching this file.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse
import scipy.sparse.csgraph


def _masked_log(x):
    return np.where(x > 0, np.log(np.where(x > 0, x, 1.0)), 0.0)


def fused_pixel_uncertainty(probs, heads, weights, loss_scores, boundary,
                            with_js: bool, with_mult: bool):
    """Per-pixel uncertainty over [C,H,W] probability maps.

    probs: float64 [C,H,W] final-head distribution per pixel.
    heads: float64 [3,C,H,W] auxiliary-head distributions.
    weights: float64 [3,H,W] per-pixel head weights.
    loss_scores: float64 [2,H,W] logits, channel 0 center, channel 1 boundary.
    boundary: uint8 [H,W], 1 on boundary pixels.

    Returns float64 [H,W]:
        u = (H(p) + sum_k w_k * JS(p, q_k)) * exp(sigmoid(z))
    where z is the center logit on center pixels and the boundary logit on
    boundary pixels; the JS sum is dropped when with_js is false and the
    exp(sigmoid) multiplier when with_mult is false.
    """
    C, H, W = probs.shape
    logp = _masked_log(probs)
    u = np.zeros((H, W), dtype=np.float64)
    for c in range(C):
        u -= probs[c] * logp[c]
    if with_js:
        for k in range(3):
            acc = np.zeros((H, W), dtype=np.float64)
            for c in range(C):
                p = probs[c]
                q = heads[k, c]
                m = 0.5 * (p + q)
                lm = _masked_log(m)
                lq = _masked_log(q)
                tp = np.where(p > 0, p * (logp[c] - lm), 0.0)
                tq = np.where(q > 0, q * (lq - lm), 0.0)
                acc += 0.5 * (tp + tq)
            u = u + weights[k] * acc
    if with_mult:
        z = np.where(boundary == 0, loss_scores[0], loss_scores[1])
        with np.errstate(over="ignore", invalid="ignore"):
            sig = np.where(z >= 0.0,
                           1.0 / (1.0 + np.exp(-z)),
                           np.exp(z) / (1.0 + np.exp(z)))
        u = u * np.exp(sig)
    return u


def slic_iterate(lab, centroids, labels, ratio2: float, radius: int, n_iters: int):
    """Windowed k-means iterations in (L,a,b,y,x) space.

    lab: float64 [H,W,3]; centroids: float64 [n,5] columns (L,a,b,y,x);
    labels: int32 [H,W] initial assignment.  Pixels outside every window keep
    their previous label.  Ties resolve to the lower cluster id (clusters are
    visited ascending with a strict < test).  Returns (labels, centroids).
    """
    H, W = lab.shape[0], lab.shape[1]
    n = centroids.shape[0]
    labels = np.array(labels, dtype=np.int32, copy=True)
    cent = np.array(centroids, dtype=np.float64, copy=True)
    L = np.ascontiguousarray(lab[:, :, 0], dtype=np.float64)
    A = np.ascontiguousarray(lab[:, :, 1], dtype=np.float64)
    B = np.ascontiguousarray(lab[:, :, 2], dtype=np.float64)
    ys = np.arange(H, dtype=np.float64)
    xs = np.arange(W, dtype=np.float64)
    yy = np.repeat(ys, W)
    xx = np.tile(xs, H)
    for _ in range(n_iters):
        best = np.full((H, W), np.inf, dtype=np.float64)
        for k in range(n):
            cy = cent[k, 3]
            cx = cent[k, 4]
            y0 = max(0, int(cy) - radius)
            y1 = min(H, int(cy) + radius + 1)
            x0 = max(0, int(cx) - radius)
            x1 = min(W, int(cx) + radius + 1)
            if y0 >= y1 or x0 >= x1:
                continue
            dL = L[y0:y1, x0:x1] - cent[k, 0]
            da = A[y0:y1, x0:x1] - cent[k, 1]
            db = B[y0:y1, x0:x1] - cent[k, 2]
            dy = ys[y0:y1, None] - cy
            dx = xs[None, x0:x1] - cx
            dist = dL * dL + da * da + db * db + ratio2 * (dy * dy + dx * dx)
            wbest = best[y0:y1, x0:x1]
            better = dist < wbest
            wbest[better] = dist[better]
            labels[y0:y1, x0:x1][better] = k
        flat = labels.ravel()
        cnt = np.bincount(flat, minlength=n).astype(np.float64)
        sums = np.empty((n, 5), dtype=np.float64)
        sums[:, 0] = np.bincount(flat, weights=L.ravel(), minlength=n)
        sums[:, 1] = np.bincount(flat, weights=A.ravel(), minlength=n)
        sums[:, 2] = np.bincount(flat, weights=B.ravel(), minlength=n)
        sums[:, 3] = np.bincount(flat, weights=yy, minlength=n)
        sums[:, 4] = np.bincount(flat, weights=xx, minlength=n)
        nz = cnt > 0
        cent[nz] = sums[nz] / cnt[nz, None]
    return labels, cent


def connected_components(labels):
    """4-connected components of a multi-valued label map.

    Returns int32 [H,W] component ids numbered 0..ncomp-1 in row-major
    first-occurrence order (both backends normalize to this order).
    """
    labels = np.asarray(labels)
    H, W = labels.shape
    n = H * W
    idx = np.arange(n, dtype=np.int64).reshape(H, W)
    vsame = labels[1:, :] == labels[:-1, :]
    hsame = labels[:, 1:] == labels[:, :-1]
    rows = np.concatenate([idx[1:, :][vsame], idx[:, 1:][hsame]])
    cols = np.concatenate([idx[:-1, :][vsame], idx[:, :-1][hsame]])
    graph = scipy.sparse.coo_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    ncomp, comp = scipy.sparse.csgraph.connected_components(graph, directed=False)
    first = np.full(ncomp, n, dtype=np.int64)
    np.minimum.at(first, comp, np.arange(n, dtype=np.int64))
    order = np.argsort(first)
    rank = np.empty(ncomp, dtype=np.int64)
    rank[order] = np.arange(ncomp, dtype=np.int64)
    return rank[comp].reshape(H, W).astype(np.int32)
