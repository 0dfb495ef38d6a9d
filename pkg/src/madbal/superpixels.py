"""Superpixel segmentation, patch featurization and clustering.

The built-in segmenter is SLIC-style: windowed k-means in (L,a,b,y,x) space on
a regular seed grid, then connectivity enforcement.  An external map dropped
at images/<id>/superpixels.mdbt bypasses it.  Features are a hand-crafted
198-d descriptor of the 16x16 patch around each superpixel; features.mdbt
overrides them per image when present.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage
from scipy.spatial.distance import cdist

from madbal import kernels

PATCH = 16
FEATURE_DIM = 198


def target_superpixel_count(h: int, w: int) -> int:
    """Number of 16x16 tiles covering the image, the segmentation target."""
    if h < 1 or w < 1:
        raise ValueError("image must be non-empty")
    return math.ceil(h / PATCH) * math.ceil(w / PATCH)


def rgb_to_lab(rgb) -> np.ndarray:
    """sRGB uint8 [H,W,3] to CIELAB float64 (D65 white point)."""
    c = np.asarray(rgb, dtype=np.float64) / 255.0
    linear = np.where(c <= 0.04045, c / 12.92, ((c + 0.055) / 1.055) ** 2.4)
    m = np.array([[0.4124564, 0.3575761, 0.1804375],
                  [0.2126729, 0.7151522, 0.0721750],
                  [0.0193339, 0.1191920, 0.9503041]])
    xyz = linear @ m.T
    xyz /= np.array([0.95047, 1.0, 1.08883])
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz),
                 xyz / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


@dataclass
class SuperpixelMap:
    labels: np.ndarray  # int32 [H,W]
    count: int

    @classmethod
    def from_labels(cls, labels, validate=True) -> "SuperpixelMap":
        labels = np.asarray(labels, dtype=np.int32)
        sp = cls(labels=labels, count=int(labels.max()) + 1)
        if validate:
            sp.validate()
        return sp

    def validate(self) -> None:
        if self.labels.ndim != 2:
            raise ValueError("superpixel map must be 2-d")
        if self.labels.min() < 0:
            raise ValueError("negative superpixel id")
        counts = np.bincount(self.labels.ravel(), minlength=self.count)
        if len(counts) != self.count or (counts == 0).any():
            raise ValueError("superpixel ids must be contiguous 0..S-1, all non-empty")
        comp = kernels.connected_components(self.labels)
        if int(comp.max()) + 1 != self.count:
            raise ValueError("superpixels must be 4-connected")


def _seed_grid(h, w, n_target):
    n_rows = int(np.floor(np.sqrt(n_target * h / w) + 0.5))
    n_rows = min(max(n_rows, 1), min(h, n_target))
    n_cols = int(np.floor(n_target / n_rows + 0.5))
    n_cols = min(max(n_cols, 1), w)
    sy = np.array([int((i + 0.5) * h / n_rows) for i in range(n_rows)])
    sx = np.array([int((j + 0.5) * w / n_cols) for j in range(n_cols)])
    return n_rows, n_cols, sy, sx


def _enforce_connectivity(labels) -> np.ndarray:
    """Keep each label's largest component; merge the rest into neighbors.

    Orphan components are processed in first-occurrence order and absorbed by
    the adjacent superpixel that is currently largest (ties to the smaller
    label).  Surviving labels are renumbered contiguously, ascending.
    """
    comp = kernels.connected_components(labels)
    ncomp = int(comp.max()) + 1
    flat_comp = comp.ravel()
    flat_lab = labels.ravel()
    first = np.full(ncomp, flat_comp.size, dtype=np.int64)
    np.minimum.at(first, flat_comp, np.arange(flat_comp.size, dtype=np.int64))
    comp_label = flat_lab[first].astype(np.int64)
    comp_size = np.bincount(flat_comp, minlength=ncomp)

    keep: dict[int, int] = {}
    for cid in range(ncomp):
        lab = int(comp_label[cid])
        if lab not in keep or comp_size[cid] > comp_size[keep[lab]]:
            keep[lab] = cid
    kept = set(keep.values())
    if len(kept) == ncomp:
        # already connected; just compact the ids
        return _relabel(labels)

    # component adjacency from 4-neighbor pairs
    pairs = np.concatenate([
        np.stack([comp[1:, :].ravel(), comp[:-1, :].ravel()], axis=1),
        np.stack([comp[:, 1:].ravel(), comp[:, :-1].ravel()], axis=1),
    ])
    pairs = pairs[pairs[:, 0] != pairs[:, 1]]
    adj: dict[int, set] = {}
    for a, b in np.unique(pairs, axis=0):
        adj.setdefault(int(a), set()).add(int(b))
        adj.setdefault(int(b), set()).add(int(a))

    cur_label = comp_label.copy()
    label_size = np.bincount(flat_lab, minlength=int(flat_lab.max()) + 1).astype(np.int64)
    # orphans may only merge toward components already resolved (kept, or
    # merged in an earlier step), otherwise the target label can move away
    # later and leave this component stranded; sweep until all are absorbed
    resolved = set(kept)
    pending = [cid for cid in range(ncomp) if cid not in kept]
    while pending:
        remaining = []
        for cid in pending:
            candidates = sorted({int(cur_label[n])
                                 for n in adj.get(cid, set()) if n in resolved})
            if not candidates:
                remaining.append(cid)
                continue
            target = max(candidates, key=lambda lb: (label_size[lb], -lb))
            label_size[cur_label[cid]] -= comp_size[cid]
            label_size[target] += comp_size[cid]
            cur_label[cid] = target
            resolved.add(cid)
        if len(remaining) == len(pending):
            break  # nothing reachable (cannot happen on a connected grid)
        pending = remaining
    return _relabel(cur_label[comp].astype(np.int32))


def _relabel(labels) -> np.ndarray:
    uniq, inv = np.unique(labels, return_inverse=True)
    return inv.reshape(labels.shape).astype(np.int32)


def slic_segment(image, n_target: int, compactness: float = 10.0,
                 seed: int = 0) -> SuperpixelMap:
    """Segment an RGB image into ~n_target compact superpixels.

    Deterministic; the seed parameter is part of the signature for interface
    stability but the algorithm has no random component.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if n_target < 1:
        raise ValueError("n_target must be >= 1")
    if n_target > h * w:
        raise ValueError(f"n_target {n_target} exceeds pixel count {h * w}")
    lab = np.ascontiguousarray(rgb_to_lab(image))
    n_rows, n_cols, sy, sx = _seed_grid(h, w, n_target)
    n_seeds = n_rows * n_cols
    rows = np.repeat(sy, n_cols)
    cols = np.tile(sx, n_rows)
    cent0 = np.stack([lab[rows, cols, 0], lab[rows, cols, 1], lab[rows, cols, 2],
                      rows.astype(np.float64), cols.astype(np.float64)], axis=1)
    cell_r = (np.arange(h, dtype=np.int64) * n_rows // h)[:, None]
    cell_c = (np.arange(w, dtype=np.int64) * n_cols // w)[None, :]
    init = (cell_r * n_cols + cell_c).astype(np.int32)
    step = math.sqrt(h * w / n_seeds)
    ratio2 = (compactness / step) ** 2
    radius = int(step) + 1
    labels, _ = kernels.slic_iterate(lab, np.ascontiguousarray(cent0),
                                     init, ratio2, radius, 10)
    labels = _enforce_connectivity(np.asarray(labels))
    return SuperpixelMap.from_labels(labels)


def bilinear_resize(src, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resample; identity when sizes match."""
    src = np.asarray(src, dtype=np.float64)
    h, w = src.shape[:2]
    sy = np.clip((np.arange(out_h) + 0.5) * h / out_h - 0.5, 0, h - 1)
    sx = np.clip((np.arange(out_w) + 0.5) * w / out_w - 0.5, 0, w - 1)
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = sy - y0
    fx = sx - x0
    if src.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    a = src[np.ix_(y0, x0)]
    b = src[np.ix_(y0, x1)]
    c = src[np.ix_(y1, x0)]
    d = src[np.ix_(y1, x1)]
    top = a * (1 - fx) + b * fx
    bottom = c * (1 - fx) + d * fx
    return top * (1 - fy) + bottom * fy


def _square_indices(r0, r1, c0, c1, h, w):
    # minimal square centered on the bbox, clipped to the image (edge replicate)
    bh = r1 - r0 + 1
    bw = c1 - c0 + 1
    side = max(bh, bw)
    top = r0 - (side - bh) // 2
    left = c0 - (side - bw) // 2
    rows = np.clip(np.arange(top, top + side), 0, h - 1)
    cols = np.clip(np.arange(left, left + side), 0, w - 1)
    return rows, cols


def extract_patch(image, sp_map: SuperpixelMap, superpixel_id: int) -> np.ndarray:
    """16x16 float patch (range [0,1]) around one superpixel."""
    if not 0 <= superpixel_id < sp_map.count:
        raise ValueError(f"superpixel id {superpixel_id} out of range")
    image = np.asarray(image)
    h, w = image.shape[:2]
    mask = sp_map.labels == superpixel_id
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    ridx, cidx = _square_indices(rows[0], rows[-1], cols[0], cols[-1], h, w)
    square = image[np.ix_(ridx, cidx)].astype(np.float64) / 255.0
    return bilinear_resize(square, PATCH, PATCH)


def _batch_features(patches) -> np.ndarray:
    """Featurize a [S,16,16,3] stack of patches in [0,1]; returns [S,198]."""
    p = np.asarray(patches, dtype=np.float64)
    s = p.shape[0]
    means = p.mean(axis=(1, 2))
    stds = p.std(axis=(1, 2))
    blocks = p.reshape(s, 4, 4, 4, 4, 3).mean(axis=(2, 4)).reshape(s, 48)
    bins = np.minimum((p * 16).astype(np.int64), 15)
    hist = np.zeros((s, 3, 16))
    for ch in range(3):
        idx = (np.arange(s)[:, None, None] * 16 + bins[:, :, :, ch]).ravel()
        hist[:, ch, :] = np.bincount(idx, minlength=s * 16).reshape(s, 16)
    hist = hist.reshape(s, 48) / (PATCH * PATCH)
    gray = p.mean(axis=3)
    gy = np.gradient(gray, axis=1)
    gx = np.gradient(gray, axis=2)
    mag = np.hypot(gy, gx)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    obin = np.minimum((ang / np.pi * 6).astype(np.int64), 5)
    ci = (np.arange(PATCH) // 4)
    cell = ci[:, None] * 4 + ci[None, :]
    idx = (np.arange(s)[:, None, None] * 96 + cell[None] * 6 + obin).ravel()
    ghist = np.bincount(idx, weights=mag.ravel(),
                        minlength=s * 96).reshape(s, 16, 6)
    ghist = ghist / (ghist.sum(axis=2, keepdims=True) + 1e-12)
    return np.concatenate([means, stds, blocks, hist,
                           ghist.reshape(s, 96)], axis=1)


def builtin_features(patch) -> np.ndarray:
    """198-d descriptor of one 16x16 patch: color moments, 4x4 block-average
    grid, per-channel histograms and cell-wise gradient-orientation histograms.
    """
    patch = np.asarray(patch, dtype=np.float64)
    if patch.shape != (PATCH, PATCH, 3):
        raise ValueError(f"expected ({PATCH},{PATCH},3) patch, got {patch.shape}")
    return _batch_features(patch[None])[0]


def compute_features(image, sp_map: SuperpixelMap) -> np.ndarray:
    """Features for every superpixel of one image, [S,198]."""
    image = np.asarray(image)
    h, w = image.shape[:2]
    img01 = image.astype(np.float64) / 255.0
    boxes = scipy.ndimage.find_objects(sp_map.labels + 1)
    patches = np.empty((sp_map.count, PATCH, PATCH, 3))
    for sp_id, box in enumerate(boxes):
        rsl, csl = box
        ridx, cidx = _square_indices(rsl.start, rsl.stop - 1,
                                     csl.start, csl.stop - 1, h, w)
        square = img01[np.ix_(ridx, cidx)]
        patches[sp_id] = bilinear_resize(square, PATCH, PATCH)
    return _batch_features(patches)


@dataclass
class ClusterAssignment:
    assignment: np.ndarray     # int [S] cluster index per superpixel
    centroids: np.ndarray      # [K,D]
    sse_history: list = field(default_factory=list)


def kmeans(features, k: int, seed: int = 0, max_iter: int = 100) -> ClusterAssignment:
    """Lloyd's algorithm with k-means++ seeding.

    Runs to an assignment fixpoint (or max_iter); empty clusters are reseeded
    to the point farthest from its current centroid.  The recorded SSE history
    is asserted non-increasing.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("features must be [S,D]")
    s = x.shape[0]
    if k < 1 or k > s:
        raise ValueError(f"k must be in [1, {s}], got {k}")
    rng = np.random.default_rng(seed)

    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(s)]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total > 0:
            pick = rng.choice(s, p=d2 / total)
        else:
            pick = rng.integers(s)
        centroids[i] = x[pick]
        d2 = np.minimum(d2, ((x - centroids[i]) ** 2).sum(axis=1))

    history: list[float] = []
    assign = None
    for _ in range(max_iter):
        dist = cdist(x, centroids, "sqeuclidean")
        new_assign = dist.argmin(axis=1)
        sse = float(dist[np.arange(s), new_assign].sum())
        if history:
            assert sse <= history[-1] + 1e-9, "k-means SSE increased"
        history.append(sse)
        if assign is not None and (new_assign == assign).all():
            assign = new_assign
            break
        assign = new_assign
        counts = np.bincount(assign, minlength=k)
        own = dist[np.arange(s), assign]
        for ck in range(k):
            if counts[ck] == 0:
                far = int(own.argmax())
                centroids[ck] = x[far]
                own[far] = -1.0
            else:
                centroids[ck] = x[assign == ck].mean(axis=0)
    return ClusterAssignment(assignment=assign.astype(np.int64),
                             centroids=centroids, sse_history=history)
