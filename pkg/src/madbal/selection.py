"""Budget breakdown over the pixel -> superpixel -> cluster -> image hierarchy.

One round of selection: per-pixel uncertainty feeds superpixel scores (damped
by how common the superpixel's dominant label is inside its cluster), cluster
scores set the budget split, cluster budgets spread across images by presence,
and every image ends with exactly per_image_budget query pixels.  Ablation
modes drop individual stages.  The whole procedure is a pure function of the
session snapshot and the seed; every ordering ambiguity is resolved by an
explicit lexicographic tie-break.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np
import scipy.ndimage

from madbal.superpixels import SuperpixelMap
from madbal.uncertainty import PixelUncertaintyMap, UncertaintyVariant


class SelectionMode(enum.Enum):
    MADBAL = "madbal"
    AVERAGING = "averaging"
    NO_MATURITY = "no-maturity"
    VANILLA = "vanilla"
    RANDOM_BREAKDOWN = "random-breakdown"
    NO_BREAKDOWN = "no-breakdown"


_MODE_VARIANT = {
    SelectionMode.MADBAL: UncertaintyVariant.FULL,
    SelectionMode.AVERAGING: UncertaintyVariant.AVERAGING,
    SelectionMode.NO_MATURITY: UncertaintyVariant.NO_JS,
    SelectionMode.VANILLA: UncertaintyVariant.ENTROPY_ONLY,
    SelectionMode.RANDOM_BREAKDOWN: UncertaintyVariant.FULL,
    SelectionMode.NO_BREAKDOWN: UncertaintyVariant.FULL,
}


def variant_for_mode(mode: SelectionMode) -> UncertaintyVariant:
    return _MODE_VARIANT[mode]


def boundary_mask(pred, radius: int = 2) -> np.ndarray:
    """1 where any pixel within Chebyshev `radius` has a different class."""
    pred = np.asarray(pred)
    if radius <= 0:
        return np.zeros(pred.shape, dtype=np.uint8)
    size = 2 * radius + 1
    mx = scipy.ndimage.maximum_filter(pred, size=size, mode="nearest")
    mn = scipy.ndimage.minimum_filter(pred, size=size, mode="nearest")
    return (mx != mn).astype(np.uint8)


def dominant_labels(sp_labels, pred, n_superpixels: int, n_classes: int) -> np.ndarray:
    """Modal predicted class per superpixel; ties to the lowest class index."""
    flat = np.asarray(sp_labels, dtype=np.int64).ravel() * n_classes \
        + np.asarray(pred, dtype=np.int64).ravel()
    counts = np.bincount(flat, minlength=n_superpixels * n_classes)
    return counts.reshape(n_superpixels, n_classes).argmax(axis=1)


def cluster_class_prob(dominant, cluster_of_sp, n_clusters: int,
                       n_classes: int) -> tuple[np.ndarray, np.ndarray]:
    """Distribution of dominant labels inside each cluster.

    Returns (P [K,C], member counts [K]); empty clusters get a zero row.
    """
    dominant = np.asarray(dominant, dtype=np.int64)
    cluster_of_sp = np.asarray(cluster_of_sp, dtype=np.int64)
    counts = np.bincount(cluster_of_sp * n_classes + dominant,
                         minlength=n_clusters * n_classes)
    counts = counts.reshape(n_clusters, n_classes).astype(np.float64)
    members = counts.sum(axis=1)
    p = np.zeros_like(counts)
    nz = members > 0
    p[nz] = counts[nz] / members[nz, None]
    return p, members.astype(np.int64)


def superpixel_uncertainty(u_values, sp_mask, valid_mask, p_dominant: float) -> float:
    """Mean pixel uncertainty over the whole superpixel, damped by the
    abundance of its dominant label; 0 when no pixel is selectable."""
    sp_mask = np.asarray(sp_mask, dtype=bool)
    if not (sp_mask & np.asarray(valid_mask, dtype=bool)).any():
        return 0.0
    mean_u = float(np.asarray(u_values, dtype=np.float64)[sp_mask].mean())
    return mean_u * math.exp(-float(p_dominant))


def cluster_uncertainty(u_s_values) -> float:
    u = np.asarray(u_s_values, dtype=np.float64)
    if u.size == 0:
        raise ValueError("empty cluster")
    return float(u.mean())


def _snap(x: float) -> float:
    # absorb float noise so exact-integer shares stay exact
    nearest = round(x)
    if abs(x - nearest) <= 1e-9 * max(1.0, abs(nearest)):
        return float(nearest)
    return x


def raw_budgets(u_cl, b_t: int) -> list[int]:
    """Pre-trim budgets: ceil of each cluster's proportional share."""
    u = np.asarray(u_cl, dtype=np.float64)
    total = float(u.sum())
    if total <= 0:
        raise ValueError("all cluster uncertainties are zero")
    return [int(math.ceil(_snap(float(v) * b_t / total))) if v > 0 else 0
            for v in u]


def allocate_budgets(u_cl, b_t: int) -> list[int]:
    """Integer cluster budgets summing exactly to b_t.

    The ceiling in the proportional share overshoots; the excess is trimmed by
    removing one unit from each cluster in order of smallest fractional
    remainder (ties toward the larger index), never trimming a cluster twice.
    """
    if b_t < 1:
        raise ValueError("b_t must be >= 1")
    u = np.asarray(u_cl, dtype=np.float64)
    total = float(u.sum())
    budgets = raw_budgets(u, b_t)
    overshoot = sum(budgets) - b_t
    if overshoot <= 0:
        return budgets
    remainders = []
    for k, v in enumerate(u):
        if budgets[k] > 0:
            share = _snap(float(v) * b_t / total)
            remainders.append((share - math.floor(share), -k))
    for frac, neg_k in sorted(remainders):
        if overshoot == 0:
            break
        k = -neg_k
        if budgets[k] > 0:
            budgets[k] -= 1
            overshoot -= 1
    return budgets


@dataclass
class SuperpixelStats:
    image_id: str
    superpixel_id: int
    dominant_label: int
    mean_pixel_uncertainty: float
    u_s: float
    cluster: int
    eligible: bool


@dataclass
class ClusterStats:
    cluster: int
    class_prob: np.ndarray
    u_cl: float
    budget: int
    n_superpixels: int


@dataclass
class Query:
    image_id: str
    row: int
    col: int
    u_value: float
    superpixel_id: int
    cluster: int

    def to_dict(self) -> dict:
        return {"image_id": self.image_id, "row": self.row, "col": self.col,
                "u_value": self.u_value, "superpixel_id": self.superpixel_id,
                "cluster": self.cluster}

    @classmethod
    def from_dict(cls, d) -> "Query":
        return cls(image_id=d["image_id"], row=d["row"], col=d["col"],
                   u_value=d["u_value"], superpixel_id=d["superpixel_id"],
                   cluster=d["cluster"])


@dataclass
class QuerySet:
    round: int
    queries: list

    def to_dict(self) -> dict:
        return {"round": self.round, "queries": [q.to_dict() for q in self.queries]}

    @classmethod
    def from_dict(cls, d) -> "QuerySet":
        return cls(round=d["round"], queries=[Query.from_dict(q) for q in d["queries"]])


@dataclass
class SelectionReport:
    mode: str
    seed: int
    b_t: int
    eligible_images: list
    per_cluster: list = field(default_factory=list)   # dicts: cluster, u_cl, budget, ...
    per_image_counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seed": self.seed, "b_t": self.b_t,
                "eligible_images": self.eligible_images,
                "per_cluster": self.per_cluster,
                "per_image_counts": self.per_image_counts}


@dataclass
class ImageSelectionData:
    """Per-image inputs to selection, precomputed by the round driver."""
    image_id: str
    u_map: PixelUncertaintyMap
    pred: np.ndarray | None = None                 # [H,W] argmax classes
    sp: SuperpixelMap | None = None
    clusters: np.ndarray | None = None             # cluster id per superpixel


class _PixelQueue:
    """Valid pixels of one superpixel, best-first ((-u, row, col) order)."""

    def __init__(self, rows, cols, u):
        order = np.lexsort((cols, rows, -u))
        self.rows = rows[order]
        self.cols = cols[order]
        self.u = u[order]
        self.pos = 0

    def take(self):
        if self.pos >= len(self.rows):
            return None
        i = self.pos
        self.pos += 1
        return int(self.rows[i]), int(self.cols[i]), float(self.u[i])


def _image_pixel_ranking(u64, valid):
    rows, cols = np.nonzero(valid)
    u = u64[rows, cols]
    order = np.lexsort((cols, rows, -u))
    return rows[order], cols[order], u[order]


def select_queries(manifest_image_ids, per_image_budget: int, num_classes: int,
                   data: dict, mode: SelectionMode, seed: int, round_index: int,
                   n_clusters: int, n_per_sp: int = 1):
    """Produce the round's QuerySet plus the stats behind it.

    data maps image_id -> ImageSelectionData.  Returns (QuerySet,
    SelectionReport, [SuperpixelStats], [ClusterStats]); the stats lists are
    empty in no-breakdown mode.
    """
    image_ids = [i for i in manifest_image_ids if i in data]
    eligible = [i for i in image_ids if bool(data[i].u_map.valid_mask.any())]
    b_t = per_image_budget * len(eligible)
    report = SelectionReport(mode=mode.value, seed=seed, b_t=b_t,
                             eligible_images=list(eligible))
    u64 = {i: data[i].u_map.values.astype(np.float64) for i in eligible}

    if mode == SelectionMode.NO_BREAKDOWN:
        queries = []
        for image_id in eligible:
            rows, cols, u = _image_pixel_ranking(u64[image_id],
                                                 data[image_id].u_map.valid_mask)
            n = min(per_image_budget, len(rows))
            queries += [Query(image_id, int(rows[i]), int(cols[i]), float(u[i]), -1, -1)
                        for i in range(n)]
            report.per_image_counts[image_id] = n
        return QuerySet(round=round_index, queries=queries), report, [], []

    cluster_of = {}
    if mode == SelectionMode.RANDOM_BREAKDOWN:
        rng = np.random.default_rng(seed)
        for image_id in eligible:
            cluster_of[image_id] = rng.integers(
                0, n_clusters, size=data[image_id].sp.count).astype(np.int64)
    else:
        for image_id in eligible:
            cluster_of[image_id] = np.asarray(data[image_id].clusters, dtype=np.int64)

    # per-superpixel statistics
    dom = {}
    mean_u = {}
    valid_cnt = {}
    for image_id in eligible:
        d = data[image_id]
        flat_sp = d.sp.labels.ravel().astype(np.int64)
        dom[image_id] = dominant_labels(d.sp.labels, d.pred, d.sp.count, num_classes)
        sums = np.bincount(flat_sp, weights=u64[image_id].ravel(), minlength=d.sp.count)
        sizes = np.bincount(flat_sp, minlength=d.sp.count)
        mean_u[image_id] = sums / sizes
        valid_cnt[image_id] = np.bincount(flat_sp, weights=d.u_map.valid_mask.ravel(),
                                          minlength=d.sp.count)

    all_dom = np.concatenate([dom[i] for i in eligible])
    all_cluster = np.concatenate([cluster_of[i] for i in eligible])
    p_cl, members = cluster_class_prob(all_dom, all_cluster, n_clusters, num_classes)

    sp_stats: list[SuperpixelStats] = []
    u_s = {}
    for image_id in eligible:
        cl = cluster_of[image_id]
        dmp = np.exp(-p_cl[cl, dom[image_id]])
        ok = valid_cnt[image_id] > 0
        u_s[image_id] = np.where(ok, mean_u[image_id] * dmp, 0.0)
        for sp_id in range(data[image_id].sp.count):
            sp_stats.append(SuperpixelStats(
                image_id=image_id, superpixel_id=sp_id,
                dominant_label=int(dom[image_id][sp_id]),
                mean_pixel_uncertainty=float(mean_u[image_id][sp_id]),
                u_s=float(u_s[image_id][sp_id]),
                cluster=int(cl[sp_id]), eligible=bool(ok[sp_id])))

    all_us = np.concatenate([u_s[i] for i in eligible])
    u_cl = np.zeros(n_clusters)
    nz = members > 0
    u_cl[nz] = np.bincount(all_cluster, weights=all_us,
                           minlength=n_clusters)[nz] / members[nz]
    if float(u_cl.sum()) > 0:
        budgets = allocate_budgets(u_cl, b_t)
    else:
        budgets = [0] * n_clusters  # degenerate: rebalance fills every image
    for k in range(n_clusters):
        report.per_cluster.append({
            "cluster": k, "u_cl": float(u_cl[k]), "budget": int(budgets[k]),
            "n_superpixels": int(members[k]),
            "class_prob": [float(v) for v in p_cl[k]]})
    cluster_stats = [ClusterStats(cluster=k, class_prob=p_cl[k],
                                  u_cl=float(u_cl[k]), budget=int(budgets[k]),
                                  n_superpixels=int(members[k]))
                     for k in range(n_clusters)]

    # cluster budget -> per-image shares, proportional to superpixel presence
    sp_count_by = {(i, k): 0 for i in eligible for k in range(n_clusters)}
    for i in eligible:
        cnts = np.bincount(cluster_of[i], minlength=n_clusters)
        for k in range(n_clusters):
            sp_count_by[(i, k)] = int(cnts[k])
    shares = {i: {} for i in eligible}
    for k in range(n_clusters):
        bk = budgets[k]
        total_sp = sum(sp_count_by[(i, k)] for i in eligible)
        if bk == 0 or total_sp == 0:
            continue
        quotas = {i: _snap(bk * sp_count_by[(i, k)] / total_sp) for i in eligible}
        base = {i: int(math.floor(quotas[i])) for i in eligible}
        leftover = bk - sum(base.values())
        by_rem = sorted(eligible, key=lambda i: (-round(quotas[i] - base[i], 12), i))
        for i in by_rem[:leftover]:
            base[i] += 1
        for i in eligible:
            if base[i] > 0:
                shares[i][k] = base[i]

    # within each (image, cluster): best superpixels first, round-robin pixels
    taken: dict[str, list[Query]] = {i: [] for i in eligible}
    queues: dict[tuple, _PixelQueue] = {}
    for image_id in eligible:
        d = data[image_id]
        valid = d.u_map.valid_mask
        for k, share in sorted(shares[image_id].items()):
            members_here = [sp_id for sp_id in range(d.sp.count)
                            if cluster_of[image_id][sp_id] == k
                            and valid_cnt[image_id][sp_id] > 0]
            order = sorted(members_here,
                           key=lambda s: (-u_s[image_id][s], s))
            got = 0
            ring = deque(order)
            while got < share and ring:
                sp_id = ring.popleft()
                key = (image_id, sp_id)
                if key not in queues:
                    mask = (d.sp.labels == sp_id) & valid
                    rows, cols = np.nonzero(mask)
                    queues[key] = _PixelQueue(rows, cols, u64[image_id][rows, cols])
                exhausted = False
                for _ in range(min(n_per_sp, share - got)):
                    pick = queues[key].take()
                    if pick is None:
                        exhausted = True
                        break
                    taken[image_id].append(Query(image_id, pick[0], pick[1],
                                                 pick[2], sp_id, k))
                    got += 1
                if not exhausted:
                    ring.append(sp_id)

    # per-image rebalance to exactly per_image_budget
    queries: list[Query] = []
    for image_id in eligible:
        d = data[image_id]
        picks = sorted(taken[image_id], key=lambda q: (-q.u_value, q.row, q.col))
        if len(picks) > per_image_budget:
            picks = picks[:per_image_budget]
        elif len(picks) < per_image_budget:
            have = {(q.row, q.col) for q in picks}
            rows, cols, u = _image_pixel_ranking(u64[image_id], d.u_map.valid_mask)
            cl = cluster_of[image_id]
            for i in range(len(rows)):
                if len(picks) >= per_image_budget:
                    break
                r, c = int(rows[i]), int(cols[i])
                if (r, c) in have:
                    continue
                sp_id = int(d.sp.labels[r, c])
                picks.append(Query(image_id, r, c, float(u[i]), sp_id,
                                   int(cl[sp_id])))
                have.add((r, c))
            picks = sorted(picks, key=lambda q: (-q.u_value, q.row, q.col))
        report.per_image_counts[image_id] = len(picks)
        queries += picks

    return QuerySet(round=round_index, queries=queries), report, sp_stats, cluster_stats
