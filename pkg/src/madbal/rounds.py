"""Active-learning round orchestration: seeding, oracles, metrics, the loop.

The engine never trains a model.  Each round it reads the head-output tensors
an adapter left in the session, selects query pixels, gets them labeled (from
ground truth, or by a human through the HTTP service) and appends the answers
to the pool.  The adapter is expected to refresh the tensors between rounds.
"""

from __future__ import annotations

import enum
import json
import time
from dataclasses import dataclass

import numpy as np
from PIL import Image

from madbal import mdbt
from madbal.selection import (ImageSelectionData, SelectionMode, QuerySet,
                              select_queries, variant_for_mode)
from madbal.session import (LabelRecord, Session, append_labels,
                            write_json_atomic)
from madbal.superpixels import (SuperpixelMap, compute_features, kmeans,
                                slic_segment, target_superpixel_count)
from madbal.uncertainty import HeadOutputs, pixel_uncertainty

DEFAULT_CLUSTERS = 12


class OracleKind(enum.Enum):
    SIMULATED = "sim"
    HUMAN = "human"


@dataclass
class RoundReport:
    round: int
    queries_issued: int
    labels_received: int
    pool_size_after: int
    per_cluster_budgets: list
    miou: float | None
    wall_time_seconds: float
    pending: bool = False

    def __post_init__(self):
        if self.labels_received > self.queries_issued:
            raise ValueError("labels_received cannot exceed queries_issued")

    def to_dict(self) -> dict:
        return {"round": self.round, "queries_issued": self.queries_issued,
                "labels_received": self.labels_received,
                "pool_size_after": self.pool_size_after,
                "per_cluster_budgets": list(self.per_cluster_budgets),
                "miou": self.miou,
                "wall_time_seconds": self.wall_time_seconds,
                "pending": self.pending}

    @classmethod
    def from_dict(cls, d: dict) -> "RoundReport":
        return cls(round=d["round"], queries_issued=d["queries_issued"],
                   labels_received=d["labels_received"],
                   pool_size_after=d["pool_size_after"],
                   per_cluster_budgets=d["per_cluster_budgets"],
                   miou=d["miou"], wall_time_seconds=d["wall_time_seconds"],
                   pending=d.get("pending", False))


def load_image(session: Session, image_id: str) -> np.ndarray:
    path = session.image_dir(image_id) / "image.png"
    return np.asarray(Image.open(path).convert("RGB"))


def load_gt(session: Session, image_id: str) -> np.ndarray:
    path = session.image_dir(image_id) / "gt.mdbt"
    if not path.exists():
        raise FileNotFoundError(
            f"{path} not found: ground truth is required for the simulated "
            "oracle; run with the human oracle (serve + UI) instead")
    return mdbt.read_tensor(path)


def seed_pool(session: Session, n_per_image: int, seed: int) -> list[LabelRecord]:
    """Label n uniformly random distinct pixels per image from ground truth."""
    if session.labels:
        raise ValueError("seed_pool requires an empty pool")
    if n_per_image < 1:
        raise ValueError("n_per_image must be >= 1")
    rng = np.random.default_rng(seed)
    records = []
    for image_id in session.manifest.image_ids:
        h, w = session.image_size(image_id)
        if n_per_image > h * w:
            raise ValueError(
                f"n_per_image {n_per_image} exceeds the {h * w} pixels of {image_id}")
        gt = load_gt(session, image_id)
        for flat in rng.choice(h * w, size=n_per_image, replace=False):
            r, c = divmod(int(flat), w)
            records.append(LabelRecord(image_id, r, c, int(gt[r, c]), -1, "seed"))
    append_labels(session, records)
    return records


def simulated_oracle(gt: dict, queries, round_index: int = 0) -> list[LabelRecord]:
    """Answer queries from ground truth maps (image_id -> I32 [H,W])."""
    records = []
    for q in queries:
        if q.image_id not in gt:
            raise KeyError(
                f"no ground truth for {q.image_id}; use the human oracle")
        cls = int(gt[q.image_id][q.row, q.col])
        records.append(LabelRecord(q.image_id, q.row, q.col, cls,
                                   round_index, "oracle"))
    return records


def miou(preds, gts, num_classes: int) -> float:
    """Mean IoU accumulated over images; classes absent from both sides are
    skipped rather than scored 0 or 1."""
    tp = np.zeros(num_classes, dtype=np.int64)
    fp = np.zeros(num_classes, dtype=np.int64)
    fn = np.zeros(num_classes, dtype=np.int64)
    preds, gts = list(preds), list(gts)
    if len(preds) != len(gts):
        raise ValueError("pred/gt count mismatch")
    for pred, gt in zip(preds, gts):
        pred = np.asarray(pred, dtype=np.int64)
        gt = np.asarray(gt, dtype=np.int64)
        if pred.shape != gt.shape:
            raise ValueError(f"shape mismatch {pred.shape} vs {gt.shape}")
        for name, arr in (("pred", pred), ("gt", gt)):
            if arr.size and (arr.min() < 0 or arr.max() >= num_classes):
                raise ValueError(f"{name} holds class ids outside [0, {num_classes})")
        cm = np.bincount(gt.ravel() * num_classes + pred.ravel(),
                         minlength=num_classes * num_classes)
        cm = cm.reshape(num_classes, num_classes)
        diag = np.diag(cm)
        tp += diag
        fp += cm.sum(axis=0) - diag
        fn += cm.sum(axis=1) - diag
    denom = tp + fp + fn
    present = denom > 0
    if not present.any():
        raise ValueError("no class present in either pred or gt")
    return float((tp[present] / denom[present]).mean())


def ensure_superpixels(session: Session, compactness: float = 10.0,
                       seed: int = 0) -> dict:
    """Superpixel map per image: an external superpixels.mdbt wins, otherwise
    the built-in segmentation runs once and is persisted as the cache."""
    maps = {}
    for image_id in session.manifest.image_ids:
        path = session.image_dir(image_id) / "superpixels.mdbt"
        if path.exists():
            labels = mdbt.read_tensor(path)
            if labels.shape != session.image_size(image_id):
                raise ValueError(f"{path} shape {labels.shape} does not match image")
            maps[image_id] = SuperpixelMap.from_labels(labels)
        else:
            img = load_image(session, image_id)
            h, w = img.shape[:2]
            maps[image_id] = slic_segment(img, target_superpixel_count(h, w),
                                          compactness=compactness, seed=seed)
            mdbt.write_tensor(path, maps[image_id].labels)
    return maps


def superpixel_features(session: Session, image_id: str,
                        sp: SuperpixelMap) -> np.ndarray:
    """Per-superpixel descriptors; an external features.mdbt overrides the
    built-in ones (adapters may drop in CNN features)."""
    path = session.image_dir(image_id) / "features.mdbt"
    if path.exists():
        feats = mdbt.read_tensor(path).astype(np.float64)
        if feats.ndim != 2 or feats.shape[0] != sp.count:
            raise ValueError(
                f"{path} has shape {feats.shape}, expected ({sp.count}, D)")
        return feats
    return compute_features(load_image(session, image_id), sp)


def cluster_superpixels(session: Session, sp_maps: dict, n_clusters: int,
                        seed: int) -> dict:
    """Cluster assignment per image for the current round, cached on disk."""
    round_dir = session.round_dir(session.manifest.round_index)
    path = round_dir / "clusters.json"
    ids = list(session.manifest.image_ids)
    if path.exists():
        d = json.loads(path.read_text())
        if d["k"] == n_clusters and set(d["assignment"]) == set(ids):
            out = {i: np.asarray(d["assignment"][i], dtype=np.int64) for i in ids}
            if all(len(out[i]) == sp_maps[i].count for i in ids):
                return out
    feats = np.concatenate([superpixel_features(session, i, sp_maps[i])
                            for i in ids])
    km = kmeans(feats, n_clusters, seed=seed)
    clusters, ofs = {}, 0
    for i in ids:
        n = sp_maps[i].count
        clusters[i] = km.assignment[ofs:ofs + n]
        ofs += n
    round_dir.mkdir(parents=True, exist_ok=True)
    write_json_atomic(path, {
        "k": n_clusters, "seed": seed,
        "assignment": {i: [int(x) for x in clusters[i]] for i in ids},
        "centroids": [[float(v) for v in row] for row in km.centroids]})
    return clusters


def _build_selection_data(session: Session, mode: SelectionMode,
                          n_clusters: int, compactness: float, seed: int,
                          audit: bool = True) -> dict:
    variant = variant_for_mode(mode)
    need_sp = mode != SelectionMode.NO_BREAKDOWN
    need_clusters = mode not in (SelectionMode.NO_BREAKDOWN,
                                 SelectionMode.RANDOM_BREAKDOWN)
    sp_maps = ensure_superpixels(session, compactness, seed) if need_sp else {}
    clusters = cluster_superpixels(session, sp_maps, n_clusters, seed) \
        if need_clusters else {}

    audit_dir = session.round_dir(session.manifest.round_index) / "uncertainty"
    if audit:
        audit_dir.mkdir(parents=True, exist_ok=True)
    data = {}
    for image_id in session.manifest.image_ids:
        ho = HeadOutputs.load(session.image_dir(image_id))
        labeled = session.labeled_mask(image_id)
        u_map = pixel_uncertainty(ho, labeled, variant)
        if audit:
            mdbt.write_tensor(audit_dir / f"{image_id}.mdbt", u_map.values)
        data[image_id] = ImageSelectionData(
            image_id=image_id, u_map=u_map,
            pred=ho.final.argmax(axis=0).astype(np.int32),
            sp=sp_maps.get(image_id), clusters=clusters.get(image_id))
    return data


def select_round(session: Session, mode: SelectionMode, seed: int,
                 n_clusters: int = DEFAULT_CLUSTERS, compactness: float = 10.0,
                 n_per_sp: int = 1):
    """Run selection for the current round and persist queries + report."""
    k = session.manifest.round_index
    round_dir = session.round_dir(k)
    round_dir.mkdir(parents=True, exist_ok=True)
    data = _build_selection_data(session, mode, n_clusters, compactness, seed)
    qs, report, sp_stats, cluster_stats = select_queries(
        list(session.manifest.image_ids), session.manifest.per_image_budget,
        session.manifest.num_classes, data, mode, seed, k, n_clusters,
        n_per_sp=n_per_sp)
    write_json_atomic(round_dir / "queries.json", qs.to_dict())
    write_json_atomic(round_dir / "report.json", {"selection": report.to_dict()})
    return qs, report, sp_stats, cluster_stats


def _predictions(session: Session) -> tuple[list, list]:
    preds, gts = [], []
    for image_id in session.manifest.image_ids:
        probs = mdbt.read_tensor(session.image_dir(image_id) / "probs_final.mdbt")
        preds.append(probs.argmax(axis=0).astype(np.int32))
        gts.append(load_gt(session, image_id))
    return preds, gts


def run_round(session: Session, mode: SelectionMode, oracle: OracleKind,
              seed: int, n_clusters: int = DEFAULT_CLUSTERS,
              compactness: float = 10.0, n_per_sp: int = 1) -> RoundReport:
    """One full AL round.  Simulated oracle resolves immediately; the human
    oracle leaves the round pending for the HTTP service to complete.

    Safe to re-run after a crash: if the round's labels were already appended
    the function only finalizes (no second append), and selection before the
    append is a pure function of the unchanged pool, so re-running reproduces
    the same queries.
    """
    t0 = time.monotonic()
    k = session.manifest.round_index
    round_dir = session.round_dir(k)

    already = [l for l in session.labels
               if l.round == k and l.source in ("oracle", "human")]
    if already:
        return _finalize_round(session, k, already, t0)

    qs, sel_report, _, _ = select_round(session, mode, seed, n_clusters,
                                        compactness, n_per_sp)
    budgets = [c["budget"] for c in sel_report.per_cluster]

    if oracle == OracleKind.HUMAN:
        report = RoundReport(
            round=k, queries_issued=len(qs.queries), labels_received=0,
            pool_size_after=len(session.labels), per_cluster_budgets=budgets,
            miou=None, wall_time_seconds=time.monotonic() - t0, pending=True)
        write_json_atomic(round_dir / "report.json",
                          {"selection": sel_report.to_dict(),
                           "round": report.to_dict()})
        return report

    gts = {i: load_gt(session, i) for i in session.manifest.image_ids}
    records = simulated_oracle(gts, qs.queries, round_index=k)
    append_labels(session, records)
    session.manifest.round_index = k + 1
    session.save_manifest()
    preds = [mdbt.read_tensor(session.image_dir(i) / "probs_final.mdbt")
             .argmax(axis=0).astype(np.int32)
             for i in session.manifest.image_ids]
    score = miou(preds, [gts[i] for i in session.manifest.image_ids],
                 session.manifest.num_classes)
    report = RoundReport(
        round=k, queries_issued=len(qs.queries), labels_received=len(records),
        pool_size_after=len(session.labels), per_cluster_budgets=budgets,
        miou=score, wall_time_seconds=time.monotonic() - t0, pending=False)
    write_json_atomic(round_dir / "report.json",
                      {"selection": sel_report.to_dict(),
                       "round": report.to_dict()})
    return report


def _finalize_round(session: Session, k: int, round_labels: list,
                    t0: float) -> RoundReport:
    """Recovery path: labels for round k are in the pool but the manifest was
    not advanced (crash between append and save).  Completes bookkeeping."""
    round_dir = session.round_dir(k)
    queries_path = round_dir / "queries.json"
    n_queries = len(round_labels)
    budgets = []
    if queries_path.exists():
        n_queries = len(QuerySet.from_dict(
            json.loads(queries_path.read_text())).queries)
    report_path = round_dir / "report.json"
    sel_part = {}
    if report_path.exists():
        sel_part = json.loads(report_path.read_text()).get("selection", {})
        budgets = [c["budget"] for c in sel_part.get("per_cluster", [])]
    session.manifest.round_index = k + 1
    session.save_manifest()
    score = None
    try:
        preds, gts = _predictions(session)
        score = miou(preds, gts, session.manifest.num_classes)
    except FileNotFoundError:
        pass
    report = RoundReport(
        round=k, queries_issued=n_queries, labels_received=len(round_labels),
        pool_size_after=len(session.labels), per_cluster_budgets=budgets,
        miou=score, wall_time_seconds=time.monotonic() - t0, pending=False)
    write_json_atomic(report_path, {"selection": sel_part,
                                    "round": report.to_dict()})
    return report
