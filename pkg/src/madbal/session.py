"""Session directory layout, manifest and the labeled pool.

A session lives in one directory:

    session.json                 manifest
    labels.jsonl                 one label record per line
    images/<id>/image.png        plus the model tensors (*.mdbt)
    rounds/<k>/queries.json, report.json, clusters.json

Labels are the single mutable piece of state besides the manifest; both are
rewritten atomically (temp file + rename) so readers always see a consistent
snapshot.
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from madbal import mdbt

LABEL_SOURCES = ("seed", "oracle", "human")

MANIFEST_NAME = "session.json"
LABELS_NAME = "labels.jsonl"


def write_json_atomic(path, obj) -> None:
    """Serialize obj deterministically (sorted keys) and rename into place."""
    path = Path(path)
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


@dataclass
class SessionManifest:
    num_classes: int
    image_ids: list[str]
    per_image_budget: int
    round_index: int = 0
    class_names: list[str] | None = None
    mode: str = "madbal"
    version: int = 1

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.per_image_budget < 1:
            raise ValueError("per_image_budget must be >= 1")
        if not self.image_ids:
            raise ValueError("image_ids must be non-empty")
        if len(set(self.image_ids)) != len(self.image_ids):
            raise ValueError("image_ids contain duplicates")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names length must equal num_classes")
        if self.round_index < 0:
            raise ValueError("round_index must be >= 0")

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "num_classes": self.num_classes,
            "image_ids": list(self.image_ids),
            "per_image_budget": self.per_image_budget,
            "round_index": self.round_index,
            "class_names": self.class_names,
            "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SessionManifest":
        return cls(
            num_classes=d["num_classes"],
            image_ids=list(d["image_ids"]),
            per_image_budget=d["per_image_budget"],
            round_index=d.get("round_index", 0),
            class_names=d.get("class_names"),
            mode=d.get("mode", "madbal"),
            version=d.get("version", 1),
        )


@dataclass(frozen=True)
class LabelRecord:
    image_id: str
    row: int
    col: int
    class_id: int
    round: int
    source: str

    def __post_init__(self):
        if self.source not in LABEL_SOURCES:
            raise ValueError(f"source must be one of {LABEL_SOURCES}, got {self.source!r}")
        if self.row < 0 or self.col < 0:
            raise ValueError(f"negative coordinate ({self.row}, {self.col})")
        if self.class_id < 0:
            raise ValueError("class_id must be >= 0")

    def key(self) -> tuple:
        return (self.image_id, self.row, self.col)

    def to_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "row": self.row,
            "col": self.col,
            "class_id": self.class_id,
            "round": self.round,
            "source": self.source,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LabelRecord":
        return cls(image_id=d["image_id"], row=d["row"], col=d["col"],
                   class_id=d["class_id"], round=d["round"], source=d["source"])


# tensor files probed, in order, to resolve an image's (H, W)
_SIZE_SOURCES = (
    ("gt.mdbt", "hw"),
    ("probs_final.mdbt", "chw"),
    ("probs_head1.mdbt", "chw"),
    ("weights.mdbt", "chw"),
    ("loss_scores.mdbt", "chw"),
    ("boundary.mdbt", "hw"),
    ("superpixels.mdbt", "hw"),
)


class Session:
    """A loaded session: manifest + labeled pool + path helpers."""

    def __init__(self, root, manifest: SessionManifest, labels: list[LabelRecord]):
        self.root = Path(root)
        self.manifest = manifest
        self.labels = labels
        self._sizes: dict[str, tuple[int, int]] = {}

    # ---- paths ----
    @property
    def images_dir(self) -> Path:
        return self.root / "images"

    def image_dir(self, image_id: str) -> Path:
        return self.images_dir / image_id

    @property
    def rounds_dir(self) -> Path:
        return self.root / "rounds"

    def round_dir(self, k: int) -> Path:
        return self.rounds_dir / str(k)

    @property
    def labels_path(self) -> Path:
        return self.root / LABELS_NAME

    # ---- pool ----
    def pool_keys(self) -> set:
        return {r.key() for r in self.labels}

    def labels_for(self, image_id: str) -> list[LabelRecord]:
        return [r for r in self.labels if r.image_id == image_id]

    def labeled_mask(self, image_id: str) -> np.ndarray:
        h, w = self.image_size(image_id)
        mask = np.zeros((h, w), dtype=bool)
        for r in self.labels:
            if r.image_id == image_id:
                mask[r.row, r.col] = True
        return mask

    def image_size(self, image_id: str) -> tuple[int, int]:
        if image_id in self._sizes:
            return self._sizes[image_id]
        d = self.image_dir(image_id)
        png = d / "image.png"
        if png.exists():
            with Image.open(png) as im:
                size = (im.height, im.width)
        else:
            for name, kind in _SIZE_SOURCES:
                p = d / name
                if p.exists():
                    _, shape = mdbt.read_header(p)
                    size = tuple(shape[-2:]) if kind == "chw" else tuple(shape)
                    break
            else:
                raise FileNotFoundError(
                    f"cannot resolve size of image {image_id!r}: no image.png "
                    f"or tensor files under {d}")
        self._sizes[image_id] = size
        return size

    def save_manifest(self) -> None:
        write_json_atomic(self.root / MANIFEST_NAME, self.manifest.to_dict())


def _validate_record(session: Session, rec: LabelRecord) -> None:
    if rec.image_id not in session.manifest.image_ids:
        raise ValueError(f"unknown image_id {rec.image_id!r}")
    h, w = session.image_size(rec.image_id)
    if not (0 <= rec.row < h and 0 <= rec.col < w):
        raise ValueError(
            f"label out of bounds: ({rec.row}, {rec.col}) on {rec.image_id!r} "
            f"of size {h}x{w}")
    if not 0 <= rec.class_id < session.manifest.num_classes:
        raise ValueError(
            f"class_id {rec.class_id} outside [0, {session.manifest.num_classes})")


def load_session(root) -> Session:
    root = Path(root)
    mpath = root / MANIFEST_NAME
    if not mpath.exists():
        raise FileNotFoundError(f"no {MANIFEST_NAME} under {root}")
    manifest = SessionManifest.from_dict(json.loads(mpath.read_text()))
    labels: list[LabelRecord] = []
    lpath = root / LABELS_NAME
    if lpath.exists():
        for line in lpath.read_text().splitlines():
            if line.strip():
                labels.append(LabelRecord.from_dict(json.loads(line)))
    session = Session(root, manifest, labels)
    seen = set()
    for rec in labels:
        _validate_record(session, rec)
        if rec.key() in seen:
            raise ValueError(f"duplicate label coordinate {rec.key()}")
        seen.add(rec.key())
    return session


def append_labels(session: Session, records: list[LabelRecord]) -> None:
    """Add records to the pool, all-or-nothing.

    The whole labels file is rewritten to a temp file and renamed, so a crash
    at any point leaves either the old or the new pool, never a torn file.
    """
    pool = session.pool_keys()
    batch = set()
    for rec in records:
        _validate_record(session, rec)
        if rec.key() in pool or rec.key() in batch:
            raise ValueError(f"duplicate label coordinate {rec.key()}")
        batch.add(rec.key())
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in session.labels]
    lines += [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    path = session.labels_path
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=LABELS_NAME, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write("".join(line + "\n" for line in lines))
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    session.labels = session.labels + list(records)


def init_session(root, images: dict, num_classes: int, per_image_budget: int,
                 gt: dict | None = None, class_names: list[str] | None = None,
                 mode: str = "madbal") -> Session:
    """Create a fresh session directory.

    images: mapping image_id -> uint8 RGB array [H,W,3].
    gt: optional mapping image_id -> int array [H,W] of class ids.
    """
    root = Path(root)
    if (root / MANIFEST_NAME).exists():
        raise FileExistsError(f"session already initialized at {root}")
    manifest = SessionManifest(
        num_classes=num_classes,
        image_ids=sorted(images.keys()),
        per_image_budget=per_image_budget,
        class_names=class_names,
        mode=mode,
    )
    root.mkdir(parents=True, exist_ok=True)
    (root / "rounds").mkdir(exist_ok=True)
    for image_id, arr in images.items():
        arr = np.asarray(arr, dtype=np.uint8)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ValueError(f"image {image_id!r} must be [H,W,3] uint8")
        d = root / "images" / image_id
        d.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr, mode="RGB").save(d / "image.png")
        if gt is not None and image_id in gt:
            g = np.asarray(gt[image_id])
            if g.shape != arr.shape[:2]:
                raise ValueError(f"gt shape {g.shape} != image shape {arr.shape[:2]}")
            if g.min() < 0 or g.max() >= num_classes:
                raise ValueError(f"gt of {image_id!r} has classes outside [0, {num_classes})")
            mdbt.write_tensor(d / "gt.mdbt", g.astype(np.int32))
    (root / LABELS_NAME).write_text("")
    write_json_atomic(root / MANIFEST_NAME, manifest.to_dict())
    return Session(root, manifest, list())
