"""Per-pixel uncertainty, loss-prediction targets and the composite loss.

The scalar helpers (entropy, js_divergence) are the readable definitions; the
map-level pixel_uncertainty delegates to the kernel backend.  All logs are
natural, with the 0*ln 0 = 0 convention.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from madbal import kernels, mdbt

DEFAULT_LAMBDAS = (1.0, 1.0, 0.05, 0.1, 0.15)


def _check_dist(d, name="dist"):
    d = np.asarray(d, dtype=np.float64)
    if d.ndim != 1:
        raise ValueError(f"{name} must be 1-d")
    if (d < 0).any():
        raise ValueError(f"{name} has negative components")
    s = d.sum()
    if abs(s - 1.0) > 1e-4:
        raise ValueError(f"{name} sums to {s}, not 1")
    return d


def entropy(dist) -> float:
    """H(p) = -sum p ln p, natural log; zero terms contribute nothing."""
    d = _check_dist(dist)
    nz = d > 0
    return float(-(d[nz] * np.log(d[nz])).sum())


def js_divergence(p, q) -> float:
    """Jensen-Shannon divergence, natural log; symmetric, in [0, ln 2]."""
    p = _check_dist(p, "p")
    q = _check_dist(q, "q")
    if p.shape != q.shape:
        raise ValueError("p and q must have the same length")
    m = 0.5 * (p + q)

    def kl(a):
        nz = a > 0
        # m >= a/2 > 0 wherever a > 0
        return (a[nz] * (np.log(a[nz]) - np.log(m[nz]))).sum()

    return float(0.5 * kl(p) + 0.5 * kl(q))


class UncertaintyVariant(enum.Enum):
    FULL = "full"                  # entropy + weighted JS, maturity multiplier
    AVERAGING = "averaging"        # weight maps replaced by 1/3
    NO_JS = "no_js"                # entropy only, multiplier kept
    ENTROPY_ONLY = "entropy_only"  # plain entropy


@dataclass
class HeadOutputs:
    """Model-side tensor bundle for one image."""

    final: np.ndarray        # [C,H,W] probabilities
    heads: np.ndarray        # [3,C,H,W] probabilities
    weights: np.ndarray      # [3,H,W] in [0,1]
    loss_scores: np.ndarray  # [2,H,W] logits; channel 0 center, 1 boundary
    boundary: np.ndarray     # [H,W] uint8; 1 = boundary

    def validate(self) -> None:
        c, h, w = self.final.shape
        if self.heads.shape != (3, c, h, w):
            raise ValueError(f"heads shape {self.heads.shape} != (3,{c},{h},{w})")
        if self.weights.shape != (3, h, w):
            raise ValueError(f"weights shape {self.weights.shape} != (3,{h},{w})")
        if self.loss_scores.shape != (2, h, w):
            raise ValueError(f"loss_scores shape {self.loss_scores.shape} != (2,{h},{w})")
        if self.boundary.shape != (h, w):
            raise ValueError(f"boundary shape {self.boundary.shape} != ({h},{w})")
        for name, dist in (("final", self.final), ("heads", self.heads)):
            if np.asarray(dist).min() < 0:
                raise ValueError(f"{name} has negative probabilities")
            sums = np.asarray(dist, dtype=np.float64).sum(axis=-3)
            if np.abs(sums - 1.0).max() > 1e-4:
                raise ValueError(f"{name} distributions do not sum to 1")
        if self.weights.min() < 0 or self.weights.max() > 1:
            raise ValueError("weights outside [0,1]")
        bvals = np.unique(self.boundary)
        if not np.isin(bvals, [0, 1]).all():
            raise ValueError("boundary map must be binary")

    @classmethod
    def load(cls, image_dir) -> "HeadOutputs":
        d = Path(image_dir)
        final = mdbt.read_tensor(d / "probs_final.mdbt")
        heads = np.stack([mdbt.read_tensor(d / f"probs_head{k}.mdbt")
                          for k in (1, 2, 3)])
        return cls(
            final=final,
            heads=heads,
            weights=mdbt.read_tensor(d / "weights.mdbt"),
            loss_scores=mdbt.read_tensor(d / "loss_scores.mdbt"),
            boundary=mdbt.read_tensor(d / "boundary.mdbt"),
        )


@dataclass
class PixelUncertaintyMap:
    values: np.ndarray      # float32 [H,W], >= 0
    valid_mask: np.ndarray  # bool [H,W], True = unlabeled


def pixel_uncertainty(h: HeadOutputs, labeled_mask,
                      variant: UncertaintyVariant = UncertaintyVariant.FULL,
                      validate: bool = True) -> PixelUncertaintyMap:
    """u(x) per pixel.

    u(x) = (H(p_x) + sum_k w_k JS(p_x, q_k_x)) * exp(sigmoid(z_x))

    with z the center-channel loss logit on center pixels and the boundary
    channel on boundary pixels.  Variants drop terms: AVERAGING swaps the
    weight maps for 1/3; NO_JS keeps only the entropy inside the parentheses;
    ENTROPY_ONLY additionally drops the multiplier.  Labeled pixels are still
    computed; the valid mask excludes them downstream.
    """
    if validate:
        h.validate()
    labeled_mask = np.asarray(labeled_mask).astype(bool)
    if labeled_mask.shape != h.boundary.shape:
        raise ValueError("labeled_mask shape mismatch")
    probs = np.ascontiguousarray(h.final, dtype=np.float64)
    heads = np.ascontiguousarray(h.heads, dtype=np.float64)
    if variant == UncertaintyVariant.AVERAGING:
        weights = np.full(h.weights.shape, 1.0 / 3.0, dtype=np.float64)
    else:
        weights = np.ascontiguousarray(h.weights, dtype=np.float64)
    scores = np.ascontiguousarray(h.loss_scores, dtype=np.float64)
    boundary = np.ascontiguousarray(h.boundary, dtype=np.uint8)
    with_js = variant in (UncertaintyVariant.FULL, UncertaintyVariant.AVERAGING)
    with_mult = variant != UncertaintyVariant.ENTROPY_ONLY
    u = kernels.fused_pixel_uncertainty(probs, heads, weights, scores, boundary,
                                        with_js, with_mult)
    values = np.maximum(np.asarray(u), 0.0).astype(np.float32)
    return PixelUncertaintyMap(values=values, valid_mask=~labeled_mask)


@dataclass
class LossLabels:
    labels: np.ndarray        # uint8 [H,W], meaningful on defined_mask only
    thresholds: np.ndarray    # float64 [C], NaN for classes absent from the pool
    defined_mask: np.ndarray  # bool [H,W]


def loss_labels(per_pixel_loss, gt_class, pool_mask, num_classes: int) -> LossLabels:
    """Binary targets for the loss-prediction module.

    tau_c = mean phase-I loss over pool pixels of class c, across the whole
    pool; a pixel's label is 1 iff its loss >= tau of its class (ties to 1).
    """
    loss = np.asarray(per_pixel_loss, dtype=np.float64)
    gt = np.asarray(gt_class)
    pool = np.asarray(pool_mask).astype(bool)
    if loss.shape != gt.shape or loss.shape != pool.shape:
        raise ValueError("shape mismatch among loss, gt and pool mask")
    if not pool.any():
        raise ValueError("empty pool: no pixels to derive loss labels from")
    thresholds = np.full(num_classes, np.nan)
    labels = np.zeros(loss.shape, dtype=np.uint8)
    for c in range(num_classes):
        sel = pool & (gt == c)
        if sel.any():
            tau = loss[sel].mean()
            thresholds[c] = tau
            labels[sel] = (loss[sel] >= tau).astype(np.uint8)
    return LossLabels(labels=labels, thresholds=thresholds, defined_mask=pool)


class LossPredictionLoss(NamedTuple):
    center: float
    boundary: float
    n_center: int    # defined pixels in the center region (0 flags an empty term)
    n_boundary: int


def _bce_with_logits(z, y):
    # stable: max(z,0) - z*y + ln(1 + e^-|z|)
    z = np.asarray(z, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))


def loss_prediction_loss(loss_logits, labels: LossLabels, boundary) -> LossPredictionLoss:
    """Region-wise BCE of the loss-prediction logits against the binary targets.

    Center loss averages over defined center pixels, boundary loss over
    defined boundary pixels; an empty region contributes 0 with its count
    reported as the flag.
    """
    logits = np.asarray(loss_logits, dtype=np.float64)
    bnd = np.asarray(boundary).astype(bool)
    if logits.shape != (2,) + bnd.shape:
        raise ValueError(f"loss_logits shape {logits.shape} != (2,)+{bnd.shape}")
    if labels.defined_mask.shape != bnd.shape:
        raise ValueError("labels/boundary shape mismatch")
    out = []
    counts = []
    for channel, region in ((0, ~bnd), (1, bnd)):
        sel = labels.defined_mask & region
        n = int(sel.sum())
        counts.append(n)
        if n == 0:
            out.append(0.0)
        else:
            out.append(float(_bce_with_logits(logits[channel][sel],
                                              labels.labels[sel]).mean()))
    return LossPredictionLoss(center=out[0], boundary=out[1],
                              n_center=counts[0], n_boundary=counts[1])


def phase2_loss(l_c: float, l_b: float, seg_losses, lambdas=DEFAULT_LAMBDAS) -> float:
    """Composite training objective for the auxiliary modules.

    lambdas = (loss-center, loss-boundary, seg-head-1, seg-head-2, seg-head-3).
    """
    lambdas = tuple(float(v) for v in lambdas)
    seg = tuple(float(v) for v in seg_losses)
    if len(lambdas) != 5:
        raise ValueError(f"expected 5 lambdas, got {len(lambdas)}")
    if len(seg) != 3:
        raise ValueError(f"expected 3 segmentation losses, got {len(seg)}")
    return (lambdas[0] * float(l_c) + lambdas[1] * float(l_b)
            + lambdas[2] * seg[0] + lambdas[3] * seg[1] + lambdas[4] * seg[2])
