"""Synthetic shapes dataset: colored geometry on textured backgrounds.

Desk-scale stand-in for real segmentation data.  Every class has a fixed base
color with per-instance jitter, so color and texture carry the class signal a
small network can learn from sparse labels.
"""

import numpy as np

# base colors: background + up to 5 shape classes
PALETTE = np.array([
    [72, 76, 82],      # 0 slate background
    [198, 62, 54],     # 1 red
    [64, 168, 72],     # 2 green
    [62, 92, 198],     # 3 blue
    [208, 188, 64],    # 4 yellow
    [168, 72, 188],    # 5 purple
], dtype=np.float64)


def _texture(rng, size, base, amp=22.0):
    """Low-frequency noise around a base color, plus fine grain."""
    cells = size // 8 + 2
    small = rng.normal(0.0, 1.0, size=(cells, cells, 3))
    tex = np.kron(small, np.ones((8, 8, 1)))[:size, :size]
    for _ in range(2):
        tex = (tex + np.roll(tex, 1, 0) + np.roll(tex, 1, 1)
               + np.roll(tex, (1, 1), (0, 1))) / 4.0
    return base + amp * tex + rng.normal(0.0, 6.0, size=(size, size, 3))


def _mask_rect(rng, size):
    h = int(rng.integers(size // 8, size // 3))
    w = int(rng.integers(size // 8, size // 3))
    r0 = int(rng.integers(0, size - h))
    c0 = int(rng.integers(0, size - w))
    mask = np.zeros((size, size), dtype=bool)
    mask[r0:r0 + h, c0:c0 + w] = True
    return mask


def _mask_disc(rng, size):
    radius = float(rng.uniform(size / 12, size / 5))
    cy = float(rng.uniform(radius, size - radius))
    cx = float(rng.uniform(radius, size - radius))
    yy, xx = np.mgrid[0:size, 0:size]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2


def _mask_triangle(rng, size):
    pts = rng.uniform(0.05 * size, 0.72 * size, size=(3, 2))
    pts[1:] = pts[0] + rng.uniform(-0.3 * size, 0.3 * size, size=(2, 2))
    pts = np.clip(pts, 0.0, size - 1.0)  # (y, x) rows
    yy, xx = np.mgrid[0:size, 0:size]

    def cross(a, b):
        return (b[1] - a[1]) * (yy - a[0]) - (b[0] - a[0]) * (xx - a[1])

    d1 = cross(pts[0], pts[1])
    d2 = cross(pts[1], pts[2])
    d3 = cross(pts[2], pts[0])
    has_neg = (d1 < 0) | (d2 < 0) | (d3 < 0)
    has_pos = (d1 > 0) | (d2 > 0) | (d3 > 0)
    return ~(has_neg & has_pos)


_SHAPES = (_mask_rect, _mask_disc, _mask_triangle)


def generate_image(rng, size, num_classes):
    """One image + exact ground truth.  Classes 1..num_classes-1 are shapes."""
    if not 4 <= num_classes <= 6:
        raise ValueError("num_classes must be in [4, 6]")
    img = _texture(rng, size, PALETTE[0])
    gt = np.zeros((size, size), dtype=np.int32)
    for _ in range(int(rng.integers(4, 10))):
        cls = int(rng.integers(1, num_classes))
        mask = _SHAPES[int(rng.integers(len(_SHAPES)))](rng, size)
        color = PALETTE[cls] + rng.normal(0.0, 26.0, size=3)
        img[mask] = color + rng.normal(0.0, 14.0, size=(int(mask.sum()), 3))
        gt[mask] = cls
    return np.clip(img, 0, 255).astype(np.uint8), gt


def generate_dataset(n, size, num_classes, seed=0):
    """n images keyed im000..; returns (images, gt) dicts."""
    rng = np.random.default_rng(seed)
    images, gt = {}, {}
    for i in range(n):
        image_id = f"im{i:03d}"
        images[image_id], gt[image_id] = generate_image(rng, size, num_classes)
    return images, gt
