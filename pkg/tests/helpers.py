"""Shared builders for toy sessions used across the test suite."""

import numpy as np
import scipy.ndimage

from madbal import mdbt, session


def random_probs(rng, c, h, w):
    """Random strictly positive per-pixel distributions, [C,H,W] float32."""
    x = rng.gamma(1.0, 1.0, size=(c, h, w)) + 1e-6
    return (x / x.sum(axis=0, keepdims=True)).astype(np.float32)


def simple_boundary(pred, radius=2):
    """Independent boundary derivation: class change within Chebyshev radius."""
    if radius <= 0:
        return np.zeros(pred.shape, dtype=np.uint8)
    size = 2 * radius + 1
    mx = scipy.ndimage.maximum_filter(pred, size=size, mode="nearest")
    mn = scipy.ndimage.minimum_filter(pred, size=size, mode="nearest")
    return (mx != mn).astype(np.uint8)


def write_model_tensors(image_dir, rng, c, h, w):
    """Write the full head-output tensor set for one image."""
    probs = random_probs(rng, c, h, w)
    mdbt.write_tensor(image_dir / "probs_final.mdbt", probs)
    for k in range(3):
        mdbt.write_tensor(image_dir / f"probs_head{k + 1}.mdbt",
                          random_probs(rng, c, h, w))
    raw = rng.gamma(1.0, 1.0, size=(3, h, w)).astype(np.float64) + 1e-6
    weights = (raw / raw.sum(axis=0, keepdims=True)).astype(np.float32)
    mdbt.write_tensor(image_dir / "weights.mdbt", weights)
    scores = rng.normal(0.0, 2.0, size=(2, h, w)).astype(np.float32)
    mdbt.write_tensor(image_dir / "loss_scores.mdbt", scores)
    pred = probs.argmax(axis=0).astype(np.int32)
    mdbt.write_tensor(image_dir / "boundary.mdbt", simple_boundary(pred))
    return probs


def build_toy_session(root, n_images=2, h=8, w=8, c=3, budget=2, seed=0,
                      mode="madbal", with_tensors=True):
    """Create a complete toy session: images + gt + model tensors."""
    rng = np.random.default_rng(seed)
    ids = [f"img{i:02d}" for i in range(n_images)]
    images = {i: rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8) for i in ids}
    gt = {i: rng.integers(0, c, size=(h, w)).astype(np.int32) for i in ids}
    sess = session.init_session(root, images, num_classes=c, per_image_budget=budget,
                                gt=gt, mode=mode)
    if with_tensors:
        for image_id in ids:
            write_model_tensors(sess.image_dir(image_id), rng, c, h, w)
    return sess
