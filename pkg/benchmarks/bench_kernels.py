"""Timing comparison of the compiled and pure-numpy kernel backends.

Run as a script: python benchmarks/bench_kernels.py [--size N] [--classes C]
"""

import argparse
import time

import numpy as np

from madbal import _npkernels

try:
    from madbal import _ckernels
except ImportError:
    _ckernels = None


def best_of(fn, repeat=5):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def make_uncertainty_inputs(rng, c, h, w):
    def dist(shape):
        x = rng.random(shape) + 1e-6
        return (x / x.sum(axis=-3, keepdims=True)).astype(np.float64)

    probs = dist((c, h, w))
    heads = dist((3, c, h, w))
    raw = rng.random((3, h, w)) + 1e-6
    weights = raw / raw.sum(axis=0)
    scores = rng.normal(0, 2, size=(2, h, w))
    boundary = (rng.random((h, w)) < 0.4).astype(np.uint8)
    return probs, heads, weights, scores, boundary


def make_slic_inputs(rng, h, w, n_seeds):
    lab = rng.random((h, w, 3)) * 100
    side = int(np.sqrt(n_seeds))
    labels = ((np.arange(h)[:, None] * side // h) * side
              + np.arange(w)[None, :] * side // w).astype(np.int32)
    cents = np.zeros((side * side, 5))
    for i in range(side):
        for j in range(side):
            cents[i * side + j] = [lab[h // (2 * side) + i * h // side,
                                       w // (2 * side) + j * w // side, 0],
                                   0, 0,
                                   h // (2 * side) + i * h // side,
                                   w // (2 * side) + j * w // side]
    step = np.sqrt(h * w / (side * side))
    return lab, cents, labels, (10.0 / step) ** 2, int(step) + 1


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--size", type=int, default=384)
    ap.add_argument("--classes", type=int, default=19)
    args = ap.parse_args()
    h = w = args.size
    rng = np.random.default_rng(0)

    rows = []
    u_in = make_uncertainty_inputs(rng, args.classes, h, w)
    rows.append(("fused_pixel_uncertainty",
                 best_of(lambda: _npkernels.fused_pixel_uncertainty(
                     *u_in, True, True)),
                 best_of(lambda: _ckernels.fused_pixel_uncertainty(
                     *u_in, True, True)) if _ckernels else None))

    lab, cents, labels, ratio2, radius = make_slic_inputs(rng, h, w, 64)
    rows.append(("slic_iterate (10 it)",
                 best_of(lambda: _npkernels.slic_iterate(
                     lab, cents.copy(), labels.copy(), ratio2, radius, 10), 3),
                 best_of(lambda: _ckernels.slic_iterate(
                     lab, cents.copy(), labels.copy(), ratio2, radius, 10), 3)
                 if _ckernels else None))

    blob = (rng.random((h, w)) < 0.5).astype(np.int32)
    rows.append(("connected_components",
                 best_of(lambda: _npkernels.connected_components(blob)),
                 best_of(lambda: _ckernels.connected_components(blob))
                 if _ckernels else None))

    print(f"kernel benchmark, {h}x{w}, {args.classes} classes")
    print(f"{'kernel':<28}{'numpy':>10}{'cython':>10}{'speedup':>9}")
    for name, t_np, t_cy in rows:
        if t_cy is None:
            print(f"{name:<28}{t_np * 1e3:>8.1f}ms{'n/a':>10}{'':>9}")
        else:
            print(f"{name:<28}{t_np * 1e3:>8.1f}ms{t_cy * 1e3:>8.1f}ms"
                  f"{t_np / t_cy:>8.1f}x")


if __name__ == "__main__":
    main()
