"""Whole-pipeline equivalence against a straight-line reimplementation.

The oracle below recomputes every selection stage with plain Python loops and
the math module, reading tensors straight off disk with its own byte-level
reader.  Superpixel maps and cluster assignments are shared inputs (their
contracts are covered by other suites); everything from per-pixel uncertainty
to the final query ordering is derived twice and compared query for query,
for every selection mode.
"""

import math
import struct
from collections import deque

import numpy as np
import pytest
from PIL import Image

from madbal import session as sess_mod
from madbal.selection import (ImageSelectionData, SelectionMode,
                              select_queries, variant_for_mode)
from madbal.superpixels import (compute_features, kmeans, slic_segment,
                                target_superpixel_count)
from madbal.uncertainty import HeadOutputs, pixel_uncertainty

from helpers import build_toy_session

N_IMAGES = 2
H, W, C = 24, 24, 3
BUDGET = 6
K_CLUSTERS = 3
SEED = 13


# ---------------------------------------------------------------- oracle side

_DT = {1: ("<f4", 4), 2: ("u1", 1), 3: ("<i4", 4)}


def _read_mdbt(path):
    blob = path.read_bytes()
    assert blob[:4] == b"MDBT"
    ver, dt, nd, _ = struct.unpack_from("<BBBB", blob, 4)
    assert ver == 1
    dims = struct.unpack_from("<" + "I" * nd, blob, 8)
    np_dt, isz = _DT[dt]
    n = 1
    for d in dims:
        n *= d
    arr = np.frombuffer(blob, dtype=np_dt, count=n, offset=8 + 4 * nd)
    return arr.reshape(dims)


def _oracle_pixel_u(image_dir, variant):
    probs = _read_mdbt(image_dir / "probs_final.mdbt").astype(np.float64)
    heads = [_read_mdbt(image_dir / f"probs_head{k + 1}.mdbt").astype(np.float64)
             for k in range(3)]
    weights = _read_mdbt(image_dir / "weights.mdbt").astype(np.float64)
    scores = _read_mdbt(image_dir / "loss_scores.mdbt").astype(np.float64)
    boundary = _read_mdbt(image_dir / "boundary.mdbt")
    c, h, w = probs.shape
    out = np.zeros((h, w), dtype=np.float32)
    for i in range(h):
        for j in range(w):
            p = [float(probs[cc, i, j]) for cc in range(c)]
            total = 0.0
            for v in p:
                if v > 0.0:
                    total -= v * math.log(v)
            if variant in ("full", "averaging"):
                for k in range(3):
                    wk = 1.0 / 3.0 if variant == "averaging" else float(weights[k, i, j])
                    q = [float(heads[k][cc, i, j]) for cc in range(c)]
                    js = 0.0
                    for v, z in zip(p, q):
                        m = 0.5 * (v + z)
                        if v > 0.0:
                            js += 0.5 * v * math.log(v / m)
                        if z > 0.0:
                            js += 0.5 * z * math.log(z / m)
                    total += wk * js
            if variant != "entropy_only":
                if boundary[i, j] == 0:
                    z = float(scores[0, i, j])
                else:
                    z = float(scores[1, i, j])
                sig = 1.0 / (1.0 + math.exp(-z)) if z >= 0 else \
                    math.exp(z) / (1.0 + math.exp(z))
                total *= math.exp(sig)
            out[i, j] = np.float32(max(total, 0.0))
    return out


def _oracle_pred(image_dir):
    probs = _read_mdbt(image_dir / "probs_final.mdbt")
    c, h, w = probs.shape
    pred = np.zeros((h, w), dtype=np.int64)
    for i in range(h):
        for j in range(w):
            best, arg = float(probs[0, i, j]), 0
            for cc in range(1, c):
                if float(probs[cc, i, j]) > best:
                    best, arg = float(probs[cc, i, j]), cc
            pred[i, j] = arg
    return pred


def _snap(x):
    n = round(x)
    if abs(x - n) <= 1e-9 * max(1.0, abs(n)):
        return float(n)
    return x


def _oracle_alloc(u_cl, b_t):
    total = sum(u_cl)
    shares = [_snap(v * b_t / total) for v in u_cl]
    budgets = [math.ceil(s) if v > 0 else 0 for s, v in zip(shares, u_cl)]
    over = sum(budgets) - b_t
    if over > 0:
        cand = sorted((shares[k] - math.floor(shares[k]), -k)
                      for k in range(len(u_cl)) if budgets[k] > 0)
        for _, neg_k in cand:
            if over == 0:
                break
            budgets[-neg_k] -= 1
            over -= 1
    return budgets


def _oracle_select(image_ids, budget, n_classes, per_image, mode, seed, n_clusters):
    """per_image: id -> dict(u f32[H,W], labeled bool, pred, sp int[H,W], n_sp,
    clusters list).  Returns a list of (image_id, row, col, u, sp, cluster)."""
    eligible = [i for i in image_ids if (~per_image[i]["labeled"]).any()]

    def ranked_pixels(im):
        d = per_image[im]
        out = []
        h, w = d["u"].shape
        for r in range(h):
            for c in range(w):
                if not d["labeled"][r, c]:
                    out.append((-float(d["u"][r, c]), r, c))
        out.sort()
        return [(r, c, -nu) for nu, r, c in out]

    if mode == "no-breakdown":
        res = []
        for im in eligible:
            for r, c, u in ranked_pixels(im)[:budget]:
                res.append((im, r, c, u, -1, -1))
        return res

    b_t = budget * len(eligible)
    if mode == "random-breakdown":
        rng = np.random.default_rng(seed)
        clusters = {im: [int(x) for x in
                         rng.integers(0, n_clusters, size=per_image[im]["n_sp"])]
                    for im in eligible}
    else:
        clusters = {im: list(per_image[im]["clusters"]) for im in eligible}

    dom, mean_u, valid_cnt = {}, {}, {}
    for im in eligible:
        d = per_image[im]
        n_sp = d["n_sp"]
        counts = [[0] * n_classes for _ in range(n_sp)]
        sums = [0.0] * n_sp
        sizes = [0] * n_sp
        vcnt = [0] * n_sp
        h, w = d["u"].shape
        for r in range(h):
            for c in range(w):
                s = int(d["sp"][r, c])
                counts[s][int(d["pred"][r, c])] += 1
                sums[s] += float(d["u"][r, c])
                sizes[s] += 1
                if not d["labeled"][r, c]:
                    vcnt[s] += 1
        dom[im] = [max(range(n_classes), key=lambda cc: (counts[s][cc], -cc))
                   for s in range(n_sp)]
        mean_u[im] = [sums[s] / sizes[s] for s in range(n_sp)]
        valid_cnt[im] = vcnt

    cls_counts = [[0] * n_classes for _ in range(n_clusters)]
    for im in eligible:
        for s in range(per_image[im]["n_sp"]):
            cls_counts[clusters[im][s]][dom[im][s]] += 1
    p_cl = []
    for k in range(n_clusters):
        tot = sum(cls_counts[k])
        p_cl.append([v / tot if tot else 0.0 for v in cls_counts[k]])

    u_s = {}
    for im in eligible:
        u_s[im] = [mean_u[im][s] * math.exp(-p_cl[clusters[im][s]][dom[im][s]])
                   if valid_cnt[im][s] > 0 else 0.0
                   for s in range(per_image[im]["n_sp"])]

    u_cl, members = [0.0] * n_clusters, [0] * n_clusters
    for im in eligible:
        for s in range(per_image[im]["n_sp"]):
            u_cl[clusters[im][s]] += u_s[im][s]
            members[clusters[im][s]] += 1
    u_cl = [u_cl[k] / members[k] if members[k] else 0.0 for k in range(n_clusters)]
    if sum(u_cl) > 0:
        budgets = _oracle_alloc(u_cl, b_t)
    else:
        budgets = [0] * n_clusters

    shares = {im: {} for im in eligible}
    for k in range(n_clusters):
        spc = {im: sum(1 for c in clusters[im] if c == k) for im in eligible}
        tot = sum(spc.values())
        if budgets[k] == 0 or tot == 0:
            continue
        quota = {im: _snap(budgets[k] * spc[im] / tot) for im in eligible}
        base = {im: int(math.floor(quota[im])) for im in eligible}
        order = sorted(eligible, key=lambda im: (-round(quota[im] - base[im], 12), im))
        for im in order[:budgets[k] - sum(base.values())]:
            base[im] += 1
        for im in eligible:
            if base[im] > 0:
                shares[im][k] = base[im]

    picks = {im: [] for im in eligible}
    for im in eligible:
        d = per_image[im]
        h, w = d["u"].shape
        pixels = {}
        pos = {}
        for k in sorted(shares[im]):
            need = shares[im][k]
            order = sorted((s for s in range(d["n_sp"])
                            if clusters[im][s] == k and valid_cnt[im][s] > 0),
                           key=lambda s: (-u_s[im][s], s))
            ring = deque(order)
            got = 0
            while got < need and ring:
                s = ring.popleft()
                if s not in pixels:
                    lst = [(-float(d["u"][r, c]), r, c)
                           for r in range(h) for c in range(w)
                           if int(d["sp"][r, c]) == s and not d["labeled"][r, c]]
                    lst.sort()
                    pixels[s], pos[s] = lst, 0
                if pos[s] >= len(pixels[s]):
                    continue
                nu, r, c = pixels[s][pos[s]]
                pos[s] += 1
                picks[im].append((im, r, c, -nu, s, k))
                got += 1
                ring.append(s)

    res = []
    for im in eligible:
        d = per_image[im]
        ps = sorted(picks[im], key=lambda q: (-q[3], q[1], q[2]))
        if len(ps) > budget:
            ps = ps[:budget]
        elif len(ps) < budget:
            have = {(q[1], q[2]) for q in ps}
            for r, c, u in ranked_pixels(im):
                if len(ps) >= budget:
                    break
                if (r, c) in have:
                    continue
                s = int(d["sp"][r, c])
                ps.append((im, r, c, u, s, clusters[im][s]))
                have.add((r, c))
            ps = sorted(ps, key=lambda q: (-q[3], q[1], q[2]))
        res += ps
    return res


# --------------------------------------------------------------- library side

@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    root = tmp_path_factory.mktemp("equiv")
    sess = build_toy_session(root, n_images=N_IMAGES, h=H, w=W, c=C,
                             budget=BUDGET, seed=SEED)
    rng = np.random.default_rng(99)
    recs = []
    seen = set()
    for image_id in sess.manifest.image_ids:
        while len([r for r in recs if r.image_id == image_id]) < 5:
            r, c = int(rng.integers(H)), int(rng.integers(W))
            if (image_id, r, c) in seen:
                continue
            seen.add((image_id, r, c))
            recs.append(sess_mod.LabelRecord(image_id, r, c,
                                             int(rng.integers(C)), -1, "seed"))
    sess_mod.append_labels(sess, recs)

    images, sp_maps, feats = {}, {}, []
    for image_id in sess.manifest.image_ids:
        img = np.asarray(Image.open(sess.image_dir(image_id) / "image.png"))
        images[image_id] = img
        sp_maps[image_id] = slic_segment(img, target_superpixel_count(H, W))
        feats.append(compute_features(img, sp_maps[image_id]))
    assign = kmeans(np.concatenate(feats), K_CLUSTERS, seed=SEED).assignment
    clusters, ofs = {}, 0
    for image_id in sess.manifest.image_ids:
        n = sp_maps[image_id].count
        clusters[image_id] = assign[ofs:ofs + n]
        ofs += n
    return sess, images, sp_maps, clusters


@pytest.mark.parametrize("mode", list(SelectionMode))
def test_pipeline_matches_bruteforce(toy, mode):
    sess, images, sp_maps, clusters = toy
    variant = variant_for_mode(mode)

    lib_data, oracle_data = {}, {}
    for image_id in sess.manifest.image_ids:
        d = sess.image_dir(image_id)
        ho = HeadOutputs.load(d)
        labeled = sess.labeled_mask(image_id)
        u_map = pixel_uncertainty(ho, labeled, variant)
        pred = ho.final.argmax(axis=0).astype(np.int32)
        lib_data[image_id] = ImageSelectionData(
            image_id=image_id, u_map=u_map, pred=pred,
            sp=sp_maps[image_id], clusters=clusters[image_id])

        ou = _oracle_pixel_u(d, variant.value)
        np.testing.assert_allclose(ou, u_map.values, rtol=1e-6, atol=1e-9)
        opred = _oracle_pred(d)
        np.testing.assert_array_equal(opred, pred)
        oracle_data[image_id] = {
            "u": ou, "labeled": labeled, "pred": opred,
            "sp": sp_maps[image_id].labels, "n_sp": sp_maps[image_id].count,
            "clusters": [int(x) for x in clusters[image_id]]}

    qs, report, _, _ = select_queries(
        list(sess.manifest.image_ids), BUDGET, C, lib_data, mode,
        seed=SEED, round_index=0, n_clusters=K_CLUSTERS)
    expected = _oracle_select(list(sess.manifest.image_ids), BUDGET, C,
                              oracle_data, mode.value, SEED, K_CLUSTERS)

    assert len(qs.queries) == len(expected) == BUDGET * N_IMAGES
    for q, (im, r, c, u, s, k) in zip(qs.queries, expected):
        assert (q.image_id, q.row, q.col) == (im, r, c)
        assert (q.superpixel_id, q.cluster) == (s, k)
        assert q.u_value == pytest.approx(u, rel=1e-6)
    assert report.b_t == BUDGET * len(report.eligible_images)
    assert sum(report.per_image_counts.values()) == len(qs.queries)
