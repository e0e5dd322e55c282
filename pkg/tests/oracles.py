"""Independent brute-force references used by the test suite.

Nothing here imports the code under test's kernels; loops are written out
longhand on purpose.
"""
import itertools

import numpy as np


def naive_conv2d(x, w, b, stride, pad):
    n, h, wd, c = x.shape
    o, kh, kw, _ = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, oh, ow, o), dtype=np.float64)
    for bi in range(n):
        for oy in range(oh):
            for ox in range(ow):
                for oc in range(o):
                    acc = float(b[oc])
                    for ky in range(kh):
                        for kx in range(kw):
                            iy, ix = oy * stride + ky - pad, ox * stride + kx - pad
                            if 0 <= iy < h and 0 <= ix < wd:
                                for ic in range(c):
                                    acc += float(x[bi, iy, ix, ic]) * float(w[oc, ky, kx, ic])
                    out[bi, oy, ox, oc] = acc
    return out


def naive_max_pool(x, k, stride):
    n, h, w, c = x.shape
    oh, ow = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.empty((n, oh, ow, c), dtype=x.dtype)
    for bi in range(n):
        for oy in range(oh):
            for ox in range(ow):
                for ch in range(c):
                    best = None
                    for ky in range(k):
                        for kx in range(k):
                            v = x[bi, oy * stride + ky, ox * stride + kx, ch]
                            best = v if best is None or v > best else best
                    out[bi, oy, ox, ch] = best
    return out


def box_iou(a, b):
    ax0, ay0, ax1, ay1 = a[0], a[1], a[0] + a[2], a[1] + a[3]
    bx0, by0, bx1, by1 = b[0], b[1], b[0] + b[2], b[1] + b[3]
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    return inter / (a[2] * a[3] + b[2] * b[3] - inter)


def brute_nms(items, thr):
    """``items``: list of (class_id, score, bbox). Returns kept positions.

    Full pairwise IoU table first, then for each class a box survives iff
    no higher-ranked surviving box of its class overlaps it above ``thr``.
    """
    n = len(items)
    table = [[box_iou(items[i][2], items[j][2]) for j in range(n)] for i in range(n)]
    rank = sorted(range(n), key=lambda i: (-items[i][1], i))
    kept = []
    for i in rank:
        if all(items[j][0] != items[i][0] or table[i][j] <= thr for j in kept):
            kept.append(i)
    return sorted(kept)


def brute_filter(obj, cls, thr):
    out = []
    for i in range(len(obj)):
        for c in range(cls.shape[1]):
            s = float(obj[i]) * float(cls[i, c])
            if s > thr:
                out.append((i, c))
    return out


def brute_matching(dets, gts, thr):
    """Enumerate every partial injective det->gt assignment and keep the one
    that satisfies the greedy rule locally at every detection.

    ``dets``: list of (image, class, score, bbox) already in score order.
    Asserts the greedy-consistent assignment is unique.
    """
    nd, ng = len(dets), len(gts)
    options = [[None] + [j for j in range(ng)] for _ in range(nd)]
    found = []
    for assign in itertools.product(*options):
        used = [a for a in assign if a is not None]
        if len(used) != len(set(used)):
            continue
        ok = True
        for i, a in enumerate(assign):
            taken = {assign[k] for k in range(i) if assign[k] is not None}
            avail = [j for j in range(ng) if j not in taken
                     and gts[j][0] == dets[i][0] and gts[j][1] == dets[i][1]]
            ious = {j: box_iou(dets[i][3], gts[j][2]) for j in avail}
            best = max(ious.values(), default=-1.0)
            if a is None:
                ok = best < thr
            elif a not in ious:
                ok = False
            else:
                first_best = min(j for j in avail if ious[j] == best)
                ok = ious[a] >= thr and a == first_best
            if not ok:
                break
        if ok:
            found.append(assign)
    assert len(found) == 1, found
    return [a is not None for a in found[0]]


def brute_ap(labels, num_gt):
    """Precision envelope by definition: for each rank where recall rises,
    take the best precision at any rank with recall >= that level."""
    n = len(labels)
    if num_gt == 0:
        return 0.0
    prec, rec = [], []
    tp = 0
    for k in range(n):
        tp += labels[k]
        prec.append(tp / (k + 1))
        rec.append(tp / num_gt)
    ap, prev = 0.0, 0.0
    for k in range(n):
        if rec[k] > prev:
            ap += (rec[k] - prev) * max(prec[m] for m in range(n) if rec[m] >= rec[k])
            prev = rec[k]
    return ap
