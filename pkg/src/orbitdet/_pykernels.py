"""Numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is not importable, and as the
comparison baseline in ``benchmarks/``. Every function here has the same
signature and output dtype as its compiled twin.
"""
import numpy as np


def conv2d(x, w, b, stride, pad):
    n, h, wd, c = x.shape
    o, kh, kw, _ = w.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    xp = np.pad(x.astype(np.float64), ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(1, 2))
    # win: (n, h', w', c, kh, kw) -> strided output positions
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n, oh, ow, kh * kw * c)
    wm = w.astype(np.float64).reshape(o, kh * kw * c)
    out = cols @ wm.T + b.astype(np.float64)
    return out.astype(np.float32)


def max_pool2d(x, k, stride):
    n, h, w, c = x.shape
    oh = (h - k) // stride + 1
    ow = (w - k) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, : (oh - 1) * stride + 1 : stride, : (ow - 1) * stride + 1 : stride]
    return np.ascontiguousarray(win.max(axis=(4, 5)), dtype=np.float32)


def filter_range(obj, cls, lo, hi, threshold):
    joint = obj[lo:hi, None] * cls[lo:hi]
    rows, cols = np.nonzero(joint > threshold)
    return (
        (rows + lo).astype(np.int64),
        cols.astype(np.int64),
        joint[rows, cols].astype(np.float64),
    )


def iou_matrix(a, b):
    ax1, ay1 = a[:, 0, None], a[:, 1, None]
    ax2, ay2 = ax1 + a[:, 2, None], ay1 + a[:, 3, None]
    bx1, by1 = b[None, :, 0], b[None, :, 1]
    bx2, by2 = bx1 + b[None, :, 2], by1 + b[None, :, 3]
    ix = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    iy = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = ix * iy
    union = a[:, 2, None] * a[:, 3, None] + b[None, :, 2] * b[None, :, 3] - inter
    return inter / union


def nms_sorted(boxes, iou_threshold):
    """Greedy suppression over boxes already sorted best-first.

    Returns a uint8 keep mask.
    """
    n = boxes.shape[0]
    keep = np.ones(n, dtype=np.uint8)
    for i in range(n):
        if not keep[i] or i == n - 1:
            continue
        ov = iou_matrix(boxes[i : i + 1], boxes[i + 1 :])[0]
        keep[i + 1 :][ov > iou_threshold] = 0
    return keep
