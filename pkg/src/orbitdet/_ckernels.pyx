# cython: language_level=3
"""Compiled loop kernels; same contracts as ``_pykernels``.

Inner loops run without the GIL so stage workers in a pipelined run and the
parallel confidence filter can overlap.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _dot(const double* a, const double* b, Py_ssize_t m) noexcept nogil:
    # four independent partial sums so the loop pipelines without fast-math
    cdef double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0
    cdef Py_ssize_t i = 0
    while i + 4 <= m:
        s0 = s0 + a[i] * b[i]
        s1 = s1 + a[i + 1] * b[i + 1]
        s2 = s2 + a[i + 2] * b[i + 2]
        s3 = s3 + a[i + 3] * b[i + 3]
        i += 4
    while i < m:
        s0 = s0 + a[i] * b[i]
        i += 1
    return (s0 + s1) + (s2 + s3)


def conv2d(x, w, b, int stride, int pad):
    cdef const double[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32).astype(np.float64)
    cdef const double[:, :, :, ::1] wv = np.ascontiguousarray(w, dtype=np.float32).astype(np.float64)
    cdef const float[::1] bv = np.ascontiguousarray(b, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], wd = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t o = wv.shape[0], kh = wv.shape[1], kw = wv.shape[2]
    cdef Py_ssize_t oh = (h + 2 * pad - kh) // stride + 1
    cdef Py_ssize_t ow = (wd + 2 * pad - kw) // stride + 1
    out = np.empty((n, oh, ow, o), dtype=np.float32)
    cdef float[:, :, :, ::1] ov = out
    cdef Py_ssize_t bi, oy, ox, oc, ky, iy, x0, x1, kx0
    cdef double acc
    with nogil:
        for bi in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    # clip the kernel window horizontally once; the valid span is contiguous
                    x0 = ox * stride - pad
                    x1 = x0 + kw
                    kx0 = 0
                    if x0 < 0:
                        kx0 = -x0
                        x0 = 0
                    if x1 > wd:
                        x1 = wd
                    for oc in range(o):
                        acc = 0.0
                        if x1 > x0:
                            for ky in range(kh):
                                iy = oy * stride + ky - pad
                                if iy < 0 or iy >= h:
                                    continue
                                acc = acc + _dot(&xv[bi, iy, x0, 0], &wv[oc, ky, kx0, 0], (x1 - x0) * c)
                        ov[bi, oy, ox, oc] = <float>(acc + <double>bv[oc])
    return out


def max_pool2d(x, int k, int stride):
    cdef const float[:, :, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    cdef Py_ssize_t n = xv.shape[0], h = xv.shape[1], w = xv.shape[2], c = xv.shape[3]
    cdef Py_ssize_t oh = (h - k) // stride + 1
    cdef Py_ssize_t ow = (w - k) // stride + 1
    out = np.empty((n, oh, ow, c), dtype=np.float32)
    cdef float[:, :, :, ::1] ov = out
    cdef Py_ssize_t bi, oy, ox, ch, ky, kx
    cdef float m, v
    with nogil:
        for bi in range(n):
            for oy in range(oh):
                for ox in range(ow):
                    for ch in range(c):
                        m = xv[bi, oy * stride, ox * stride, ch]
                        for ky in range(k):
                            for kx in range(k):
                                v = xv[bi, oy * stride + ky, ox * stride + kx, ch]
                                if v > m:
                                    m = v
                        ov[bi, oy, ox, ch] = m
    return out


def filter_range(obj, cls, Py_ssize_t lo, Py_ssize_t hi, double threshold):
    cdef const double[::1] ob = np.ascontiguousarray(obj, dtype=np.float64)
    cdef const double[:, ::1] cl = np.ascontiguousarray(cls, dtype=np.float64)
    cdef Py_ssize_t nc = cl.shape[1]
    cdef Py_ssize_t cap = (hi - lo) * nc
    idx = np.empty(cap, dtype=np.int64)
    cid = np.empty(cap, dtype=np.int64)
    score = np.empty(cap, dtype=np.float64)
    cdef cnp.int64_t[::1] iv = idx
    cdef cnp.int64_t[::1] cv = cid
    cdef double[::1] sv = score
    cdef Py_ssize_t i, j, m = 0
    cdef double joint
    with nogil:
        for i in range(lo, hi):
            for j in range(nc):
                joint = ob[i] * cl[i, j]
                if joint > threshold:
                    iv[m] = i
                    cv[m] = j
                    sv[m] = joint
                    m += 1
    return idx[:m], cid[:m], score[:m]


cdef inline double _iou(const double[:, ::1] bx, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef double ax1 = bx[a, 0], ay1 = bx[a, 1]
    cdef double ax2 = ax1 + bx[a, 2], ay2 = ay1 + bx[a, 3]
    cdef double bx1 = bx[b, 0], by1 = bx[b, 1]
    cdef double bx2 = bx1 + bx[b, 2], by2 = by1 + bx[b, 3]
    cdef double ix = (ax2 if ax2 < bx2 else bx2) - (ax1 if ax1 > bx1 else bx1)
    cdef double iy = (ay2 if ay2 < by2 else by2) - (ay1 if ay1 > by1 else by1)
    if ix < 0.0:
        ix = 0.0
    if iy < 0.0:
        iy = 0.0
    cdef double inter = ix * iy
    cdef double union = bx[a, 2] * bx[a, 3] + bx[b, 2] * bx[b, 3] - inter
    return inter / union


def nms_sorted(boxes, double iou_threshold):
    cdef const double[:, ::1] bx = np.ascontiguousarray(boxes, dtype=np.float64)
    cdef Py_ssize_t n = bx.shape[0]
    keep = np.ones(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] kv = keep
    cdef Py_ssize_t i, j
    with nogil:
        for i in range(n):
            if not kv[i]:
                continue
            for j in range(i + 1, n):
                if kv[j] and _iou(bx, i, j) > iou_threshold:
                    kv[j] = 0
    return keep
