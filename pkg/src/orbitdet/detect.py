"""YOLO-style front and back end: letterboxing, head decoding, confidence
filtering (serial or data-parallel), per-class NMS and mapping boxes back to
the source image.

Boxes are ``(x, y, w, h)`` with ``x, y`` the top-left corner.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import cv2
import numpy as np
from PIL import Image

from . import _backend

PAD_VALUE = 0.5


@dataclass(frozen=True)
class HeadConfig:
    input_size: int = 416
    strides: tuple = (8, 16, 32)
    anchors: tuple = (((32, 32),), ((96, 96),), ((224, 224),))
    num_classes: int = 3
    conf_threshold: float = 0.25
    nms_iou_threshold: float = 0.45

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        object.__setattr__(
            self, "anchors", tuple(tuple((float(w), float(h)) for w, h in per) for per in self.anchors)
        )
        if len(self.anchors) != len(self.strides):
            raise ValueError("need one anchor list per stride")
        for s in self.strides:
            if s < 1 or self.input_size % s:
                raise ValueError(f"input_size {self.input_size} not divisible by stride {s}")
        if any(len(a) < 1 for a in self.anchors):
            raise ValueError("every stride needs at least one anchor")
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        for name in ("conf_threshold", "nms_iou_threshold"):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must be in (0, 1)")

    def grid(self, i):
        return self.input_size // self.strides[i]

    @property
    def num_candidates(self):
        return sum(self.grid(i) ** 2 * len(a) for i, a in enumerate(self.anchors))

    def head_shape(self, i):
        g = self.grid(i)
        return (g, g, len(self.anchors[i]) * (5 + self.num_classes))

    @classmethod
    def from_dict(cls, doc):
        keys = cls.__dataclass_fields__
        return cls(**{k: v for k, v in doc.items() if k in keys})


@dataclass(frozen=True)
class LetterboxMeta:
    scale: float
    pad_x: int
    pad_y: int
    orig_w: int
    orig_h: int


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    bbox: tuple
    index: int = -1  # candidate index in decode order, -1 once unletterboxed
    image: str = ""

    def to_dict(self):
        return {"image": self.image, "class_id": int(self.class_id), "score": float(self.score),
                "bbox": [float(v) for v in self.bbox]}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["class_id"]), float(d["score"]), tuple(float(v) for v in d["bbox"]),
                   image=str(d.get("image", "")))


# -- images ---------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """HxWx3 float32 RGB in [0, 1]. PPM (P6) and anything Pillow reads."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_ppm(path, image):
    arr = np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(arr, "RGB").save(path, format="PPM")


def letterbox(image, cfg: HeadConfig = HeadConfig()):
    image = np.asarray(image, dtype=np.float32)
    h, w = image.shape[:2]
    size = cfg.input_size
    scale = min(size / w, size / h)
    new_w = min(size, max(1, int(round(w * scale))))
    new_h = min(size, max(1, int(round(h * scale))))
    pad_x, pad_y = (size - new_w) // 2, (size - new_h) // 2
    if (new_w, new_h) != (w, h):
        image = cv2.resize(image, (new_w, new_h), interpolation=cv2.INTER_LINEAR)
    out = np.full((size, size, 3), PAD_VALUE, dtype=np.float32)
    out[pad_y:pad_y + new_h, pad_x:pad_x + new_w] = image.reshape(new_h, new_w, 3)
    return out, LetterboxMeta(scale, pad_x, pad_y, w, h)


def letterbox_box(bbox, meta: LetterboxMeta):
    """Forward-map an original-image box into letterbox coordinates."""
    x, y, w, h = bbox
    s = meta.scale
    return (x * s + meta.pad_x, y * s + meta.pad_y, w * s, h * s)


# -- decode ---------------------------------------------------------------------

def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class Candidates:
    """Decoded head outputs, ordered by (stride, row, col, anchor)."""

    cxcywh: np.ndarray  # (N, 4) letterbox pixels
    objectness: np.ndarray  # (N,) sigmoid(obj)
    class_scores: np.ndarray  # (N, C) sigmoid(class)

    def __len__(self):
        return self.cxcywh.shape[0]

    @property
    def xywh(self):
        b = self.cxcywh.copy()
        b[:, :2] -= b[:, 2:] / 2
        return b


def decode(head_outputs, cfg: HeadConfig = HeadConfig()) -> Candidates:
    if len(head_outputs) != len(cfg.strides):
        raise ValueError(f"expected {len(cfg.strides)} head outputs, got {len(head_outputs)}")
    boxes, objs, clss = [], [], []
    nc = cfg.num_classes
    for i, raw in enumerate(head_outputs):
        raw = np.asarray(raw, dtype=np.float64)
        if raw.ndim == 4 and raw.shape[0] == 1:
            raw = raw[0]
        if raw.shape != cfg.head_shape(i):
            raise ValueError(f"head {i}: expected shape {cfg.head_shape(i)}, got {raw.shape}")
        g, s = cfg.grid(i), cfg.strides[i]
        anchors = np.asarray(cfg.anchors[i], dtype=np.float64)
        t = raw.reshape(g, g, len(anchors), 5 + nc)
        row = np.arange(g, dtype=np.float64)[:, None, None]
        col = np.arange(g, dtype=np.float64)[None, :, None]
        cx = (sigmoid(t[..., 0]) + col) * s
        cy = (sigmoid(t[..., 1]) + row) * s
        w = anchors[:, 0] * np.exp(t[..., 2])
        h = anchors[:, 1] * np.exp(t[..., 3])
        boxes.append(np.stack([cx, cy, w, h], axis=-1).reshape(-1, 4))
        objs.append(sigmoid(t[..., 4]).reshape(-1))
        clss.append(sigmoid(t[..., 5:]).reshape(-1, nc))
    return Candidates(np.concatenate(boxes), np.concatenate(objs), np.concatenate(clss))


# -- filtering --------------------------------------------------------------------

def _collect(cands, idx, cid, score):
    xywh = cands.xywh
    return [Detection(int(c), float(sc), tuple(float(v) for v in xywh[i]), int(i))
            for i, c, sc in zip(idx, cid, score)]


def filter_confidence(cands: Candidates, cfg: HeadConfig = HeadConfig(), mode="serial", workers=None):
    """Keep (candidate, class) pairs whose joint score
    ``objectness * class_score`` is strictly above the threshold.

    Output is ordered by candidate index, then class, in both modes.
    """
    n = len(cands)
    kern = _backend.impl.filter_range
    obj = np.ascontiguousarray(cands.objectness, dtype=np.float64)
    cls = np.ascontiguousarray(cands.class_scores, dtype=np.float64)
    thr = float(cfg.conf_threshold)
    if mode == "serial":
        return _collect(cands, *kern(obj, cls, 0, n, thr))
    if mode != "parallel":
        raise ValueError(f"unknown filter mode {mode!r}")
    workers = workers or max(2, os.cpu_count() or 1)
    bounds = np.linspace(0, n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda lh: kern(obj, cls, int(lh[0]), int(lh[1]), thr),
                              zip(bounds[:-1], bounds[1:])))
    return _collect(cands, *(np.concatenate(p) for p in zip(*parts)))


# -- NMS --------------------------------------------------------------------------

def iou(a, b) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    return inter / (aw * ah + bw * bh - inter)


def nms(dets, iou_threshold=0.45):
    """Greedy per-class NMS.

    Within a class, boxes are visited by descending score (ties: earlier in
    ``dets`` first); any box overlapping a kept one with IoU above the
    threshold is dropped. Survivors are returned in their input order.
    """
    dets = list(dets)
    by_class = {}
    for pos, d in enumerate(dets):
        by_class.setdefault(d.class_id, []).append(pos)
    keep = np.zeros(len(dets), dtype=bool)
    for positions in by_class.values():
        order = sorted(positions, key=lambda p: (-dets[p].score, p))
        boxes = np.array([dets[p].bbox for p in order], dtype=np.float64).reshape(-1, 4)
        mask = _backend.impl.nms_sorted(boxes, float(iou_threshold))
        keep[[p for p, k in zip(order, mask) if k]] = True
    return [d for d, k in zip(dets, keep) if k]


def unletterbox(dets, meta: LetterboxMeta):
    out = []
    s = meta.scale
    for d in dets:
        x, y, w, h = d.bbox
        x0 = (x - meta.pad_x) / s
        y0 = (y - meta.pad_y) / s
        x1, y1 = x0 + w / s, y0 + h / s
        x0, x1 = np.clip([x0, x1], 0, meta.orig_w)
        y0, y1 = np.clip([y0, y1], 0, meta.orig_h)
        if x1 > x0 and y1 > y0:
            out.append(Detection(d.class_id, d.score, (float(x0), float(y0), float(x1 - x0), float(y1 - y0))))
    return out


def postprocess(head_outputs, cfg: HeadConfig, meta: LetterboxMeta, mode="serial"):
    cands = decode(head_outputs, cfg)
    kept = nms(filter_confidence(cands, cfg, mode), cfg.nms_iou_threshold)
    return unletterbox(kept, meta)
