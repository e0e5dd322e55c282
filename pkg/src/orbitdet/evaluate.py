"""Per-class average precision and mAP at a single IoU threshold (VOC-style,
all-points interpolation)."""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .detect import Detection, iou


class NoGroundTruthError(ValueError):
    pass


@dataclass(frozen=True)
class GroundTruth:
    image: str
    class_id: int
    bbox: tuple

    def __post_init__(self):
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise ValueError(f"ground-truth box must have positive size: {self.bbox}")

    def to_dict(self):
        return {"image": self.image, "class_id": self.class_id, "bbox": list(self.bbox)}

    @classmethod
    def from_dict(cls, d):
        return cls(str(d.get("image", "")), int(d["class_id"]), tuple(float(v) for v in d["bbox"]))


@dataclass(frozen=True)
class EvalReport:
    ap: dict  # class_id -> AP, only classes present in ground truth
    map: float
    iou_threshold: float = 0.5

    def to_dict(self):
        return {"iou": self.iou_threshold,
                "ap": {str(k): v for k, v in sorted(self.ap.items())},
                "map": self.map}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2) + "\n"


def score_order(dets):
    """Indices sorted by descending score; ties keep input order."""
    return sorted(range(len(dets)), key=lambda i: -dets[i].score)


def match_detections(dets, gts, iou_thresh=0.5):
    """TP (True) / FP (False) per detection, aligned with ``dets``.

    Detections are visited best-first; each takes the unmatched ground truth
    of the same image and class with the highest IoU, if that IoU reaches the
    threshold. A ground truth is matched at most once.
    """
    pools = {}
    for j, g in enumerate(gts):
        pools.setdefault((g.image, g.class_id), []).append(j)
    matched = set()
    labels = [False] * len(dets)
    for i in score_order(dets):
        d = dets[i]
        best, best_iou = None, -1.0
        for j in pools.get((d.image, d.class_id), ()):
            if j in matched:
                continue
            ov = iou(d.bbox, gts[j].bbox)
            if ov > best_iou:
                best, best_iou = j, ov
        if best is not None and best_iou >= iou_thresh:
            matched.add(best)
            labels[i] = True
    return labels


def average_precision(labels, num_gt):
    """Area under the monotone precision envelope of a TP/FP sequence that is
    already in descending score order."""
    if num_gt <= 0:
        return 0.0
    tp = np.cumsum(np.asarray(labels, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(labels, dtype=np.float64))
    rec = tp / num_gt
    prec = np.divide(tp, tp + fp, out=np.zeros_like(tp), where=(tp + fp) > 0)
    mrec = np.concatenate([[0.0], rec, [1.0]])
    mpre = np.concatenate([[0.0], prec, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    step = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[step + 1] - mrec[step]) * mpre[step + 1]))


def mean_ap(per_class_ap):
    if not per_class_ap:
        raise NoGroundTruthError("no class has ground truth; mAP is undefined")
    return float(sum(per_class_ap.values()) / len(per_class_ap))


def evaluate(dets, gts, iou_thresh=0.5) -> EvalReport:
    dets = [d if isinstance(d, Detection) else Detection.from_dict(d) for d in dets]
    gts = [g if isinstance(g, GroundTruth) else GroundTruth.from_dict(g) for g in gts]
    classes = sorted({g.class_id for g in gts})
    if not classes:
        raise NoGroundTruthError("annotation set is empty")
    ap = {}
    for c in classes:
        cd = [d for d in dets if d.class_id == c]
        cg = [g for g in gts if g.class_id == c]
        labels = match_detections(cd, cg, iou_thresh)
        ap[c] = average_precision([labels[i] for i in score_order(cd)], len(cg))
    return EvalReport(ap, mean_ap(ap), iou_thresh)
