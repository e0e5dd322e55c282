"""Symmetric power-of-two INT8 post-training quantization.

A tensor with ``fraction_bits = f`` stores ``q = round(x * 2**f)`` clamped to
int8, so the step is ``2**-f`` and the zero point is always 0.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import TensorI8

QMIN, QMAX = -128, 127
F_MIN, F_MAX = -16, 16


@dataclass(frozen=True)
class QuantParams:
    fraction_bits: int

    @property
    def scale(self) -> float:
        return 2.0 ** -self.fraction_bits

    @property
    def range(self):
        return QMIN * self.scale, QMAX * self.scale


def choose_fraction_bits(max_abs: float) -> int:
    """Largest f in [F_MIN, F_MAX] with ``127 * 2**-f >= max_abs``."""
    if max_abs < 0 or not math.isfinite(max_abs):
        raise ValueError(f"max_abs must be finite and >= 0, got {max_abs}")
    for f in range(F_MAX, F_MIN - 1, -1):
        if QMAX * 2.0 ** -f >= max_abs:
            return f
    return F_MIN


def quantize(x, p: QuantParams) -> TensorI8:
    # x * 2**f is exact in float64, so rint (half-to-even) sees the true value
    scaled = np.asarray(x, dtype=np.float64) * (2.0 ** p.fraction_bits)
    q = np.clip(np.rint(scaled), QMIN, QMAX).astype(np.int8)
    return TensorI8(q, p)


def dequantize(q: TensorI8, p: QuantParams | None = None) -> np.ndarray:
    p = q.params if p is None else p
    return (q.data.astype(np.float64) * p.scale).astype(np.float32)


def fake_quant(x, p: QuantParams) -> np.ndarray:
    return dequantize(quantize(x, p))


@dataclass
class CalibrationStats:
    """Running max-abs per activation edge and per weight tensor."""

    edges: dict = field(default_factory=dict)
    weights: dict = field(default_factory=dict)
    samples: int = 0

    def observe(self, table, key, x):
        m = float(np.max(np.abs(x))) if np.size(x) else 0.0
        table[key] = max(table.get(key, 0.0), m)

    def merge(self, other: "CalibrationStats") -> "CalibrationStats":
        out = CalibrationStats(dict(self.edges), dict(self.weights), self.samples + other.samples)
        for src, dst in ((other.edges, out.edges), (other.weights, out.weights)):
            for k, v in src.items():
                dst[k] = max(dst.get(k, 0.0), v)
        return out

    def params(self) -> "QuantTable":
        if self.samples < 1:
            raise ValueError("no calibration samples observed")
        return QuantTable(
            {k: QuantParams(choose_fraction_bits(v)) for k, v in self.edges.items()},
            {k: QuantParams(choose_fraction_bits(v)) for k, v in self.weights.items()},
        )


@dataclass
class QuantTable:
    """Per-node fixed-point params: ``edges`` for node outputs, ``weights``
    for conv weight tensors. Biases stay in float (accumulator precision)."""

    edges: dict
    weights: dict

    def to_json(self) -> str:
        doc = {
            "edges": {k: p.fraction_bits for k, p in sorted(self.edges.items())},
            "weights": {k: p.fraction_bits for k, p in sorted(self.weights.items())},
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "QuantTable":
        doc = json.loads(text)
        return cls(
            {k: QuantParams(int(f)) for k, f in doc.get("edges", {}).items()},
            {k: QuantParams(int(f)) for k, f in doc.get("weights", {}).items()},
        )


def calibrate(g, calibration_inputs) -> QuantTable:
    """Max-abs calibration of every activation edge and weight of ``g``.

    ``calibration_inputs`` is a list of ``{input_node_id: tensor}`` maps, or of
    bare tensors when the graph has a single input node.
    """
    from .graph import execute

    calibration_inputs = list(calibration_inputs)
    if not calibration_inputs:
        raise ValueError("calibration set is empty")
    stats = CalibrationStats()
    for node in g.nodes:
        if node.op == "conv2d":
            stats.observe(stats.weights, node.id, g.weight(node))
    input_ids = [n.id for n in g.nodes if n.op == "input"]
    for sample in calibration_inputs:
        if not isinstance(sample, dict):
            if len(input_ids) != 1:
                raise ValueError("bare tensors need a single-input graph")
            sample = {input_ids[0]: sample}
        values = execute(g, sample, keep_all=True)
        for node in g.nodes:
            if node.op != "output":
                stats.observe(stats.edges, node.id, values[node.id])
        stats.samples += 1
    return stats.params()
