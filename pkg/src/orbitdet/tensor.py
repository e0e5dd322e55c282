"""NHWC float tensors, the kernels needed to run small detection graphs, and
the ``TNSR`` binary file format.

Float tensors are plain ``numpy.ndarray`` objects of dtype ``float32``; the
int8 form is :class:`TensorI8`, which carries its fixed-point parameters.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend

MAGIC = b"TNSR"
DTYPE_F32 = 0
DTYPE_I8 = 1
MISH_LINEAR_CUTOFF = 20.0


class ShapeError(ValueError):
    """Tensor shapes are incompatible with the requested kernel."""


@dataclass(frozen=True)
class TensorI8:
    data: np.ndarray  # int8, any shape
    params: "QuantParams"  # noqa: F821  (orbitdet.quant.QuantParams)

    @property
    def shape(self):
        return self.data.shape


def as_f32(x) -> np.ndarray:
    return np.ascontiguousarray(x, dtype=np.float32)


def _check_4d(x, what="input"):
    if x.ndim != 4:
        raise ShapeError(f"{what} must be 4-D NHWC, got shape {x.shape}")
    if min(x.shape) < 1 and what != "concat operand":
        raise ShapeError(f"{what} has an empty dimension: {x.shape}")


# -- activations -------------------------------------------------------------

def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    safe = np.minimum(x, MISH_LINEAR_CUTOFF)
    return np.where(x > MISH_LINEAR_CUTOFF, x, np.log1p(np.exp(safe)))


def mish(x):
    """``x * tanh(softplus(x))`` without overflow for large ``x``.

    Scalars in give a Python float back; arrays give float32.
    """
    if np.isscalar(x):
        if x > MISH_LINEAR_CUTOFF:
            sp = float(x)
        else:
            sp = math.log1p(math.exp(x))
        return float(x) * math.tanh(sp)
    xd = np.asarray(x, dtype=np.float64)
    return (xd * np.tanh(softplus(xd))).astype(np.float32)


def leaky_relu(x, alpha=0.1):
    if np.isscalar(x):
        return x if x >= 0 else alpha * x
    x = as_f32(x)
    return np.where(x >= 0, x, np.float32(alpha) * x).astype(np.float32)


# -- spatial kernels ---------------------------------------------------------

def conv2d(x, weights, bias, stride=1, pad=0):
    """Zero-padded cross-correlation.

    ``weights`` is ``(out_ch, kh, kw, in_ch)``; accumulation is in float64
    and the result is rounded once to float32.
    """
    x, weights, bias = as_f32(x), as_f32(weights), as_f32(bias)
    _check_4d(x)
    _check_4d(weights, "weights")
    if stride < 1 or pad < 0:
        raise ShapeError(f"bad stride/pad: stride={stride} pad={pad}")
    o, kh, kw, c = weights.shape
    if c != x.shape[3]:
        raise ShapeError(f"weights expect {c} input channels, input has {x.shape[3]}")
    if bias.shape != (o,):
        raise ShapeError(f"bias shape {bias.shape} does not match {o} output channels")
    if kh > x.shape[1] + 2 * pad or kw > x.shape[2] + 2 * pad:
        raise ShapeError(f"kernel {kh}x{kw} exceeds padded input {x.shape[1:3]} (pad {pad})")
    return _backend.impl.conv2d(x, weights, bias, int(stride), int(pad))


def max_pool2d(x, k, stride=None):
    """Windowed max, no padding. Kernel-size limits are a graph concern."""
    x = as_f32(x)
    _check_4d(x)
    stride = k if stride is None else stride
    if k < 1 or stride < 1:
        raise ShapeError(f"bad pool k={k} stride={stride}")
    if k > x.shape[1] or k > x.shape[2]:
        raise ShapeError(f"pool kernel {k} exceeds spatial dims {x.shape[1:3]}")
    return _backend.impl.max_pool2d(x, int(k), int(stride))


def upsample_nearest2x(x):
    x = as_f32(x)
    _check_4d(x)
    return np.ascontiguousarray(x.repeat(2, axis=1).repeat(2, axis=2))


def concat_channels(a, b):
    a, b = as_f32(a), as_f32(b)
    if a.ndim != 4 or b.ndim != 4:
        raise ShapeError("concat operands must be 4-D")
    if a.shape[:3] != b.shape[:3]:
        raise ShapeError(f"concat spatial mismatch: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=3)


def add(a, b):
    a, b = as_f32(a), as_f32(b)
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


# -- TNSR files ---------------------------------------------------------------

def dumps(t) -> bytes:
    """Serialize a float32 array or a :class:`TensorI8`."""
    if isinstance(t, TensorI8):
        dtype, data = DTYPE_I8, np.ascontiguousarray(t.data, dtype="<i1")
    else:
        dtype, data = DTYPE_F32, np.ascontiguousarray(t, dtype="<f4")
    head = MAGIC + struct.pack("<BB", dtype, data.ndim)
    head += struct.pack(f"<{data.ndim}I", *data.shape)
    out = head + data.tobytes()
    if dtype == DTYPE_I8:
        out += struct.pack("<b", t.params.fraction_bits)
    return out


def loads(buf: bytes):
    if buf[:4] != MAGIC:
        raise ValueError("not a TNSR file (bad magic)")
    dtype, ndim = struct.unpack_from("<BB", buf, 4)
    dims = struct.unpack_from(f"<{ndim}I", buf, 6)
    off = 6 + 4 * ndim
    count = int(np.prod(dims, dtype=np.int64))
    if dtype == DTYPE_F32:
        if len(buf) != off + 4 * count:
            raise ValueError("TNSR payload length does not match dims")
        return np.frombuffer(buf, dtype="<f4", count=count, offset=off).reshape(dims).astype(np.float32)
    if dtype == DTYPE_I8:
        if len(buf) != off + count + 1:
            raise ValueError("TNSR payload length does not match dims")
        from .quant import QuantParams

        data = np.frombuffer(buf, dtype="<i1", count=count, offset=off).reshape(dims).astype(np.int8)
        (f,) = struct.unpack_from("<b", buf, off + count)
        return TensorI8(data, QuantParams(f))
    raise ValueError(f"unknown TNSR dtype byte {dtype}")


def save(path, t):
    Path(path).write_bytes(dumps(t))


def load(path):
    return loads(Path(path).read_bytes())
