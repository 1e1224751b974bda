"""Dense float32 array substrate.

A "tensor" here is a plain ``numpy.ndarray`` of dtype float32 in C (row-major)
order. This module holds the handful of primitives the rest of the package
needs: matmul, 2-D cross-correlation with its gradient, average pooling,
reductions with wide accumulators, and a keyed counter-based random source.
"""

from __future__ import annotations

import hashlib
import struct
from typing import Sequence

import numpy as np

from snnforge.errors import InvalidStride, NonFinite, ShapeMismatch

DTYPE = np.float32
_MASK64 = (1 << 64) - 1


def as_tensor(x, *, name: str = "tensor") -> np.ndarray:
    """Return ``x`` as a contiguous float32 array, rejecting NaN/Inf."""
    arr = np.ascontiguousarray(x, dtype=DTYPE)
    check_finite(arr, name)
    return arr


def check_finite(x: np.ndarray, name: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"{name} contains NaN or Inf")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``c[i, j] = sum_p a[i, p] * b[p, j]`` for 2-D float32 operands."""
    a = np.asarray(a, dtype=DTYPE)
    b = np.asarray(b, dtype=DTYPE)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"inner extents differ: {a.shape} x {b.shape}")
    out = a @ b
    check_finite(out, "matmul result")
    return out


def _conv_out_extent(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold ``x`` of shape (N, C, H, W) into (N, Ho, Wo, C*kh*kw) patches."""
    if stride < 1:
        raise InvalidStride(f"stride must be >= 1, got {stride}")
    n, c, h, w = x.shape
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise ShapeMismatch(f"kernel {kh}x{kw} larger than padded input {h + 2 * pad}x{w + 2 * pad}")
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, Ho, Wo, kh, kw)
    ho, wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * kh * kw)


def conv2d(
    x: np.ndarray,
    k: np.ndarray,
    stride: int = 1,
    pad: int = 0,
    bias: np.ndarray | None = None,
) -> np.ndarray:
    """Cross-correlate ``x`` (C,H,W) or (N,C,H,W) with ``k`` (F,C,Kh,Kw).

    Output extent is ``(H + 2*pad - Kh) // stride + 1`` along each axis.
    """
    x = np.asarray(x, dtype=DTYPE)
    k = np.asarray(k, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4 or k.ndim != 4:
        raise ShapeMismatch(f"conv2d expects (N,)C,H,W input and F,C,Kh,Kw kernel, got {x.shape}, {k.shape}")
    if x.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"channel mismatch: input {x.shape[1]} vs kernel {k.shape[1]}")
    f, _, kh, kw = k.shape
    cols = im2col(x, kh, kw, stride, pad)
    out = cols @ k.reshape(f, -1).T  # (N, Ho, Wo, F)
    if bias is not None:
        out = out + np.asarray(bias, dtype=DTYPE)
    out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
    check_finite(out, "conv2d result")
    return out[0] if single else out


def conv2d_backward(
    x: np.ndarray, k: np.ndarray, grad_out: np.ndarray, stride: int = 1, pad: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of a batched conv2d w.r.t. input, kernel and bias."""
    n, c, h, w = x.shape
    f, _, kh, kw = k.shape
    cols = im2col(x, kh, kw, stride, pad)
    _, ho, wo, ckk = cols.shape
    g = np.ascontiguousarray(grad_out.transpose(0, 2, 3, 1)).reshape(-1, f)
    grad_k = (g.T @ cols.reshape(-1, ckk)).reshape(k.shape)
    grad_b = g.sum(axis=0)
    dcols = (g @ k.reshape(f, -1)).reshape(n, ho, wo, c, kh, kw)
    dxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    grad_x = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return np.ascontiguousarray(grad_x), grad_k.astype(DTYPE), grad_b.astype(DTYPE)


def avgpool2d(x: np.ndarray, size: int) -> np.ndarray:
    """Non-overlapping ``size`` x ``size`` mean pooling on (N,)C,H,W input."""
    x = np.asarray(x, dtype=DTYPE)
    single = x.ndim == 3
    if single:
        x = x[None]
    n, c, h, w = x.shape
    if h % size or w % size:
        raise ShapeMismatch(f"avgpool size {size} does not divide spatial extent {h}x{w}")
    out = x.reshape(n, c, h // size, size, w // size, size).mean(axis=(3, 5), dtype=DTYPE)
    return out[0] if single else out


def avgpool2d_backward(grad_out: np.ndarray, size: int) -> np.ndarray:
    g = grad_out / DTYPE(size * size)
    return np.repeat(np.repeat(g, size, axis=2), size, axis=3)


# Reductions accumulate in float64 so they stay within 1e-6 relative of a
# sequential reference regardless of array length.


def tsum(x: np.ndarray) -> float:
    return float(np.sum(np.asarray(x, dtype=np.float64)))


def tmean(x: np.ndarray) -> float:
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ShapeMismatch("mean of an empty tensor")
    return float(x.mean())


def tstd(x: np.ndarray) -> float:
    """Population standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise ShapeMismatch("std of an empty tensor")
    return float(x.std())


def _mix_key(stream_key: int, label) -> int:
    h = hashlib.blake2b(digest_size=8)
    h.update(struct.pack("<Q", stream_key & _MASK64))
    h.update(repr(label).encode())
    return int.from_bytes(h.digest(), "little")


class RandomSource:
    """Keyed Philox stream.

    ``(seed, stream_key)`` fixes the 128-bit Philox key, so two sources with the
    same pair produce the same draws on any platform, and sources with different
    stream keys are independent regardless of the order they are consumed in.
    """

    def __init__(self, seed: int, stream_key: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_key = int(stream_key) & _MASK64
        bitgen = np.random.Philox(key=(self.seed << 64) | self.stream_key)
        self.generator = np.random.Generator(bitgen)

    def derive(self, *labels) -> "RandomSource":
        """Independent substream named by ``labels`` (ints or strings)."""
        key = self.stream_key
        for label in labels:
            key = _mix_key(key, label)
        return RandomSource(self.seed, key)

    def __repr__(self):
        return f"RandomSource(seed={self.seed}, stream_key={self.stream_key:#x})"


def gaussian(rs: RandomSource, shape: Sequence[int] | int) -> np.ndarray:
    """I.i.d. standard-normal float32 draws; advances ``rs``."""
    return rs.generator.standard_normal(shape, dtype=DTYPE)


def uniform(rs: RandomSource, shape: Sequence[int] | int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    u = rs.generator.random(shape, dtype=DTYPE)
    return (DTYPE(low) + u * DTYPE(high - low)).astype(DTYPE)


def permutation(rs: RandomSource, n: int) -> np.ndarray:
    return rs.generator.permutation(n)
