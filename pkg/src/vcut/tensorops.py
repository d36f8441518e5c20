"""Deterministic dense-tensor primitives everything else is written in.

All operations work on C-contiguous numpy arrays of float32 or float64,
preserve the input dtype, and are pure functions of their operand bytes.
The default matmul accumulates strictly in ascending inner-index order so
the result is reproducible bit-for-bit across platforms and BLAS builds;
``fast=True`` dispatches to BLAS instead and is only guaranteed to agree
with the reference path to about 1e-4.
"""

from __future__ import annotations

import numpy as np

from .errors import ArgumentError, NumericError, ShapeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _as_tensor(x, name: str) -> np.ndarray:
    x = np.asarray(x)
    if x.dtype not in SUPPORTED_DTYPES:
        raise ArgumentError(f"{name}: dtype must be float32 or float64, got {x.dtype}")
    if x.ndim < 1 or x.size == 0:
        raise ShapeError(f"{name}: rank >= 1 with all extents >= 1 required, got shape {x.shape}")
    return x


def _common_dtype(a: np.ndarray, b: np.ndarray) -> np.dtype:
    if a.dtype != b.dtype:
        raise ArgumentError(f"mixed dtypes {a.dtype} and {b.dtype}; cast explicitly")
    return a.dtype


def matmul(a, b, fast: bool = False) -> np.ndarray:
    """Batched matrix product of [..., m, k] with [..., k, n].

    The reference path adds contributions in ascending k order, one rank-1
    update at a time, which makes the summation order part of the contract.
    """
    a = _as_tensor(a, "a")
    b = _as_tensor(b, "b")
    _common_dtype(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner extents disagree: {a.shape} x {b.shape}")
    try:
        batch = np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError as exc:
        raise ShapeError(f"matmul batch extents not broadcastable: {a.shape} x {b.shape}") from exc
    if fast:
        return np.matmul(a, b)
    m, k, n = a.shape[-2], a.shape[-1], b.shape[-1]
    out = np.zeros(batch + (m, n), dtype=a.dtype)
    for t in range(k):
        out += a[..., :, t : t + 1] * b[..., t : t + 1, :]
    return out


def affine(x, w, bias) -> np.ndarray:
    """x @ w + bias over the last axis of x; w is [k, n], bias is [n]."""
    x = _as_tensor(x, "x")
    w = _as_tensor(w, "w")
    bias = _as_tensor(bias, "bias")
    if w.ndim != 2 or bias.ndim != 1 or w.shape[1] != bias.shape[0]:
        raise ShapeError(f"affine weights {w.shape} and bias {bias.shape} disagree")
    if x.shape[-1] != w.shape[0]:
        raise ShapeError(f"affine input extent {x.shape} does not match weight {w.shape}")
    lead = x.shape[:-1]
    flat = x.reshape(-1, x.shape[-1])
    out = matmul(flat, w) + bias
    return out.reshape(lead + (w.shape[1],))


def softmax_lastdim(x) -> np.ndarray:
    """Max-subtracted softmax over the last axis.

    A last axis of extent 1 yields exactly 1.0 for any finite input.
    """
    x = _as_tensor(x, "x")
    if not np.isfinite(x).all():
        raise NumericError("softmax input contains non-finite values")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm(x, gain, bias, eps: float = 1e-5) -> np.ndarray:
    """Normalize the last axis to zero mean / unit variance, then scale and shift."""
    x = _as_tensor(x, "x")
    gain = _as_tensor(gain, "gain")
    bias = _as_tensor(bias, "bias")
    if eps <= 0:
        raise ArgumentError(f"layer_norm eps must be positive, got {eps}")
    if gain.shape != (x.shape[-1],) or bias.shape != (x.shape[-1],):
        raise ShapeError(f"layer_norm gain/bias {gain.shape}/{bias.shape} do not match last extent of {x.shape}")
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    normed = centered / np.sqrt(var + x.dtype.type(eps))
    return normed * gain + bias


# ---------------------------------------------------------------------------
# Seeded pseudo-random stream.

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_U64_MASK = np.uint64(0xFFFFFFFFFFFFFFFF)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _MIX1
    z = (z ^ (z >> np.uint64(27))) * _MIX2
    return z ^ (z >> np.uint64(31))


class Rng:
    """SplitMix64 stream: draw i is mix64(seed + (i+1) * 0x9E3779B97F4A7C15).

    Counter-based, so blocks of draws vectorize while the sequence stays
    identical to the scalar recurrence (state += golden; output mix(state)).
    One instance must not be shared across threads.
    """

    def __init__(self, seed: int):
        self._seed = np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF)
        self._drawn = 0

    @property
    def seed(self) -> int:
        return int(self._seed)

    def next_u64(self, n: int = 1) -> np.ndarray:
        if n < 1:
            raise ArgumentError(f"draw count must be >= 1, got {n}")
        idx = np.arange(self._drawn + 1, self._drawn + n + 1, dtype=np.uint64)
        self._drawn += n
        with np.errstate(over="ignore"):
            return _mix64((self._seed + idx * _GOLDEN) & _U64_MASK)

    def uniform(self, lo: float, hi: float, dims, dtype=np.float32) -> np.ndarray:
        return rng_uniform(self, lo, hi, dims, dtype)


def rng_uniform(rng: Rng, lo: float, hi: float, dims, dtype=np.float32) -> np.ndarray:
    """I.i.d. draws in [lo, hi), consuming the stream deterministically."""
    dtype = np.dtype(dtype)
    if dtype not in SUPPORTED_DTYPES:
        raise ArgumentError(f"dtype must be float32 or float64, got {dtype}")
    if not (lo < hi):
        raise ArgumentError(f"uniform range requires lo < hi, got [{lo}, {hi})")
    dims = (int(dims),) if np.isscalar(dims) else tuple(int(d) for d in dims)
    n = 1
    for d in dims:
        if d < 1:
            raise ShapeError(f"all extents must be >= 1, got {dims}")
        n *= d
    bits = rng.next_u64(n)
    if dtype == np.dtype(np.float64):
        unit = (bits >> np.uint64(11)).astype(np.float64) * (2.0**-53)
    else:
        unit = (bits >> np.uint64(40)).astype(np.float32) * np.float32(2.0**-24)
    lo_t, hi_t = dtype.type(lo), dtype.type(hi)
    out = lo_t + (hi_t - lo_t) * unit
    # rounding at the top of the range may touch hi; clamp back into [lo, hi)
    np.minimum(out, np.nextafter(hi_t, lo_t), out=out)
    return out.reshape(dims)


def normal_like(rng: Rng, dims, dtype=np.float32) -> np.ndarray:
    """Standard normal draws via Box-Muller on the uniform stream."""
    dims = (int(dims),) if np.isscalar(dims) else tuple(int(d) for d in dims)
    n = 1
    for d in dims:
        n *= d
    u1 = rng_uniform(rng, 0.0, 1.0, (n,), np.float64)
    u2 = rng_uniform(rng, 0.0, 1.0, (n,), np.float64)
    z = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
    return z.reshape(dims).astype(dtype)
