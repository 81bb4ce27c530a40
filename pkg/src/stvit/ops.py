"""Core numeric kernels.

Every operation computes in 64-bit floats regardless of storage dtype; results
are narrowed back to float32 only when every floating input was float32. All
functions are pure: inputs are never modified in place.

Multiply-accumulate accounting: matmul and depthwise_conv2d record their MAC
counts into the active ``count_macs`` context, split by ``mac_scope`` labels,
so an instrumented forward pass can be compared exactly against the analytical
counter.
"""
from __future__ import annotations

import contextlib
import contextvars
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

Array = np.ndarray


# ---------------------------------------------------------------------------
# dtype policy

def _wide(x: Array) -> Array:
    return np.asarray(x, dtype=np.float64)


def _narrow(result: Array, *inputs) -> Array:
    """Return float32 only when every floating input was stored as float32."""
    arrays = [np.asarray(i) for i in inputs if i is not None]
    if arrays and all(a.dtype == np.float32 for a in arrays):
        return result.astype(np.float32)
    return result


# ---------------------------------------------------------------------------
# MAC accounting

@dataclass
class MacCounter:
    """Running multiply-accumulate tally, split by enclosing scope names."""

    total: int = 0
    by_scope: dict = field(default_factory=dict)

    def add(self, macs: int, scopes: tuple) -> None:
        self.total += macs
        for name in scopes:
            self.by_scope[name] = self.by_scope.get(name, 0) + macs


# Holds (counter, scope name stack) or None when counting is off.
_counter_state: contextvars.ContextVar = contextvars.ContextVar(
    "stvit_mac_counter", default=None
)


@contextlib.contextmanager
def count_macs() -> Iterator[MacCounter]:
    """Collect MAC counts for every op executed inside the context."""
    counter = MacCounter()
    token = _counter_state.set((counter, ()))
    try:
        yield counter
    finally:
        _counter_state.reset(token)


@contextlib.contextmanager
def mac_scope(name: str) -> Iterator[None]:
    """Label MACs recorded inside the context; nests, and no-ops when counting is off."""
    state = _counter_state.get()
    if state is None:
        yield
        return
    counter, stack = state
    token = _counter_state.set((counter, stack + (name,)))
    try:
        yield
    finally:
        _counter_state.reset(token)


def _record_macs(macs: int) -> None:
    state = _counter_state.get()
    if state is not None:
        counter, stack = state
        counter.add(macs, stack)


# ---------------------------------------------------------------------------
# weight containers

@dataclass
class LinearWeights:
    """Dense projection: weight [in, out] with optional bias [out]."""

    weight: Array
    bias: Optional[Array] = None

    def __post_init__(self):
        self.weight = np.asarray(self.weight)
        if self.weight.ndim != 2:
            raise ShapeError(f"linear weight must be rank 2, got shape {self.weight.shape}")
        if self.bias is not None:
            self.bias = np.asarray(self.bias)
            if self.bias.shape != (self.weight.shape[1],):
                raise ShapeError(
                    f"linear bias shape {self.bias.shape} does not match "
                    f"weight out extent {self.weight.shape[1]}"
                )


@dataclass
class LayerNormParams:
    """Affine parameters for layer normalization over the channel axis."""

    gamma: Array
    beta: Array


# ---------------------------------------------------------------------------
# operations

def matmul(a: Array, b: Array) -> Array:
    """Matrix product with 64-bit accumulation.

    Accepts [m,k] @ [k,n] or head-stacked [s,m,k] @ [s,k,n].
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 2 and b.ndim == 2:
        if a.shape[1] != b.shape[0]:
            raise ShapeError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
        _record_macs(a.shape[0] * a.shape[1] * b.shape[1])
    elif a.ndim == 3 and b.ndim == 3:
        if a.shape[0] != b.shape[0] or a.shape[2] != b.shape[1]:
            raise ShapeError(f"stacked matmul extents differ: {a.shape} vs {b.shape}")
        _record_macs(a.shape[0] * a.shape[1] * a.shape[2] * b.shape[2])
    else:
        raise ShapeError(
            f"matmul expects rank-2 or stacked rank-3 operands, got {a.shape} and {b.shape}"
        )
    return _narrow(np.matmul(_wide(a), _wide(b)), a, b)


def linear(x: Array, w: LinearWeights) -> Array:
    """Apply a dense projection to the last axis of a token matrix."""
    out = matmul(x, w.weight)
    if w.bias is not None:
        out = out + np.asarray(w.bias, dtype=out.dtype)
    return out


def softmax_rows(x: Array) -> Array:
    """Row-wise softmax over the last axis, stabilized by max subtraction."""
    x = np.asarray(x)
    if np.isnan(x).any():
        raise NumericError("softmax_rows: NaN in input")
    wide = _wide(x)
    row_max = np.max(wide, axis=-1, keepdims=True)
    if np.isneginf(row_max).any():
        raise NumericError("softmax_rows: row with no finite entry")
    exps = np.exp(wide - row_max)
    out = exps / np.sum(exps, axis=-1, keepdims=True)
    return _narrow(out, x)


def layer_norm(x: Array, gamma: Array, beta: Array, eps: float = 1e-5) -> Array:
    """Normalize each row to zero mean and unit population variance, then affine."""
    x = np.asarray(x)
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    n = x.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm affine shapes {gamma.shape}/{beta.shape} do not match width {n}"
        )
    wide = _wide(x)
    mean = wide.mean(axis=-1, keepdims=True)
    var = wide.var(axis=-1, keepdims=True)
    out = (wide - mean) / np.sqrt(var + eps) * _wide(gamma) + _wide(beta)
    return _narrow(out, x, gamma, beta)


def gelu(x: Array) -> Array:
    """GELU, tanh approximation."""
    x = np.asarray(x)
    wide = _wide(x)
    inner = math.sqrt(2.0 / math.pi) * (wide + 0.044715 * wide**3)
    return _narrow(0.5 * wide * (1.0 + np.tanh(inner)), x)


def depthwise_conv2d(x: Array, kernel: Array, bias: Optional[Array] = None) -> Array:
    """Per-channel 2-D correlation with zero 'same' padding.

    x is [h, w, c], kernel is [k, k, c] with odd k; output keeps [h, w, c].
    """
    x = np.asarray(x)
    kernel = np.asarray(kernel)
    if x.ndim != 3 or kernel.ndim != 3:
        raise ShapeError(f"depthwise_conv2d expects [h,w,c] and [k,k,c], got {x.shape} and {kernel.shape}")
    k = kernel.shape[0]
    if kernel.shape[1] != k or kernel.shape[2] != x.shape[2]:
        raise ShapeError(f"kernel shape {kernel.shape} does not match input {x.shape}")
    if k % 2 == 0:
        raise ConfigError(f"depthwise_conv2d requires odd kernel size, got {k}")
    h, w, c = x.shape
    pad = k // 2
    padded = np.zeros((h + 2 * pad, w + 2 * pad, c), dtype=np.float64)
    padded[pad:pad + h, pad:pad + w, :] = _wide(x)
    out = np.zeros((h, w, c), dtype=np.float64)
    for di in range(k):
        for dj in range(k):
            out += kernel[di, dj, :].astype(np.float64) * padded[di:di + h, dj:dj + w, :]
    _record_macs(k * k * h * w * c)
    if bias is not None:
        out = out + _wide(bias)
    return _narrow(out, x, kernel)


def adaptive_avg_pool(x: Array, out_h: int, out_w: int) -> Array:
    """Average-pool [h,w,c] to [out_h,out_w,c] over torch-style adaptive windows.

    Cell (i, j) averages rows [floor(i*h/out_h), ceil((i+1)*h/out_h)) and the
    matching column range; windows may overlap when extents do not divide.
    """
    x = np.asarray(x)
    if x.ndim != 3:
        raise ShapeError(f"adaptive_avg_pool expects [h,w,c], got {x.shape}")
    h, w, _ = x.shape
    if out_h <= 0 or out_w <= 0:
        raise ConfigError(f"adaptive_avg_pool output extents must be positive, got ({out_h}, {out_w})")
    if out_h > h or out_w > w:
        raise ConfigError(f"adaptive_avg_pool cannot upsample: ({out_h}, {out_w}) from ({h}, {w})")
    wide = _wide(x)
    out = np.empty((out_h, out_w, x.shape[2]), dtype=np.float64)
    for i in range(out_h):
        r0 = (i * h) // out_h
        r1 = -(-((i + 1) * h) // out_h)
        for j in range(out_w):
            c0 = (j * w) // out_w
            c1 = -(-((j + 1) * w) // out_w)
            out[i, j, :] = wide[r0:r1, c0:c1, :].mean(axis=(0, 1))
    return _narrow(out, x)
