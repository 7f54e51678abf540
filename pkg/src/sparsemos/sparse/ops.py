"""Forward and backward passes of the sparse layers.

Features are ``(num_sites, channels)`` arrays. Every function is pure; the
backward passes take whatever the forward returned as its cache.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from sparsemos.sparse.kernel import KernelMap

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class ConvParams:
    weights: np.ndarray  # (num_offsets, c_in, c_out)
    bias: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        if self.weights.ndim != 3:
            raise ValueError(f"weights must be (K, C_in, C_out), got {self.weights.shape}")
        if self.bias is not None and self.bias.shape != (self.weights.shape[2],):
            raise ValueError(f"bias must have shape ({self.weights.shape[2]},), got {self.bias.shape}")


@dataclass
class LayerGrads:
    grad_weights: np.ndarray
    grad_bias: Optional[np.ndarray]
    grad_input: np.ndarray


def _check_conv(features: np.ndarray, kmap: KernelMap, params: ConvParams) -> None:
    k, c_in, _ = params.weights.shape
    if len(kmap.pairs) != k:
        raise ValueError(f"kernel map has {len(kmap.pairs)} offsets but weights have {k}")
    if features.ndim != 2 or features.shape[1] != c_in:
        raise ValueError(f"expected features with {c_in} channels, got shape {features.shape}")
    if features.shape[0] != kmap.num_in:
        raise ValueError(f"kernel map expects {kmap.num_in} input sites, got {features.shape[0]}")


def conv_forward(features: np.ndarray, kmap: KernelMap, params: ConvParams) -> np.ndarray:
    """``out[o] = bias + sum_k sum_{(i, o) in kmap[k]} W[k]^T in[i]``."""
    _check_conv(features, kmap, params)
    w = params.weights
    dtype = np.result_type(features.dtype, w.dtype)
    out = np.zeros((kmap.num_out, w.shape[2]), dtype=dtype)
    if params.bias is not None:
        out += params.bias
    for k, (ii, oo) in enumerate(kmap.pairs):
        if ii.shape[0] == 0:
            continue
        # output indices are unique within one offset, so fancy += is exact
        out[oo] += features[ii] @ w[k]
    return out


def conv_backward(
    grad_output: np.ndarray, features: np.ndarray, kmap: KernelMap, params: ConvParams
) -> LayerGrads:
    _check_conv(features, kmap, params)
    w = params.weights
    if grad_output.shape != (kmap.num_out, w.shape[2]):
        raise ValueError(f"grad_output shape {grad_output.shape} != {(kmap.num_out, w.shape[2])}")
    grad_w = np.zeros_like(w)
    grad_in = np.zeros(features.shape, dtype=np.result_type(features.dtype, grad_output.dtype))
    for k, (ii, oo) in enumerate(kmap.pairs):
        if ii.shape[0] == 0:
            continue
        g = grad_output[oo]
        grad_w[k] = features[ii].T @ g
        grad_in[ii] += g @ w[k].T
    grad_b = grad_output.sum(axis=0) if params.bias is not None else None
    return LayerGrads(grad_weights=grad_w, grad_bias=grad_b, grad_input=grad_in)


@dataclass
class NormState:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray


def batchnorm_forward(x: np.ndarray, state: NormState, train: bool, momentum: float = BN_MOMENTUM):
    """Per-channel normalization over active sites.

    Returns ``(y, cache)``. In train mode the running statistics in ``state``
    are updated in place.
    """
    if train:
        n = x.shape[0]
        if n == 0:
            raise FloatingPointError("batch norm in train mode needs at least one active site")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        unbiased = var * (n / (n - 1)) if n > 1 else var
        state.running_mean[...] = (1 - momentum) * state.running_mean + momentum * mean
        state.running_var[...] = (1 - momentum) * state.running_var + momentum * unbiased
    else:
        mean, var = state.running_mean, state.running_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    y = xhat * state.gamma + state.beta
    return y.astype(x.dtype, copy=False), (xhat, inv_std, train)


def batchnorm_backward(dy: np.ndarray, cache, state: NormState):
    """Returns ``(dx, dgamma, dbeta)``."""
    xhat, inv_std, train = cache
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * state.gamma
    if train:
        n = dy.shape[0]
        dx = (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    else:
        dx = dxhat * inv_std
    return dx.astype(dy.dtype, copy=False), dgamma, dbeta


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dy: np.ndarray, y: np.ndarray) -> np.ndarray:
    return dy * (y > 0)


def softmax_forward(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(dy: np.ndarray, s: np.ndarray) -> np.ndarray:
    return s * (dy - (dy * s).sum(axis=1, keepdims=True))
