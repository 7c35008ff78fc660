"""Slow reference implementations for equivalence tests.

Rounding here is done by scaling to an integer grid (frexp / rint / ldexp),
not by the float32 bit manipulation used in the kernels, so agreement
between the two is a real cross-check.

Accumulation order is part of the contract: dense sums run over the input
index ascending, conv sums over (ky, kx, ci) ascending, one out channel at
a time. The simulator reproduces exactly this order.
"""

from __future__ import annotations

import numpy as np

from .netmodel import BINARY, LayerSpec, NetworkSpec, NumericFault

_BF16_MAX_EXP = 128  # values at or above 2**128 after rounding are inf


def bf16_round(x) -> np.ndarray:
    """Round-to-nearest-even onto the bf16 grid (8 significant bits, 8-bit exponent)."""
    a = np.asarray(x, dtype=np.float64)
    out = a.copy()
    finite = np.isfinite(a) & (a != 0)
    if np.any(finite):
        v = a[finite]
        _, e = np.frexp(v)  # v = m * 2**e, 0.5 <= |m| < 1
        q = np.maximum(e - 8, -133)  # subnormal quantum is 2**-133
        r = np.ldexp(np.rint(np.ldexp(v, -q)), q)
        r = np.where(np.abs(r) >= 2.0**_BF16_MAX_EXP, np.copysign(np.inf, v), r)
        out[finite] = r
    return out


def _check(x: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericFault(f"non-finite value in {what}")
    return x


def dense_forward(weights: np.ndarray, inputs: np.ndarray, binary_input: bool = False) -> np.ndarray:
    """y[j] = sum_i x[i] * w[i, j], bf16 after every multiply and add, i ascending."""
    w = np.asarray(weights, dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64).ravel()
    if w.ndim != 2 or w.shape[0] != x.size:
        raise ValueError(f"weights {w.shape} do not match input of size {x.size}")
    acc = np.zeros(w.shape[1], dtype=np.float64)
    for i in range(x.size):
        xi = x[i]
        term = w[i] * xi if not binary_input else w[i] * (1.0 if xi else 0.0)
        acc = bf16_round(acc + bf16_round(term))
    return _check(acc, "dense_forward")


def conv_forward(inputs: np.ndarray, kernel: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid convolution of an (h, w, c_in) map with a (k, k, c_in, c_out) kernel."""
    x = np.asarray(inputs, dtype=np.float64)
    kern = np.asarray(kernel, dtype=np.float64)
    if x.ndim != 3 or kern.ndim != 4 or kern.shape[2] != x.shape[2] or kern.shape[0] != kern.shape[1]:
        raise ValueError(f"input {x.shape} and kernel {kern.shape} do not compose")
    h, w, cin = x.shape
    k, cout = kern.shape[0], kern.shape[3]
    if k > h or k > w:
        raise ValueError("kernel larger than input")
    hout, wout = (h - k) // stride + 1, (w - k) // stride + 1
    out = np.zeros((hout, wout, cout), dtype=np.float64)
    for co in range(cout):
        acc = np.zeros((hout, wout), dtype=np.float64)
        for ky in range(k):
            for kx in range(k):
                for ci in range(cin):
                    patch = x[ky : ky + stride * (hout - 1) + 1 : stride, kx : kx + stride * (wout - 1) + 1 : stride, ci]
                    acc = bf16_round(acc + bf16_round(kern[ky, kx, ci, co] * patch))
        out[:, :, co] = acc
    return _check(out, "conv_forward")


def activate(pre: np.ndarray, layer: LayerSpec) -> np.ndarray:
    """Post-threshold activation: 1.0 for a binary spike, rectified value for graded."""
    if layer.spike_mode == BINARY:
        return (pre >= layer.threshold).astype(np.float64)
    return np.where(pre > 0, pre, 0.0)


def network_forward(net: NetworkSpec, inputs: np.ndarray) -> list[dict[str, np.ndarray]]:
    """Per layer: ``pre`` (integrated states) and ``out`` (emitted activations)."""
    x = np.asarray(inputs, dtype=np.float64).reshape(net.input_shape)
    if net.input_mode == BINARY:
        x = (x != 0).astype(np.float64)
    else:
        x = bf16_round(x)
    result = []
    for layer, w in zip(net.layers, net.deployed):
        w = np.asarray(w, dtype=np.float64)
        if layer.kind == "dense":
            pre = dense_forward(w, x.ravel())
        else:
            pre = conv_forward(x.reshape(layer.input_shape), w, layer.stride)
        out = activate(pre, layer)
        result.append({"pre": pre, "out": out})
        x = out
    return result
