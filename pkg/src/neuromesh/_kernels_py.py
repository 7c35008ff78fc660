"""Pure numpy versions of the compiled kernels (same signatures, same bits)."""

from __future__ import annotations

import numpy as np

_EXP_MASK = np.uint32(0x7F800000)
_MANT_MASK = np.uint32(0x007FFFFF)


def round_bf16(x) -> np.ndarray:
    """Round to nearest-even bf16; returns float32 holding bf16 values."""
    with np.errstate(over="ignore"):
        f = np.asarray(x, dtype=np.float64).astype(np.float32)
        bits = f.view(np.uint32)
        nan = ((bits & _EXP_MASK) == _EXP_MASK) & ((bits & _MANT_MASK) != 0)
        rounded = (bits + np.uint32(0x7FFF) + ((bits >> np.uint32(16)) & np.uint32(1))) & np.uint32(
            0xFFFF0000
        )
    rounded = np.where(nan, bits, rounded).astype(np.uint32)
    return rounded.view(np.float32).reshape(np.shape(x))


def _bad(a: np.ndarray) -> bool:
    return bool(not np.all(np.isfinite(a)))


def accumulate_row(states: np.ndarray, weights: np.ndarray, value: float, binary: bool) -> bool:
    if binary:
        term = weights.astype(np.float64)
    else:
        term = round_bf16(weights.astype(np.float64) * value).astype(np.float64)
    states[:] = round_bf16(states.astype(np.float64) + term)
    return _bad(states)


def accumulate_group(states: np.ndarray, rows: np.ndarray, values: np.ndarray, binary: bool) -> bool:
    # per-neuron order is the row order, so sequential rows are equivalent
    bad = False
    for e in range(rows.shape[0]):
        bad |= accumulate_row(states, rows[e], float(values[e]), binary)
    return bad


def conv_pixel(window: np.ndarray, kernel: np.ndarray, out: np.ndarray) -> bool:
    k, _, cin, cout = kernel.shape
    s = np.zeros(cout, dtype=np.float32)
    for ky in range(k):
        for kx in range(k):
            for ci in range(cin):
                x = float(window[ky, kx, ci])
                if x != 0.0:
                    term = round_bf16(kernel[ky, kx, ci].astype(np.float64) * x)
                    s = round_bf16(s.astype(np.float64) + term.astype(np.float64))
    out[:] = s
    return _bad(s)


def scatter_conv_event(
    states: np.ndarray,
    kernel: np.ndarray,
    y: int,
    x: int,
    ci: int,
    value: float,
    stride: int,
    binary: bool,
) -> tuple[int, bool]:
    k = kernel.shape[0]
    hout, wout = states.shape[0], states.shape[1]
    touched = 0
    bad = False
    for ky in range(k):
        oy = y - ky
        if oy < 0 or oy % stride:
            continue
        oy //= stride
        if oy >= hout:
            continue
        for kx in range(k):
            ox = x - kx
            if ox < 0 or ox % stride:
                continue
            ox //= stride
            if ox >= wout:
                continue
            touched += 1
            w = kernel[ky, kx, ci].astype(np.float64)
            term = w if binary else round_bf16(w * value).astype(np.float64)
            states[oy, ox] = round_bf16(states[oy, ox].astype(np.float64) + term)
            bad |= _bad(states[oy, ox])
    return touched, bad
