from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from neuromesh import kernels
from neuromesh.oracle import bf16_round, conv_forward, dense_forward

finite = st.floats(-1e30, 1e30, allow_nan=False, width=64)


def test_fallback_always_available():
    assert "python" in kernels.BACKENDS
    assert kernels.BACKEND in kernels.BACKENDS


@given(arrays(np.float64, st.integers(1, 64), elements=finite))
def test_round_bf16_matches_oracle_on_all_backends(x):
    ref = bf16_round(x)
    for mod in kernels.BACKENDS.values():
        assert np.array_equal(mod.round_bf16(x).astype(np.float64), ref)


def test_round_bf16_ties_to_even():
    # 1 + 2**-8 sits halfway between 1 and 1 + 2**-7
    x = np.array([1 + 2**-8, 1 + 3 * 2**-8, -(1 + 2**-8)])
    for mod in kernels.BACKENDS.values():
        assert list(mod.round_bf16(x)) == [1.0, 1 + 2**-6, -1.0]


@given(st.integers(1, 40), st.integers(1, 8), st.booleans(), st.integers(0, 2**31))
def test_accumulate_group_matches_dense_oracle(n, g, binary, seed):
    rng = np.random.default_rng(seed)
    rows = kernels.round_bf16(rng.standard_normal((g, n)))
    vals = bf16_round(rng.random(g) + 0.01)
    ref = dense_forward(rows.astype(np.float64), np.ones(g) if binary else vals, binary_input=binary)
    for mod in kernels.BACKENDS.values():
        grouped = np.zeros(n, np.float32)
        assert not mod.accumulate_group(grouped, rows, vals, binary)
        single = np.zeros(n, np.float32)
        for e in range(g):
            mod.accumulate_row(single, rows[e], vals[e], binary)
        assert np.array_equal(grouped, ref)
        assert np.array_equal(single, grouped)


def test_accumulate_flags_overflow(backend):
    s = np.full(4, 3e38, np.float32)
    assert kernels.accumulate_row(s, np.full(4, 3e38, np.float32), 1.0, True)


@given(st.integers(1, 3), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31))
def test_conv_pixel_matches_conv_oracle(k, cin, cout, seed):
    rng = np.random.default_rng(seed)
    win = bf16_round(rng.standard_normal((k, k, cin)) * (rng.random((k, k, cin)) < 0.6)).astype(np.float32)
    ker = kernels.round_bf16(rng.standard_normal((k, k, cin, cout)))
    ref = conv_forward(win.astype(np.float64), ker.astype(np.float64))[0, 0]
    for mod in kernels.BACKENDS.values():
        out = np.zeros(cout, np.float32)
        assert not mod.conv_pixel(win, ker, out)
        assert np.array_equal(out, ref)


@given(st.integers(0, 2**31), st.sampled_from([1, 2]), st.booleans())
def test_scatter_matches_conv_oracle(seed, stride, binary):
    rng = np.random.default_rng(seed)
    h, w, cin, cout, k = 7, 6, 2, 3, 3
    x = bf16_round(rng.random((h, w, cin)) * (rng.random((h, w, cin)) < 0.3))
    if binary:
        x = (x != 0).astype(np.float64)
    ker = kernels.round_bf16(rng.standard_normal((k, k, cin, cout)))
    ref = conv_forward(x, ker.astype(np.float64), stride)
    for mod in kernels.BACKENDS.values():
        states = np.zeros(ref.shape, np.float32)
        for y, xx, c in zip(*np.nonzero(x)):
            mod.scatter_conv_event(states, ker, int(y), int(xx), int(c), float(x[y, xx, c]), stride, binary)
        # per-output accumulation order is raster order of inputs, i.e. (ky, kx, ci) ascending
        assert np.array_equal(states, ref)


def test_scatter_touch_count(backend):
    states = np.zeros((6, 6, 1), np.float32)
    ker = np.ones((3, 3, 1, 1), np.float32)
    touched, _ = kernels.scatter_conv_event(states, ker, 4, 4, 0, 1.0, 1, True)
    assert touched == 9
    touched, _ = kernels.scatter_conv_event(states, ker, 0, 0, 0, 1.0, 1, True)
    assert touched == 1
