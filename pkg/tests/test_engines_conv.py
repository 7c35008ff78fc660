from __future__ import annotations

import numpy as np
import pytest

from neuromesh.core_model import CoreVariant
from neuromesh.engines.conv import (
    LineBufferState,
    PixelEvent,
    RasterOrderError,
    depth_first_conv_event,
    finish_frame,
    stateful_conv_event,
    stateful_peak_words,
)
from neuromesh.netmodel import LayerSpec, conv_network
from neuromesh.oracle import bf16_round, conv_forward, network_forward
from neuromesh.simulator import simulate

V3 = CoreVariant.named("V3")


def _events(x):
    return [PixelEvent(int(y), int(xx), int(c), float(x[y, xx, c])) for y, xx, c in zip(*np.nonzero(x))]


def _run_depth_first(spec, kernel, x):
    st = LineBufferState(spec, kernel)
    out = np.zeros(spec.output_shape)
    first = {}
    for ev in _events(x):
        res = depth_first_conv_event(st, spec, ev, V3)
        for e in res.emitted:
            out[e.y, e.x, e.c] = e.value
            first.setdefault((e.y, e.x), (ev.y, ev.x))
    for e in finish_frame(st, V3).emitted:
        out[e.y, e.x, e.c] = e.value
    return out, first, st


def test_pointwise_conv_emits_immediately(backend):
    spec = LayerSpec.conv(4, 4, 1, 2, k=1)
    kernel = np.ones((1, 1, 1, 2), np.float32)
    st = LineBufferState(spec, kernel)
    res = depth_first_conv_event(st, spec, PixelEvent(1, 2, 0, 0.5), V3)
    assert {(e.y, e.x) for e in res.emitted} == {(1, 2)}


def test_first_output_on_pixel_two_two(backend):
    spec = LayerSpec.conv(8, 8, 1, 1, k=3)
    kernel = np.ones((3, 3, 1, 1), np.float32)
    st = LineBufferState(spec, kernel)
    x = np.ones((8, 8, 1)) / 4
    for ev in _events(x):
        res = depth_first_conv_event(st, spec, ev, V3)
        if res.emitted:
            assert (ev.y, ev.x) == (2, 2)
            assert (res.emitted[0].y, res.emitted[0].x) == (0, 0)
            break


@pytest.mark.parametrize("stride", [1, 2])
def test_depth_first_layer_matches_oracle(backend, stride):
    rng = np.random.default_rng(stride)
    spec = LayerSpec.conv(11, 9, 3, 4, k=3, stride=stride)
    kernel = bf16_round(rng.standard_normal((3, 3, 3, 4))).astype(np.float32)
    x = bf16_round(rng.random((11, 9, 3)) * (rng.random((11, 9, 3)) < 0.3))
    out, _, st = _run_depth_first(spec, kernel, x)
    ref = np.maximum(conv_forward(x, kernel, stride), 0)
    assert np.array_equal(out, ref)
    assert st.peak_words <= st.bound_words


def test_raster_order_enforced():
    spec = LayerSpec.conv(4, 4, 1, 1, k=3)
    st = LineBufferState(spec, np.ones((3, 3, 1, 1), np.float32))
    depth_first_conv_event(st, spec, PixelEvent(1, 1, 0, 1.0), V3)
    with pytest.raises(RasterOrderError):
        depth_first_conv_event(st, spec, PixelEvent(0, 3, 0, 1.0), V3)
    with pytest.raises(RasterOrderError):
        depth_first_conv_event(st, spec, PixelEvent(9, 0, 0, 1.0), V3)


def test_stateful_matches_oracle(backend):
    rng = np.random.default_rng(5)
    spec = LayerSpec.conv(8, 8, 2, 3, k=3)
    kernel = bf16_round(rng.standard_normal((3, 3, 2, 3))).astype(np.float32)
    x = bf16_round(rng.random((8, 8, 2)) * (rng.random((8, 8, 2)) < 0.4))
    states = np.zeros(spec.output_shape, np.float32)
    ops = 0
    for ev in _events(x):
        ops += stateful_conv_event(states, kernel, spec, ev, V3).synaptic_ops
    assert np.array_equal(states, conv_forward(x, kernel))
    assert ops > 0 and stateful_peak_words(spec) == 6 * 6 * 3


def test_two_layer_engine_chain_matches_oracle(backend):
    rng = np.random.default_rng(9)
    net = conv_network((16, 16, 3), (4, 6), seed=2, execution_style="depth_first")
    x = bf16_round(rng.random((16, 16, 3)) * (rng.random((16, 16, 3)) < 0.3))
    ref = network_forward(net, x)
    r = simulate(net, x, "V3")
    for i in (1, 2):
        assert np.array_equal(r.out[i], ref[i - 1]["out"])


@pytest.mark.parametrize("spikes", ["binary", "graded"])
@pytest.mark.parametrize("style", ["depth_first", "stateful"])
def test_four_layer_cnn_matches_oracle(spikes, style):
    rng = np.random.default_rng(4)
    net = conv_network((32, 32, 2), (8, 8, 16, 16), spike_mode=spikes, threshold=0.5, execution_style=style)
    x = (rng.random((32, 32, 2)) < 0.15).astype(float)
    if spikes == "graded":
        x *= rng.random((32, 32, 2))
    ref = network_forward(net, x)
    r = simulate(net, x, "V3")
    for i in range(1, 5):
        assert np.array_equal(r.pre[i][r.pre[i] != 0], ref[i - 1]["pre"][r.pre[i] != 0])
        assert np.array_equal(r.out[i], ref[i - 1]["out"])
    if style == "depth_first" and spikes == "binary":
        assert r.stateful_activation_words >= 50 * r.activation_peak_words
