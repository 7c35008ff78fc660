from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuromesh.netmodel import (
    BINARY,
    ConfigError,
    LayerSpec,
    NetworkSpec,
    NumericFault,
    QuantScheme,
    bf16_scalar,
    conv_network,
    default_benchmark_network,
    dense_network,
    deploy_weights,
    fire_mask,
    load_network,
    load_tensor,
    neuron_update,
    quantize_weights,
    save_tensor,
    threshold_fire,
)
from neuromesh.oracle import bf16_round


def test_int4_symmetric_extremes():
    codes, scale = quantize_weights(np.array([-1.0, 1.0]), QuantScheme("int4"))
    assert list(codes) == [-7, 7]
    assert scale == pytest.approx(1 / 7)


def test_bf16_one_is_exact():
    assert bf16_scalar(1.0) == 1.0


@pytest.mark.parametrize("kind", ["int4", "int8"])
def test_integer_reconstruction_error_within_half_step(kind):
    w = np.random.default_rng(0).standard_normal((64, 64))
    codes, scale = quantize_weights(w, QuantScheme(kind))
    assert np.all(np.abs(codes * scale - w) <= scale / 2 + 1e-12)


def test_quantize_rejects_non_finite():
    with pytest.raises(NumericFault):
        quantize_weights(np.array([np.nan]), QuantScheme())


def test_neuron_update_examples():
    assert neuron_update(0.0, 0.5, None) == 0.5
    assert neuron_update(0.25, 0.5, 0.5) == 0.5


def test_neuron_update_matches_bf16_oracle():
    rng = np.random.default_rng(0)
    s, w, v = (bf16_round(rng.standard_normal(10_000) * 4) for _ in range(3))
    for i in range(10_000):
        ref = bf16_round(s[i] + bf16_round(w[i] * v[i]))
        assert neuron_update(s[i], w[i], v[i]) == ref
        assert neuron_update(s[i], w[i], None) == bf16_round(s[i] + w[i])


def test_neuron_update_overflow():
    with pytest.raises(NumericFault):
        neuron_update(3e38, 3e38, None)


def test_threshold_fire_examples():
    b = LayerSpec.dense(4, 4, spike_mode=BINARY, threshold=1.0)
    assert threshold_fire(0.9, b) == (0.9, None)
    assert threshold_fire(1.0, b) == (0.0, 1.0)
    g = LayerSpec.dense(4, 4)
    assert threshold_fire(-0.3, g) == (0.0, None)
    assert threshold_fire(0.5, g) == (0.0, 0.5)


def test_fire_mask_count_matches_super_threshold_states():
    spec = LayerSpec.dense(4, 100, spike_mode=BINARY, threshold=1.0)
    states = np.random.default_rng(3).uniform(0, 1.11, 100)
    mask = fire_mask(states, spec)
    assert mask.sum() == np.count_nonzero(states >= 1.0)
    assert mask.sum() == sum(threshold_fire(s, spec)[1] is not None for s in states)


@pytest.mark.parametrize(
    "kw",
    [
        dict(kind="pool"),
        dict(kind="dense", n_in=0, n_out=3),
        dict(kind="dense", n_in=2, n_out=2, spike_mode=BINARY, threshold=0.0),
        dict(kind="conv", h=2, w=2, c_in=1, c_out=1, k=3),
        dict(kind="conv", h=8, w=8, c_in=1, c_out=1, k=3, stride=3),
    ],
)
def test_layer_validation(kw):
    with pytest.raises(ConfigError):
        LayerSpec(**kw)


def test_weight_counts():
    assert LayerSpec.dense(7, 5).weight_count == 35
    assert LayerSpec.conv(8, 8, 3, 4, 3).weight_count == 3 * 3 * 3 * 4


def test_network_shape_mismatch():
    with pytest.raises(ConfigError):
        NetworkSpec("x", (10,), (LayerSpec.dense(10, 5), LayerSpec.dense(6, 2)))


def test_default_benchmark_shape():
    net = default_benchmark_network()
    assert [l.n_out for l in net.layers] == [256, 256, 256, 10]
    assert net.input_size == 256


def test_overrides():
    net = dense_network([8, 8, 4]).with_overrides(spike_mode=BINARY, weight_scheme="int4")
    assert net.input_mode == BINARY
    assert all(l.spike_mode == BINARY and l.threshold > 0 and l.weight_scheme.bits == 4 for l in net.layers)


@pytest.mark.parametrize("scheme", ["bf16", "int8", "int4"])
def test_deployed_weights_are_bf16(scheme):
    w = deploy_weights(np.random.default_rng(0).standard_normal((16, 16)), QuantScheme(scheme))
    assert np.array_equal(bf16_round(w), w)


@given(st.sampled_from(["float32", "bfloat16", "int8", "float64"]), st.lists(st.integers(1, 5), min_size=1, max_size=4))
def test_tensor_round_trip(tmp_path_factory, dtype, dims):
    rng = np.random.default_rng(len(dims))
    a = rng.standard_normal(dims)
    if dtype == "int8":
        a = np.clip(np.rint(a * 20), -128, 127)
    elif dtype == "bfloat16":
        a = bf16_round(a)
    elif dtype == "float32":
        a = a.astype(np.float32).astype(np.float64)
    p = tmp_path_factory.mktemp("t") / "a.nmt"
    save_tensor(p, a, dtype)
    b = load_tensor(p)
    assert b.shape == a.shape
    assert np.array_equal(b.astype(np.float64), a)
    assert p.read_bytes()[:4] == b"NMT1"


def test_network_yaml_matches_builtin_default(tmp_path):
    from pathlib import Path

    root = Path(__file__).resolve().parents[1]
    net = load_network(root / "configs" / "benchmark_net.yaml")
    ref = default_benchmark_network(0)
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, ref.weights))


def test_network_yaml_with_weights_file(tmp_path):
    w = np.arange(12, dtype=np.float64).reshape(4, 3) / 16
    save_tensor(tmp_path / "w.nmt", w, "float32")
    (tmp_path / "net.yaml").write_text(
        "network:\n  input: {size: 4}\n  layers:\n    - {kind: dense, n_out: 3, weights_file: w.nmt}\n"
    )
    net = load_network(tmp_path / "net.yaml")
    assert np.array_equal(net.weights[0], w)


def test_network_yaml_errors(tmp_path):
    (tmp_path / "bad.yaml").write_text("network:\n  layers: []\n")
    with pytest.raises(ConfigError):
        load_network(tmp_path / "bad.yaml")
    with pytest.raises(ConfigError):
        load_network(tmp_path / "missing.yaml")


def test_conv_network_shapes():
    net = conv_network((16, 16, 2), (4, 8), stride=1)
    assert net.layers[1].input_shape == (14, 14, 4)
    assert net.layer_shape(2) == (12, 12, 8)
