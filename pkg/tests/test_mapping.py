from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuromesh.core_model import CapacityError
from neuromesh.events import SpikePacket
from neuromesh.mapping import (
    BALANCED_SPLIT,
    ONE_LAYER_PER_CORE,
    Mapping,
    assign_layers,
    check_capacity,
    generate_routing_tables,
    line_buffer_words,
)
from neuromesh.netmodel import LayerSpec, NetworkSpec, conv_network, dense_network
from neuromesh.noc import Port, build_topology, deliver


def _covers(shards, size):
    spans = sorted((s.lo, s.hi) for s in shards)
    assert spans[0][0] == 0 and spans[-1][1] == size
    assert all(a[1] == b[0] for a, b in zip(spans, spans[1:]))


def test_one_layer_per_core():
    m = assign_layers(dense_network([16, 16, 16, 16, 4]), build_topology(2, 2), ONE_LAYER_PER_CORE)
    assert [m.cores_of(i) for i in range(1, 5)] == [(0,), (1,), (2,), (3,)]


def test_trivial_mapping():
    m = assign_layers(dense_network([8, 4]), build_topology(1, 1))
    assert m.cores_of(1) == (0,)
    tables = generate_routing_tables(m, build_topology(1, 1))
    assert all(len(t) == 0 for t in tables.values())


def test_too_many_layers_for_one_per_core():
    with pytest.raises(CapacityError):
        assign_layers(dense_network([8] * 6), build_topology(2, 2), ONE_LAYER_PER_CORE)


def test_balanced_split_of_wide_layer():
    net = NetworkSpec("wide", (64,), (LayerSpec.dense(64, 1024),), (np.zeros((64, 1024)),))
    m = assign_layers(net, build_topology(2, 2), BALANCED_SPLIT)
    assert [s.size for s in m.layers[1]] == [256] * 4
    report = check_capacity(m, net)
    for core in range(4):
        assert report[core]["weights"] == 64 * 256 and report[core]["states"] == 256


def test_all_on_one_core_routes_locally():
    net = dense_network([8, 8, 8])
    topo = build_topology(1, 1)
    m = Mapping({1: assign_layers(net, topo, BALANCED_SPLIT).layers[1], 2: assign_layers(net, topo, BALANCED_SPLIT).layers[2]}, BALANCED_SPLIT)
    tables = generate_routing_tables(m, topo)
    for (in_port, _), outs in tables[0].entries.items():
        assert in_port is Port.LOCAL and outs == {Port.LOCAL}


def test_sixteen_core_mapping_delivers_every_adjacency():
    net = dense_network([64, 128, 128, 64, 10], seed=1)
    topo = build_topology(4, 4)
    m = assign_layers(net, topo, BALANCED_SPLIT)
    for i in range(1, net.n_layers + 1):
        _covers(m.layers[i], net.layer_size(i))
    tables = generate_routing_tables(m, topo)
    for label in range(1, net.n_layers):
        for src in m.cores_of(label):
            tr = deliver(topo, tables, SpikePacket(label, 0, None, 0), src)
            assert tr.destination_cores == set(m.cores_of(label + 1))


@given(st.lists(st.integers(1, 300), min_size=2, max_size=5), st.integers(1, 5), st.integers(1, 5))
def test_balanced_split_partitions_layers(sizes, w, h):
    net = dense_network(sizes)
    topo = build_topology(w, h)
    m = assign_layers(net, topo, BALANCED_SPLIT, capacity_words=10**7)
    for i in range(1, net.n_layers + 1):
        _covers(m.layers[i], net.layer_size(i))
        assert all(0 <= s.core < topo.n_cores for s in m.layers[i])


def test_balanced_split_overflow_raises():
    with pytest.raises(CapacityError):
        assign_layers(dense_network([135, 300, 300]), build_topology(1, 1), BALANCED_SPLIT)


def test_dense_int8_footprint():
    net = dense_network([256, 256], weight_scheme="int8")
    m = assign_layers(net, build_topology(1, 1))
    row = check_capacity(m, net)[0]
    assert row["weights"] == 65536 // 2 and row["states"] == 256


def test_depth_first_state_words_use_line_buffer_formula():
    net = conv_network((16, 16, 3), (8,), execution_style="depth_first")
    layer = net.layers[0]
    m = assign_layers(net, build_topology(1, 1))
    assert check_capacity(m, net)[0]["states"] == (layer.k - 1) * layer.w * layer.c_in + layer.c_out
    assert line_buffer_words(layer) == (layer.k - 1) * layer.w * layer.c_in + layer.c_out
    stateful = conv_network((16, 16, 3), (8,), execution_style="stateful")
    assert check_capacity(assign_layers(stateful, build_topology(1, 1)), stateful)[0]["states"] == 14 * 14 * 8


def test_empty_mapping_report():
    assert check_capacity(Mapping({}, ONE_LAYER_PER_CORE), dense_network([4, 4])) == {}


def test_routing_entries_count_against_capacity():
    net = dense_network([32, 32, 32, 4])
    topo = build_topology(2, 2)
    m = assign_layers(net, topo)
    tables = generate_routing_tables(m, topo)
    with_tables = check_capacity(m, net, tables)
    assert sum(r["routing"] for r in with_tables.values()) == sum(len(t) for t in tables.values()) > 0


def test_mapping_text_round_trip():
    net = dense_network([64, 100, 30, 10])
    m = assign_layers(net, build_topology(3, 3), BALANCED_SPLIT)
    again = Mapping.load(m.dump())
    assert again.layers == m.layers and again.policy == m.policy
