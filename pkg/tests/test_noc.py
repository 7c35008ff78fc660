from __future__ import annotations

import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuromesh.events import SpikePacket
from neuromesh.noc import (
    Port,
    RoutingFault,
    RoutingTable,
    build_topology,
    deliver,
    dump_tables,
    install_multicast,
    load_tables,
    route_step,
    xy_path,
)


def test_single_router_has_only_local_port():
    t = build_topology(1, 1)
    assert t.n_cores == 1
    assert t.ports(0) == (Port.LOCAL,)


def test_four_by_four_has_sixteen_routers():
    assert build_topology(4, 4).n_cores == 16


@pytest.mark.parametrize("w,h", [(3, 2), (1, 1), (4, 4), (6, 5)])
def test_link_count_formula(w, h):
    t = build_topology(w, h)
    # directed links: one per direction of each physical channel
    assert len(t.links()) == 2 * (w * (h - 1) + h * (w - 1))
    assert len({frozenset(l) for l in t.links()}) == w * (h - 1) + h * (w - 1)
    directed = sum(len([p for p in t.ports(c) if p is not Port.LOCAL]) for c in range(t.n_cores))
    assert directed == 2 * (w * (h - 1) + h * (w - 1))


def test_edge_routers_have_no_boundary_port():
    t = build_topology(3, 3)
    corner = t.core_at(0, 0)
    assert Port.WEST not in t.ports(corner) and Port.SOUTH not in t.ports(corner)


def test_route_step_lookup_and_multicast():
    tab = RoutingTable()
    tab.add(Port.LOCAL, 3, [Port.NORTH])
    tab.add(Port.WEST, 2, [Port.EAST, Port.LOCAL])
    assert route_step(tab, Port.LOCAL, SpikePacket(3, 0, None, 0)) == {Port.NORTH}
    assert route_step(tab, Port.WEST, SpikePacket(2, 0, None, 0)) == {Port.EAST, Port.LOCAL}
    with pytest.raises(RoutingFault):
        route_step(tab, Port.LOCAL, SpikePacket(9, 0, None, 0))


def test_bounce_back_entry_rejected():
    with pytest.raises(ValueError):
        RoutingTable().add(Port.WEST, 1, [Port.WEST])


def test_self_delivery():
    t = build_topology(2, 2)
    tables = {}
    install_multicast(t, tables, 1, 0, [0])
    tr = deliver(t, tables, SpikePacket(1, 0, None, 0), 0)
    assert tr.link_traversals == 0 and tr.destination_cores == {0}


def test_unicast_hops_equal_manhattan():
    t = build_topology(4, 4)
    rng = np.random.default_rng(0)
    for _ in range(30):
        s, d = (int(v) for v in rng.integers(0, 16, 2))
        tables = {}
        install_multicast(t, tables, 1, s, [d])
        tr = deliver(t, tables, SpikePacket(1, 0, None, 0), s)
        assert tr.link_traversals == t.manhattan(s, d) == len(xy_path(t, s, d))
        assert tr.destinations == {d: t.manhattan(s, d)}
        assert tr.link_traversals == sum(len(r.out_ports) for r in tr.records)


def test_multicast_branches_at_first_destination_column():
    t = build_topology(4, 1)
    tables = {}
    install_multicast(t, tables, 1, 0, [2, 3])
    tr = deliver(t, tables, SpikePacket(1, 0, None, 0), 0)
    assert tr.destination_cores == {2, 3}
    assert tables[2].lookup(Port.WEST, 1) == {Port.EAST, Port.LOCAL}
    assert tr.link_traversals == 3 < t.manhattan(0, 2) + t.manhattan(0, 3)


def test_missing_table_is_a_fault():
    t = build_topology(2, 1)
    tables = {0: RoutingTable()}
    tables[0].add(Port.LOCAL, 1, [Port.EAST])
    with pytest.raises(RoutingFault):
        deliver(t, tables, SpikePacket(1, 0, None, 0), 0)


@given(st.integers(1, 6), st.integers(1, 6), st.data())
def test_multicast_properties(w, h, data):
    t = build_topology(w, h)
    src = data.draw(st.integers(0, t.n_cores - 1))
    dests = data.draw(st.sets(st.integers(0, t.n_cores - 1), min_size=1, max_size=t.n_cores))
    tables = {}
    install_multicast(t, tables, 5, src, dests)
    tr = deliver(t, tables, SpikePacket(5, 0, None, 0), src)
    assert tr.destination_cores == dests
    assert tr.link_traversals <= sum(t.manhattan(src, d) for d in dests)
    for d, hops in tr.destinations.items():
        assert hops == t.manhattan(src, d)


def test_table_text_round_trip():
    t = build_topology(3, 3)
    tables = {}
    for label, (s, ds) in enumerate([(0, [4, 8]), (2, [6]), (4, [4, 0, 2])], 1):
        install_multicast(t, tables, label, s, ds)
    text = dump_tables(t, tables)
    again = load_tables(t, text)
    assert dump_tables(t, again) == text
    for c in tables:
        assert again[c].entries == tables[c].entries


def test_table_text_rejects_garbage():
    with pytest.raises(ValueError):
        load_tables(build_topology(2, 2), "0 0 local 1 -> up\n")
