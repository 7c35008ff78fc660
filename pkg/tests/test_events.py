from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuromesh.events import (
    CausalityError,
    EventQueue,
    PacketError,
    SpikePacket,
    make_spike,
    spikes_from_activations,
)


def test_single_event_queue():
    q = EventQueue()
    ev = q.schedule(5, "arrival", "x")
    assert len(q) == 1
    assert q.next_event() is ev


def test_same_time_dequeued_in_sequence_order():
    q = EventQueue()
    a = q.schedule(5, "arrival", "a")
    b = q.schedule(5, "arrival", "b")
    assert [q.next_event(), q.next_event()] == [a, b]


def test_empty_queue_returns_none():
    assert EventQueue().next_event() is None


def test_min_extraction():
    q = EventQueue()
    q.schedule(3, "arrival")
    q.schedule(1, "arrival")
    assert q.next_event().time == 1


@given(st.lists(st.integers(0, 50), min_size=1, max_size=1000))
def test_dequeue_matches_sort_oracle(times):
    q = EventQueue()
    evs = [q.schedule(t, "arrival", i) for i, t in enumerate(times)]
    out = list(q.drain())
    assert out == sorted(evs, key=lambda e: (e.time, e.sequence))


def test_interleaved_never_goes_back_in_time():
    rng = np.random.default_rng(0)
    q = EventQueue()
    last = 0
    for _ in range(10_000):
        if rng.random() < 0.6 or not q:
            q.schedule(q.now + int(rng.integers(0, 20)), "arrival")
        else:
            ev = q.next_event()
            assert ev.time >= last
            last = ev.time
    with pytest.raises(CausalityError):
        q.schedule(q.now - 1, "arrival")


def test_make_spike_binary():
    p = make_spike(2, 7, None, 0, 8, graded=False)
    assert p.binary and p.magnitude == 1.0


def test_make_spike_mode_mismatch():
    with pytest.raises(PacketError):
        make_spike(2, 7, 0.5, 0, 8, graded=False)
    with pytest.raises(PacketError):
        make_spike(2, 7, None, 0, 8, graded=True)


def test_make_spike_index_range():
    with pytest.raises(PacketError):
        make_spike(1, 8, None, 0, 8, graded=False)


def test_activation_vector_splits_into_nonzero_packets():
    pkts = spikes_from_activations(0, [0, 0.3, 0, -0.7])
    assert [p.neuron_index for p in pkts] == [1, 3]
    assert pkts[0].value == pytest.approx(0.3, rel=2**-8)


def test_packet_cannot_move_back_in_time():
    p = SpikePacket(1, 0, None, 10)
    assert p.at(12).timestamp == 12
    with pytest.raises(CausalityError):
        p.at(9)
