"""Event-driven fully connected processing, with and without spike grouping."""

from __future__ import annotations

from math import ceil
from typing import Sequence

import numpy as np

from .. import kernels
from ..core_model import (
    CoreState,
    CoreVariant,
    CostCounters,
    TaskCost,
    event_control_cost,
    fire_control_cost,
    hazard_stalls,
    weight_words,
)
from ..events import SpikePacket
from ..netmodel import LayerSpec, NumericFault, fire_mask

DEFAULT_GROUP = 4


class MappingFault(RuntimeError):
    """A packet reached a core that does not hold its destination layer."""


class GroupBuffer:
    """Pending packets for one (core, destination layer), released in groups of ``capacity``."""

    def __init__(self, layer: int, capacity: int = DEFAULT_GROUP):
        if capacity < 1:
            raise ValueError("group capacity must be >= 1")
        self.layer = layer
        self.capacity = capacity
        self.pending: list[SpikePacket] = []

    def __len__(self) -> int:
        return len(self.pending)

    def add(self, pkt: SpikePacket, dest_layer: int | None = None) -> list[SpikePacket] | None:
        """Queue a packet; returns a full group when capacity is reached."""
        if dest_layer is not None and dest_layer != self.layer:
            raise ValueError(f"group for layer {self.layer} cannot hold a packet for layer {dest_layer}")
        self.pending.append(pkt)
        if len(self.pending) >= self.capacity:
            return self.flush()
        return None

    def flush(self) -> list[SpikePacket]:
        out, self.pending = self.pending, []
        return out


def dense_group_cost(variant: CoreVariant, n_local: int, group: int, graded: bool, weight_bits: int) -> TaskCost:
    """State vector read/written once per group; one weight row per packet."""
    c = event_control_cost(variant, n_local, group, graded)
    c.account("dmem_read_word", n_local + group * weight_words(n_local, weight_bits))
    c.account("dmem_write_word", n_local)
    return TaskCost(c, hazard_stalls(variant, 1 if n_local else 0))


def dense_fire_cost(variant: CoreVariant, n_local: int, emitted: int) -> TaskCost:
    c = fire_control_cost(variant, n_local, emitted)
    c.account("dmem_read_word", n_local)
    c.account("dmem_write_word", n_local)  # reset for the next inference
    return TaskCost(c, 0)


def _shard_for(core: CoreState, pkt: SpikePacket):
    shard = core.shards.get(pkt.label + 1)
    if shard is None:
        raise MappingFault(f"core {core.core_id} holds no shard of layer {pkt.label + 1}")
    if not 0 <= pkt.neuron_index < shard.weights.shape[0]:
        raise MappingFault(
            f"core {core.core_id}: no weight row {pkt.neuron_index} for layer {pkt.label + 1}"
        )
    return shard


def process_dense_group(core: CoreState, spec: LayerSpec, pkts: Sequence[SpikePacket]) -> TaskCost:
    """Apply up to G same-layer packets; bit-identical to applying them one by one.

    Charges the core and returns the task's cost. Nothing is emitted here:
    emission happens in the threshold phase.
    """
    if not pkts:
        return TaskCost()
    labels = {p.label for p in pkts}
    if len(labels) != 1:
        raise ValueError(f"group mixes destination layers {sorted(l + 1 for l in labels)}")
    binary = {p.binary for p in pkts}
    if len(binary) != 1:
        raise ValueError("group mixes binary and graded packets")
    shard = _shard_for(core, pkts[0])
    is_binary = binary.pop()
    if len(pkts) == 1:
        bad = kernels.accumulate_row(shard.states, shard.weights[pkts[0].neuron_index], pkts[0].magnitude, is_binary)
    else:
        rows = np.ascontiguousarray(shard.weights[[p.neuron_index for p in pkts]])
        values = np.array([p.magnitude for p in pkts], dtype=np.float64)
        bad = kernels.accumulate_group(shard.states, rows, values, is_binary)
    if bad:
        raise NumericFault(f"core {core.core_id}: neuron state overflow in layer {pkts[0].label + 1}")
    cost = dense_group_cost(core.variant, shard.n_local, len(pkts), not is_binary, spec.weight_scheme.bits)
    core.charge(cost.counters)
    return cost


def process_dense_event(core: CoreState, spec: LayerSpec, pkt: SpikePacket) -> TaskCost:
    return process_dense_group(core, spec, [pkt])


def dense_fire(core: CoreState, spec: LayerSpec, layer: int) -> tuple[np.ndarray, np.ndarray, TaskCost]:
    """Threshold the shard; returns (pre-fire states, local indices that fire, cost).

    States are reset to zero afterwards.
    """
    shard = core.shards[layer]
    pre = shard.states.copy()
    fired = np.flatnonzero(fire_mask(pre, spec))
    shard.states[:] = 0
    cost = dense_fire_cost(core.variant, shard.n_local, int(fired.size))
    core.charge(cost.counters)
    return pre, fired, cost


def closed_form_dense_reads(n_local: int, n_events: int, group: int, weight_bits: int) -> int:
    """dmem words read while integrating ``n_events`` packets into one shard (fire phase excluded)."""
    full, rest = divmod(n_events, group)
    groups = full + (1 if rest else 0)
    return groups * n_local + n_events * weight_words(n_local, weight_bits)
