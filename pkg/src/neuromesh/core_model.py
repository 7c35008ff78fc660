"""One processing core: variant, memories and per-op-class cost counters.

Counting rules (per event-group of ``g`` packets updating ``n`` neurons,
``V = ceil(n / npe_count)`` vector steps, ``k`` NPE instructions per
event per vector step):

* V1 runs the neuron loop on the scalar core:
  ``SETUP + n * (V1_NEURON_INSTR + g * V1_SYNAPSE_INSTR)`` instructions.
  With ``g == 1`` that is 8 instructions per synapse for graded spikes
  (load weight, load state, multiply, add, store, index/branch) and 7 for
  binary spikes (no multiply).
* V2 lets the scalar core dispatch every NPE instruction:
  ``SETUP + V2_DISPATCH_INSTR * V * (2 + g * k)``.
* V3 hands the loop to the loop controller: the scalar core only pays
  ``SETUP`` and the controller takes one step per NPE instruction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from typing import Iterator, Mapping

import numpy as np

OP_CLASSES = (
    "riscv_instr",
    "imem_fetch",
    "dmem_read_word",
    "dmem_write_word",
    "npe_op",
    "loopctrl_step",
    "noc_hop",
    "packet_inject",
)
_INDEX = {name: i for i, name in enumerate(OP_CLASSES)}

# scalar-core instructions paid once per event-group (packet decode, row address)
SETUP_INSTR = 12
V1_NEURON_INSTR = 5  # load state, store state, index, compare, branch
V1_SYNAPSE_INSTR_GRADED = 3  # load weight, multiply, add
V1_SYNAPSE_INSTR_BINARY = 2  # load weight, add
V2_DISPATCH_INSTR = 2
# NPE instructions per event per vector step (plus 2 per step: load and store state)
NPE_EVENT_INSTR_GRADED = 2  # load weight, multiply-accumulate
NPE_EVENT_INSTR_BINARY = 1  # accumulate weight from memory
# threshold phase
V1_FIRE_NEURON_INSTR = 5  # load, compare, branch, store reset, index
NPE_FIRE_INSTR = 3  # load, compare, store reset
EMIT_INSTR = 2  # write address and payload to the NoC interface
# depth-first conv bookkeeping on the scalar core, per input event
DF_EVENT_INSTR = 10

WORD_BITS = 16
DEFAULT_DMEM_WORDS = 131072  # 256 KiB of 16-bit words


class UnknownOpClass(KeyError):
    pass


@dataclass(frozen=True)
class CoreVariant:
    tag: str
    npe_count: int = 0
    npe_pipeline_depth: int = 4

    def __post_init__(self):
        if self.tag not in ("V1", "V2", "V3"):
            raise ValueError(f"unknown core variant {self.tag!r}")
        if (self.npe_count == 0) != (self.tag == "V1"):
            raise ValueError("npe_count must be 0 exactly for V1")

    @classmethod
    def named(cls, tag: str) -> "CoreVariant":
        tag = tag.upper()
        return cls(tag, 0 if tag == "V1" else 8)

    @property
    def has_npe(self) -> bool:
        return self.npe_count > 0

    @property
    def has_loop_controller(self) -> bool:
        return self.tag == "V3"


class CostCounters:
    """Non-negative integer count per op class."""

    __slots__ = ("_v",)

    def __init__(self, values: Mapping[str, int] | None = None):
        self._v = np.zeros(len(OP_CLASSES), dtype=np.int64)
        if values:
            for k, n in values.items():
                self.account(k, n)

    def account(self, op_class: str, n: int = 1) -> "CostCounters":
        try:
            i = _INDEX[op_class]
        except KeyError:
            raise UnknownOpClass(op_class) from None
        if n < 0:
            raise ValueError(f"negative count {n} for {op_class}")
        self._v[i] += int(n)
        return self

    def add(self, other: "CostCounters") -> "CostCounters":
        self._v += other._v
        return self

    def __getitem__(self, op_class: str) -> int:
        try:
            return int(self._v[_INDEX[op_class]])
        except KeyError:
            raise UnknownOpClass(op_class) from None

    def __iter__(self) -> Iterator[str]:
        return iter(OP_CLASSES)

    def __eq__(self, other) -> bool:
        return isinstance(other, CostCounters) and bool(np.array_equal(self._v, other._v))

    def __repr__(self) -> str:
        nz = {k: int(v) for k, v in zip(OP_CLASSES, self._v) if v}
        return f"CostCounters({nz})"

    def vector(self) -> np.ndarray:
        return self._v.copy()

    def as_dict(self) -> dict[str, int]:
        return {k: int(v) for k, v in zip(OP_CLASSES, self._v)}

    def copy(self) -> "CostCounters":
        c = CostCounters()
        c._v[:] = self._v
        return c

    def is_zero(self) -> bool:
        return not self._v.any()

    def scaled(self, factor: int) -> "CostCounters":
        c = CostCounters()
        c._v[:] = self._v * factor
        return c


@dataclass
class TaskCost:
    """Counts for one scheduled unit of core work, plus fixed stall cycles."""

    counters: CostCounters = field(default_factory=CostCounters)
    stall_cycles: int = 0
    synaptic_ops: int = 0  # weight-times-input updates performed


def weight_words(n_weights: int, bits: int) -> int:
    return ceil(n_weights * bits / WORD_BITS)


def _npe_instr_per_event(graded: bool) -> int:
    return NPE_EVENT_INSTR_GRADED if graded else NPE_EVENT_INSTR_BINARY


def event_control_cost(variant: CoreVariant, n_out: int, group: int, graded: bool = True) -> CostCounters:
    """Control-side counts (scalar core, NPE arithmetic, loop controller) for one event-group."""
    if n_out < 0 or group < 1:
        raise ValueError(f"need n_out >= 0 and group >= 1, got {n_out}, {group}")
    c = CostCounters()
    if not variant.has_npe:
        per_syn = V1_SYNAPSE_INSTR_GRADED if graded else V1_SYNAPSE_INSTR_BINARY
        instr = SETUP_INSTR + n_out * (V1_NEURON_INSTR + group * per_syn)
        c.account("riscv_instr", instr).account("imem_fetch", instr)
        return c
    vsteps = ceil(n_out / variant.npe_count)
    npe_instr = vsteps * (2 + group * _npe_instr_per_event(graded))
    c.account("npe_op", n_out * group * (2 if graded else 1))
    if variant.has_loop_controller:
        c.account("riscv_instr", SETUP_INSTR).account("imem_fetch", SETUP_INSTR)
        c.account("loopctrl_step", npe_instr)
    else:
        instr = SETUP_INSTR + V2_DISPATCH_INSTR * npe_instr
        c.account("riscv_instr", instr).account("imem_fetch", instr)
    return c


def fire_control_cost(variant: CoreVariant, n_neurons: int, emitted: int) -> CostCounters:
    """Threshold phase over ``n_neurons`` states emitting ``emitted`` packets (memory excluded)."""
    c = CostCounters()
    emit = EMIT_INSTR * emitted
    if not variant.has_npe:
        instr = SETUP_INSTR + V1_FIRE_NEURON_INSTR * n_neurons + emit
        c.account("riscv_instr", instr).account("imem_fetch", instr)
    else:
        npe_instr = NPE_FIRE_INSTR * ceil(n_neurons / variant.npe_count)
        c.account("npe_op", n_neurons)
        if variant.has_loop_controller:
            instr = SETUP_INSTR + emit
            c.account("loopctrl_step", npe_instr)
        else:
            instr = SETUP_INSTR + V2_DISPATCH_INSTR * npe_instr + emit
        c.account("riscv_instr", instr).account("imem_fetch", instr)
    c.account("packet_inject", emitted)
    return c


def hazard_stalls(variant: CoreVariant, dependent_sequences: int) -> int:
    """Pipeline drain cycles: one full drain per dependent sequence.

    Vector steps of one event-group are independent and overlap in the
    pipeline; the group as a whole drains once before its states are reused.
    """
    return variant.npe_pipeline_depth * dependent_sequences if variant.has_npe else 0


@dataclass
class ShardMemory:
    """One layer's slice on a core: weights [n_in, n_local] and states."""

    layer: int
    lo: int
    hi: int
    weights: np.ndarray
    states: np.ndarray
    weight_bits: int = 16

    @property
    def n_local(self) -> int:
        return self.hi - self.lo


class CapacityError(RuntimeError):
    pass


@dataclass
class CoreState:
    core_id: int
    variant: CoreVariant
    capacity_words: int = DEFAULT_DMEM_WORDS
    counters: CostCounters = field(default_factory=CostCounters)
    shards: dict[int, ShardMemory] = field(default_factory=dict)
    extra_words: int = 0  # routing table entries, line buffers...

    def account(self, op_class: str, n: int = 1) -> "CoreState":
        self.counters.account(op_class, n)
        return self

    def charge(self, counters: CostCounters) -> None:
        self.counters.add(counters)

    def install(self, shard: ShardMemory) -> None:
        self.shards[shard.layer] = shard
        used = self.footprint_words()
        if used > self.capacity_words:
            raise CapacityError(
                f"core {self.core_id} needs {used} words, capacity is {self.capacity_words}"
            )

    def footprint_words(self) -> int:
        total = self.extra_words
        for s in self.shards.values():
            total += weight_words(s.weights.size, s.weight_bits) + s.states.size
        return total
