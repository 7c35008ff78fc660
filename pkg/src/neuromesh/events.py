"""AER spike packets and the deterministic discrete-event queue."""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .kernels import round_bf16


class CausalityError(ValueError):
    """An event was scheduled before the current simulation time."""


class PacketError(ValueError):
    """A spike packet does not fit the layer it claims to come from."""


@dataclass(frozen=True, slots=True)
class SpikePacket:
    """One address-event.

    ``label`` is the id of the source layer (0 is the network input),
    ``value`` is None for a binary spike and a bf16 magnitude otherwise.
    """

    label: int
    neuron_index: int
    value: float | None
    timestamp: int

    @property
    def binary(self) -> bool:
        return self.value is None

    @property
    def magnitude(self) -> float:
        return 1.0 if self.value is None else self.value

    def at(self, t: int) -> "SpikePacket":
        if t < self.timestamp:
            raise CausalityError(f"packet moved back in time: {self.timestamp} -> {t}")
        return SpikePacket(self.label, self.neuron_index, self.value, t)


def _bf16_scalar(v: float) -> float:
    return float(round_bf16(np.array([v]))[0])


def make_spike(
    label: int,
    index: int,
    value: float | None,
    t: int,
    layer_size: int,
    graded: bool,
) -> SpikePacket:
    """Build a validated packet for a layer of ``layer_size`` neurons."""
    if not 0 <= index < layer_size:
        raise PacketError(f"neuron index {index} out of range for layer {label} (size {layer_size})")
    if t < 0:
        raise PacketError(f"negative timestamp {t}")
    if graded:
        if value is None:
            raise PacketError(f"layer {label} is graded but no value was given")
        value = _bf16_scalar(value)
    elif value is not None:
        raise PacketError(f"layer {label} emits binary spikes; got graded value {value}")
    return SpikePacket(label, int(index), value, int(t))


def spikes_from_activations(
    label: int, activations: Sequence[float] | np.ndarray, t: int = 0, graded: bool = True
) -> list[SpikePacket]:
    """One packet per non-zero entry, in ascending index order."""
    acts = np.asarray(activations, dtype=np.float64).ravel()
    return [
        make_spike(label, int(i), float(acts[i]) if graded else None, t, acts.size, graded)
        for i in np.flatnonzero(acts)
    ]


# payload kinds carried by ScheduledEvent
ARRIVAL = "arrival"
COMPLETION = "completion"
INJECTION = "injection"
STREAM_END = "stream_end"


@dataclass(order=True, frozen=True, slots=True)
class ScheduledEvent:
    time: int
    sequence: int
    kind: str = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    """Min-heap on (time, sequence); sequence is the global insertion counter."""

    def __init__(self) -> None:
        self._heap: list[ScheduledEvent] = []
        self._seq = itertools.count()
        self.now = 0
        self.scheduled = 0
        self.dequeued = 0

    def __len__(self) -> int:
        return len(self._heap)

    def __bool__(self) -> bool:
        return bool(self._heap)

    def schedule(self, time: int, kind: str, payload: Any = None) -> ScheduledEvent:
        if time < self.now:
            raise CausalityError(f"cannot schedule {kind} at t={time}; clock is at t={self.now}")
        ev = ScheduledEvent(int(time), next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        self.scheduled += 1
        return ev

    def push(self, ev: ScheduledEvent) -> None:
        """Insert a pre-built event (its sequence is trusted to be unique)."""
        if ev.time < self.now:
            raise CausalityError(f"cannot schedule {ev.kind} at t={ev.time}; clock is at t={self.now}")
        heapq.heappush(self._heap, ev)
        self.scheduled += 1

    def next_event(self) -> ScheduledEvent | None:
        if not self._heap:
            return None
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        self.dequeued += 1
        return ev

    def peek_time(self) -> int | None:
        return self._heap[0].time if self._heap else None

    def drain(self) -> Iterable[ScheduledEvent]:
        while self._heap:
            yield self.next_event()  # type: ignore[misc]
