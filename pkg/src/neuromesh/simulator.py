"""Discrete-event simulation of one inference on the core mesh.

Each core runs its tasks one at a time in arrival order. A dense layer shard
consumes its input streams (one per source shard) in source order, so every
neuron accumulates its inputs in ascending input index, the same order the
reference forward pass uses. Stream-end markers travel the same routes as
data packets but cost nothing; they only tell a shard that a source is done.
"""

from __future__ import annotations

import hashlib
from bisect import bisect_right
from collections import deque
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .core_model import DEFAULT_DMEM_WORDS, CoreState, CoreVariant, CostCounters, ShardMemory, TaskCost
from .cost_model import PATH_HOPS, PATH_LEN, CostTable, task_cycles, task_path
from .engines.conv import (
    LineBufferState,
    PixelEvent,
    depth_first_conv_event,
    finish_frame,
    stateful_conv_event,
    stateful_peak_words,
)
from .engines.dense import GroupBuffer, dense_fire, process_dense_group
from .events import ARRIVAL, COMPLETION, INJECTION, STREAM_END, EventQueue, SpikePacket
from .mapping import (
    ONE_LAYER_PER_CORE,
    Mapping,
    Shard,
    assign_layers,
    check_capacity,
    generate_routing_tables,
)
from .netmodel import DEPTH_FIRST, NetworkSpec, NumericFault, fire_mask
from .noc import DeliveryTrace, MeshTopology, RoutingTable, build_topology, deliver


@dataclass
class _Task:
    kind: str  # group | fire | df_event | df_finish | conv_event | conv_fire
    run: "_LayerRun"
    payload: Any
    ready_time: int
    ready_path: np.ndarray
    final: bool = False


@dataclass
class _LayerRun:
    """One layer shard hosted on one core."""

    layer_id: int
    shard: Shard
    sources: tuple[Shard, ...]
    starts: list[int]
    buffers: list[deque] = field(default_factory=list)
    done: list[bool] = field(default_factory=list)
    end_paths: list[np.ndarray] = field(default_factory=list)
    cursor: int = 0
    received: int = 0
    finished: bool = False
    group: GroupBuffer | None = None
    line: LineBufferState | None = None
    conv_states: np.ndarray | None = None

    def stream_of(self, index: int) -> int:
        return max(0, bisect_right(self.starts, index) - 1)


@dataclass
class _Core:
    state: CoreState
    queue: deque = field(default_factory=deque)
    busy: bool = False
    free_time: int = 0
    free_path: np.ndarray = field(default_factory=lambda: np.zeros(PATH_LEN))
    busy_cycles: int = 0


@dataclass
class SimResult:
    variant: str
    counters: dict[int, CostCounters]
    latency_cycles: int
    critical_path: np.ndarray
    pre: dict[int, np.ndarray]
    out: dict[int, np.ndarray]
    input_events: int
    events_in: dict[int, int]
    events_out: dict[int, int]
    packets_routed: int
    noc_hops: int
    synaptic_ops: int
    peak_words: dict[int, int]
    activation_peak_words: int
    stateful_activation_words: int
    busy_cycles: dict[int, int]
    trace_digest: str
    trace: list[str] = field(default_factory=list)

    @property
    def total(self) -> CostCounters:
        t = CostCounters()
        for c in self.counters.values():
            t.add(c)
        return t


class Simulator:
    def __init__(
        self,
        net: NetworkSpec,
        variant: CoreVariant | str,
        table: CostTable | None = None,
        topo: MeshTopology | None = None,
        mapping: Mapping | None = None,
        tables: dict[int, RoutingTable] | None = None,
        group_size: int = 1,
        policy: str = ONE_LAYER_PER_CORE,
        capacity_words: int = DEFAULT_DMEM_WORDS,
        record_trace: bool = False,
    ):
        if group_size < 1:
            raise ValueError("group size must be >= 1")
        self.net = net
        self.variant = variant if isinstance(variant, CoreVariant) else CoreVariant.named(variant)
        self.table = table or CostTable()
        self.topo = topo or build_topology(2, 2)
        self.mapping = mapping or assign_layers(net, self.topo, policy, capacity_words)
        self.tables = tables if tables is not None else generate_routing_tables(self.mapping, self.topo)
        self.group_size = group_size
        self.capacity_words = capacity_words
        self.record_trace = record_trace
        self._capacity = check_capacity(self.mapping, net, self.tables, capacity_words)
        for core, row in sorted(self._capacity.items()):
            if row["overflow"]:
                from .core_model import CapacityError

                raise CapacityError(f"core {core} needs {row['total']} words, capacity {capacity_words}")

    # ---- setup -----------------------------------------------------------------

    def _build(self) -> None:
        net, v = self.net, self.variant
        self.cores: dict[int, _Core] = {
            c: _Core(CoreState(c, v, self.capacity_words)) for c in range(self.topo.n_cores)
        }
        self.runs: dict[tuple[int, int], _LayerRun] = {}
        for layer_id, shards in sorted(self.mapping.layers.items()):
            spec = net.layers[layer_id - 1]
            w = net.deployed[layer_id - 1]
            sources = self.mapping.sources(layer_id - 1)
            for s in shards:
                run = _LayerRun(layer_id, s, sources, [src.lo for src in sources])
                n = len(sources)
                run.buffers = [deque() for _ in range(n)]
                run.done = [False] * n
                run.end_paths = [np.zeros(PATH_LEN) for _ in range(n)]
                if spec.kind == "dense":
                    run.group = GroupBuffer(layer_id, self.group_size)
                    weights = np.ascontiguousarray(w[:, s.lo : s.hi])
                    self.cores[s.core].state.shards[layer_id] = ShardMemory(
                        layer_id, s.lo, s.hi, weights, np.zeros(s.size, dtype=np.float32),
                        spec.weight_scheme.bits,
                    )
                elif spec.execution_style == DEPTH_FIRST:
                    bits = 16 if net.layer_graded(layer_id - 1) else 1
                    run.line = LineBufferState(spec, w, bits)
                else:
                    run.conv_states = np.zeros(spec.output_shape, dtype=np.float32)
                self.runs[(s.core, layer_id)] = run
        self.queue = EventQueue()
        self.pre = {i: np.zeros(net.layer_shape(i), dtype=np.float64) for i in range(1, net.n_layers + 1)}
        self.out = {i: np.zeros(net.layer_shape(i), dtype=np.float64) for i in range(1, net.n_layers + 1)}
        self.events_in = {i: 0 for i in range(1, net.n_layers + 1)}
        self.events_out = {i: 0 for i in range(1, net.n_layers + 1)}
        self.packets_routed = 0
        self.noc_hops = 0
        self.synaptic_ops = 0
        self.latency = 0
        self.latency_path = np.zeros(PATH_LEN)
        self._routes: dict[tuple[int, int], DeliveryTrace] = {}
        self._trace_hash = hashlib.sha256()
        self._trace: list[str] = []

    def _log(self, line: str) -> None:
        self._trace_hash.update(line.encode())
        self._trace_hash.update(b"\n")
        if self.record_trace:
            self._trace.append(line)

    # ---- routing ----------------------------------------------------------------

    def _route(self, src_core: int, label: int) -> DeliveryTrace:
        key = (src_core, label)
        tr = self._routes.get(key)
        if tr is None:
            probe = SpikePacket(label, 0, None, 0)
            tr = deliver(self.topo, self.tables, probe, src_core, self.table.hop_latency)
            expected = set(self.mapping.cores_of(label + 1))
            if set(tr.destinations) != expected:
                from .noc import RoutingFault

                raise RoutingFault(
                    f"label {label} from core {src_core} reaches {sorted(tr.destinations)}, mapping needs {sorted(expected)}"
                )
            self._routes[key] = tr
        return tr

    def _send(self, run: _LayerRun, local_ids: np.ndarray | list[int], values: list[float | None],
              t0: int, dur: int, path0: np.ndarray, occ: np.ndarray) -> None:
        """Emit packets spread over a task's duration and schedule their arrivals."""
        layer = run.layer_id
        n = len(local_ids)
        last = layer == self.net.n_layers
        route = None if last else self._route(run.shard.core, layer)
        for m, (idx, val) in enumerate(zip(local_ids, values)):
            frac = (m + 1) / n
            t = t0 + (dur * (m + 1)) // n
            path = path0 + occ * frac
            gidx = run.shard.lo + int(idx)
            self.events_out[layer] += 1
            self.out[layer].reshape(-1)[gidx] = 1.0 if val is None else val
            if last:
                continue
            pkt = SpikePacket(layer, gidx, val, t)
            self.packets_routed += 1
            for router, hops in sorted(route.hops_by_router.items()):
                self.cores[router].state.account("noc_hop", hops)
                self.noc_hops += hops
            for dest, hops in sorted(route.destinations.items()):
                p = path.copy()
                p[PATH_HOPS] += hops
                dst_run = self.runs[(dest, layer + 1)]
                self.queue.schedule(t + hops * self.table.hop_latency, ARRIVAL,
                                    (dest, layer + 1, dst_run.stream_of(gidx), pkt.at(t + hops * self.table.hop_latency), p))

    def _send_end(self, run: _LayerRun, t: int, path: np.ndarray) -> None:
        layer = run.layer_id
        if layer == self.net.n_layers:
            return
        route = self._route(run.shard.core, layer)
        src_stream = self.mapping.layers[layer].index(run.shard)
        for dest, hops in sorted(route.destinations.items()):
            p = path.copy()
            p[PATH_HOPS] += hops
            self.queue.schedule(t + hops * self.table.hop_latency, STREAM_END, (dest, layer + 1, src_stream, p))

    # ---- stream handling ----------------------------------------------------------

    def _arrive(self, core: int, layer: int, stream: int, pkt: SpikePacket, path: np.ndarray) -> None:
        run = self.runs[(core, layer)]
        run.buffers[stream].append((pkt, path))
        run.received += 1
        self.events_in[layer] += 1
        self._advance(run)

    def _end(self, core: int, layer: int, stream: int, path: np.ndarray) -> None:
        run = self.runs[(core, layer)]
        run.done[stream] = True
        run.end_paths[stream] = path
        self._advance(run)

    def _advance(self, run: _LayerRun) -> None:
        n = len(run.sources)
        while run.cursor < n:
            buf = run.buffers[run.cursor]
            while buf:
                pkt, path = buf.popleft()
                self._consume(run, pkt, path)
            if run.done[run.cursor]:
                run.cursor += 1
            else:
                break
        if run.cursor == n and not run.finished:
            run.finished = True
            now = self.queue.now
            path = max(run.end_paths, key=lambda p: float(p @ self._w)).copy()
            if run.received == 0:
                self._send_end(run, now, path)  # idle shard: nothing to compute
                return
            if run.group is not None:
                pending = run.group.flush()
                if pending:
                    self._enqueue(_Task("group", run, pending, now, path))
                self._enqueue(_Task("fire", run, None, now, path, final=True))
            elif run.line is not None:
                self._enqueue(_Task("df_finish", run, None, now, path, final=True))
            else:
                self._enqueue(_Task("conv_fire", run, None, now, path, final=True))

    def _consume(self, run: _LayerRun, pkt: SpikePacket, path: np.ndarray) -> None:
        now = self.queue.now
        if run.group is not None:
            full = run.group.add(pkt, pkt.label + 1)
            if full:
                self._enqueue(_Task("group", run, full, now, path))
            return
        spec = self.net.layers[run.layer_id - 1]
        y, rest = divmod(pkt.neuron_index, spec.w * spec.c_in)
        x, c = divmod(rest, spec.c_in)
        ev = PixelEvent(y, x, c, pkt.magnitude)
        self._enqueue(_Task("df_event" if run.line is not None else "conv_event", run, ev, now, path))

    # ---- core scheduling ----------------------------------------------------------

    def _enqueue(self, task: _Task) -> None:
        core = self.cores[task.run.shard.core]
        core.queue.append(task)
        self._start(core)

    def _start(self, core: _Core) -> None:
        if core.busy or not core.queue:
            return
        task: _Task = core.queue.popleft()
        now = self.queue.now
        if core.free_time >= task.ready_time:
            path0 = core.free_path
        else:
            path0 = task.ready_path
        cost, emits = self._execute(core, task)
        dur = task_cycles(cost, self.variant, self.table)
        occ = task_path(cost, self.variant)
        end = now + dur
        core.busy = True
        core.busy_cycles += dur
        self._log(f"{now} start {task.kind} core={core.state.core_id} layer={task.run.layer_id} dur={dur}")
        if emits:
            ids, vals = emits
            if task.kind == "fire":
                self._send(task.run, ids, vals, now, dur, path0, occ)
            else:  # depth-first outputs leave when the task ends
                self._send(task.run, ids, vals, end, 0, path0 + occ, np.zeros(PATH_LEN))
        self.queue.schedule(end, COMPLETION, (core.state.core_id, task, path0 + occ))

    def _complete(self, core_id: int, task: _Task, path: np.ndarray) -> None:
        core = self.cores[core_id]
        now = self.queue.now
        core.busy = False
        core.free_time = now
        core.free_path = path
        if now > self.latency or (now == self.latency and not self.latency_path.any()):
            self.latency = now
            self.latency_path = path
        if task.final:
            self._send_end(task.run, now, path)
        self._start(core)

    def _execute(self, core: _Core, task: _Task) -> tuple[TaskCost, tuple[list[int], list] | None]:
        run = task.run
        spec = self.net.layers[run.layer_id - 1]
        st = core.state
        graded_in = self.net.layer_graded(run.layer_id - 1)
        if task.kind == "group":
            self.synaptic_ops += len(task.payload) * run.shard.size
            return process_dense_group(st, spec, task.payload), None
        if task.kind == "fire":
            pre, fired, cost = dense_fire(st, spec, run.layer_id)
            self.pre[run.layer_id].reshape(-1)[run.shard.lo : run.shard.hi] = pre
            vals = [None if not spec.graded else float(pre[j]) for j in fired]
            return cost, (list(fired), vals)
        if task.kind in ("df_event", "df_finish"):
            if task.kind == "df_event":
                res = depth_first_conv_event(run.line, spec, task.payload, self.variant, graded_in)
            else:
                res = finish_frame(run.line, self.variant, graded_in)
            st.charge(res.cost.counters)
            self.synaptic_ops += res.synaptic_ops
            pre = self.pre[run.layer_id]
            for oy, ox, col in res.pre:
                pre[oy, ox, :] = col
            ids = [(e.y * spec.w_out + e.x) * spec.c_out + e.c for e in res.emitted]
            vals = [None if not spec.graded else e.value for e in res.emitted]
            return res.cost, ((ids, vals) if ids else None)
        if task.kind == "conv_event":
            cost = stateful_conv_event(run.conv_states, self.net.deployed[run.layer_id - 1], spec,
                                       task.payload, self.variant, graded_in)
            st.charge(cost.counters)
            self.synaptic_ops += cost.synaptic_ops
            return cost, None
        if task.kind == "conv_fire":
            from .engines.dense import dense_fire_cost

            pre = run.conv_states.astype(np.float64)
            self.pre[run.layer_id][...] = pre
            flat = run.conv_states.reshape(-1)
            fired = np.flatnonzero(fire_mask(flat, spec))
            vals = [None if not spec.graded else float(flat[j]) for j in fired]
            run.conv_states[...] = 0
            cost = dense_fire_cost(self.variant, flat.size, int(fired.size))
            st.charge(cost.counters)
            return cost, (list(fired), vals)
        raise ValueError(f"unknown task kind {task.kind}")

    # ---- main loop -----------------------------------------------------------------

    def run(self, inputs: np.ndarray) -> SimResult:
        self._build()
        self._w = self.table.path_weights()
        net = self.net
        x = np.asarray(inputs, dtype=np.float64).reshape(-1)
        if x.size != net.input_size:
            raise ValueError(f"input has {x.size} values, network expects {net.input_size}")
        if not np.all(np.isfinite(x)):
            raise NumericFault("input contains non-finite values")
        graded = net.input_mode != "binary"
        from .events import spikes_from_activations

        packets = spikes_from_activations(0, x, 0, graded)
        zero = np.zeros(PATH_LEN)
        for s in self.mapping.layers[1]:
            for pkt in packets:
                self.queue.schedule(0, INJECTION, (s.core, pkt))
            self.queue.schedule(0, STREAM_END, (s.core, 1, 0, zero))
        while True:
            ev = self.queue.next_event()
            if ev is None:
                break
            kind, p = ev.kind, ev.payload
            if kind == INJECTION:
                core, pkt = p
                self._log(f"{ev.time} inject core={core} idx={pkt.neuron_index}")
                self._arrive(core, 1, 0, pkt, zero)
            elif kind == ARRIVAL:
                core, layer, stream, pkt, path = p
                self._log(f"{ev.time} arrive core={core} layer={layer} idx={pkt.neuron_index} v={pkt.value!r}")
                self._arrive(core, layer, stream, pkt, path)
            elif kind == STREAM_END:
                core, layer, stream, path = p
                self._log(f"{ev.time} end core={core} layer={layer} stream={stream}")
                self._end(core, layer, stream, path)
            elif kind == COMPLETION:
                core_id, task, path = p
                self._log(f"{ev.time} done core={core_id} layer={task.run.layer_id}")
                self._complete(core_id, task, path)
        for run in self.runs.values():
            if not run.finished or any(run.buffers):
                raise RuntimeError(f"layer {run.layer_id} on core {run.shard.core} did not drain")
        if self.queue.scheduled != self.queue.dequeued:
            raise RuntimeError("event conservation violated")
        return self._result(len(packets))

    def _result(self, n_inputs: int) -> SimResult:
        peak: dict[int, int] = {}
        act_peak = 0
        stateful_words = 0
        for (core, layer_id), run in self.runs.items():
            spec = self.net.layers[layer_id - 1]
            if spec.kind == "conv":
                stateful_words += stateful_peak_words(spec)
            if run.line is not None:
                act_peak += run.line.peak_words
        for core, row in self._capacity.items():
            dynamic = sum(
                r.line.peak_words for (c, _), r in self.runs.items() if c == core and r.line is not None
            )
            static_states = sum(
                (r.shard.size if r.line is None else 0) for (c, _), r in self.runs.items() if c == core
            )
            peak[core] = row["weights"] + row["routing"] + static_states + dynamic
        return SimResult(
            variant=self.variant.tag,
            counters={c: core.state.counters.copy() for c, core in sorted(self.cores.items())},
            latency_cycles=int(self.latency),
            critical_path=self.latency_path.copy(),
            pre=self.pre,
            out=self.out,
            input_events=n_inputs,
            events_in=dict(self.events_in),
            events_out=dict(self.events_out),
            packets_routed=self.packets_routed,
            noc_hops=self.noc_hops,
            synaptic_ops=self.synaptic_ops,
            peak_words=dict(sorted(peak.items())),
            activation_peak_words=act_peak,
            stateful_activation_words=stateful_words,
            busy_cycles={c: core.busy_cycles for c, core in sorted(self.cores.items())},
            trace_digest=self._trace_hash.hexdigest(),
            trace=list(self._trace),
        )


def simulate(net: NetworkSpec, inputs: np.ndarray, variant: CoreVariant | str = "V3", **kw) -> SimResult:
    return Simulator(net, variant, **kw).run(inputs)
