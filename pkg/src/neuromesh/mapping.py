"""Layer-to-core assignment, capacity checks and routing-table generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil

from .core_model import DEFAULT_DMEM_WORDS, WORD_BITS, CapacityError, weight_words
from .netmodel import BINARY, DEPTH_FIRST, LayerSpec, NetworkSpec
from .noc import MeshTopology, RoutingTable, install_multicast

ONE_LAYER_PER_CORE = "one-layer-per-core"
BALANCED_SPLIT = "balanced-split"
POLICIES = (ONE_LAYER_PER_CORE, BALANCED_SPLIT)


@dataclass(frozen=True)
class Shard:
    core: int
    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo


@dataclass
class Mapping:
    """layer id (1..L) -> ordered shards; shards partition the layer's output neurons."""

    layers: dict[int, tuple[Shard, ...]]
    policy: str
    input_cores: tuple[int, ...] = ()

    def cores_of(self, layer_id: int) -> tuple[int, ...]:
        return tuple(s.core for s in self.layers[layer_id])

    def shard_on(self, layer_id: int, core: int) -> Shard | None:
        for s in self.layers.get(layer_id, ()):
            if s.core == core:
                return s
        return None

    def sources(self, layer_id: int) -> tuple[Shard, ...]:
        """Shards emitting the given label (layer 0 is the host input stream)."""
        if layer_id == 0:
            return (Shard(-1, 0, 0),)
        return self.layers[layer_id]

    def dump(self) -> str:
        lines = [f"# policy {self.policy}"]
        for layer in sorted(self.layers):
            for s in self.layers[layer]:
                lines.append(f"{layer} {s.core} {s.lo} {s.hi}")
        return "\n".join(lines) + "\n"

    @classmethod
    def load(cls, text: str) -> "Mapping":
        policy = BALANCED_SPLIT
        layers: dict[int, list[Shard]] = {}
        for raw in text.splitlines():
            line = raw.strip()
            if line.startswith("# policy"):
                policy = line.split(None, 2)[2]
                continue
            if not line or line.startswith("#"):
                continue
            layer, core, lo, hi = (int(t) for t in line.split())
            layers.setdefault(layer, []).append(Shard(core, lo, hi))
        return cls({k: tuple(v) for k, v in layers.items()}, policy)


def _input_bits(net: NetworkSpec, layer_id: int) -> int:
    """Bits per stored input activation for a depth-first line buffer."""
    return 1 if not net.layer_graded(layer_id - 1) else WORD_BITS


def line_buffer_words(layer: LayerSpec, input_bits: int = WORD_BITS, partial_row: bool = False) -> int:
    """(k-1) buffered input rows (+ optionally the row in progress) plus one c_out column."""
    row_words = ceil(layer.w * layer.c_in * input_bits / WORD_BITS)
    rows = layer.k - 1 + (1 if partial_row else 0)
    return rows * row_words + layer.c_out


def shard_state_words(net: NetworkSpec, layer_id: int, shard: Shard) -> int:
    layer = net.layers[layer_id - 1]
    if layer.kind == "conv" and layer.execution_style == DEPTH_FIRST:
        return line_buffer_words(layer, _input_bits(net, layer_id))
    return shard.size


def shard_weight_words(net: NetworkSpec, layer_id: int, shard: Shard) -> int:
    layer = net.layers[layer_id - 1]
    bits = layer.weight_scheme.bits
    if layer.kind == "dense":
        return weight_words(layer.n_in * shard.size, bits)
    return weight_words(layer.weight_count, bits)


def _layer_words(net: NetworkSpec, layer_id: int) -> int:
    layer = net.layers[layer_id - 1]
    whole = Shard(0, 0, layer.output_size)
    return shard_weight_words(net, layer_id, whole) + shard_state_words(net, layer_id, whole)


def _split(n: int, parts: int) -> list[tuple[int, int]]:
    base, extra = divmod(n, parts)
    out, lo = [], 0
    for i in range(parts):
        hi = lo + base + (1 if i < extra else 0)
        out.append((lo, hi))
        lo = hi
    return out


def assign_layers(
    net: NetworkSpec,
    topo: MeshTopology,
    policy: str = ONE_LAYER_PER_CORE,
    capacity_words: int = DEFAULT_DMEM_WORDS,
) -> Mapping:
    L, C = net.n_layers, topo.n_cores
    layers: dict[int, tuple[Shard, ...]] = {}
    if policy == ONE_LAYER_PER_CORE:
        if L > C:
            raise CapacityError(f"{L} layers do not fit one-per-core on {C} cores")
        for i in range(1, L + 1):
            layers[i] = (Shard(i - 1, 0, net.layer_size(i)),)
    elif policy == BALANCED_SPLIT:
        if L >= C:
            for i in range(1, L + 1):
                layers[i] = (Shard((i - 1) * C // L, 0, net.layer_size(i)),)
        else:
            # cores proportional to footprint, at least one each, largest remainder
            need = [_layer_words(net, i) for i in range(1, L + 1)]
            total = sum(need)
            share = [max(1.0, (C * n / total) if total else C / L) for n in need]
            counts = [max(1, int(s)) for s in share]
            order = sorted(range(L), key=lambda i: (-(share[i] - int(share[i])), i))
            j = 0
            while sum(counts) < C:
                counts[order[j % L]] += 1
                j += 1
            while sum(counts) > C:
                i = max(range(L), key=lambda i: (counts[i], -i))
                counts[i] -= 1
            core = 0
            for i in range(1, L + 1):
                layer = net.layers[i - 1]
                parts = counts[i - 1]
                if layer.kind == "conv":
                    parts = 1  # conv layers stay whole: the line buffer needs full rows
                size = net.layer_size(i)
                parts = min(parts, size)
                layers[i] = tuple(Shard(core + p, lo, hi) for p, (lo, hi) in enumerate(_split(size, parts)))
                core += counts[i - 1]
    else:
        raise ValueError(f"unknown mapping policy {policy!r}")
    mapping = Mapping(layers, policy, tuple(s.core for s in layers[1]) if L else ())
    report = check_capacity(mapping, net, capacity_words=capacity_words)
    for core in sorted(report):
        row = report[core]
        if row["overflow"]:
            raise CapacityError(
                f"core {core} needs {row['total']} words (weights {row['weights']}, "
                f"states {row['states']}), capacity {capacity_words}"
            )
    return mapping


def generate_routing_tables(mapping: Mapping, topo: MeshTopology) -> dict[int, RoutingTable]:
    """XY multicast trees from every source shard of layer l to all shards of layer l+1."""
    tables: dict[int, RoutingTable] = {c: RoutingTable() for c in range(topo.n_cores)}
    n_layers = max(mapping.layers) if mapping.layers else 0
    for label in range(1, n_layers):
        dests = mapping.cores_of(label + 1)
        for src in mapping.cores_of(label):
            install_multicast(topo, tables, label, src, dests)
    return tables


def check_capacity(
    mapping: Mapping,
    net: NetworkSpec,
    tables: dict[int, RoutingTable] | None = None,
    capacity_words: int = DEFAULT_DMEM_WORDS,
) -> dict[int, dict[str, int]]:
    """Per-core words for weights, neuron states and routing-table entries."""
    report: dict[int, dict[str, int]] = {}

    def row(core: int) -> dict[str, int]:
        return report.setdefault(core, {"weights": 0, "states": 0, "routing": 0, "total": 0, "overflow": 0})

    for layer_id, shards in mapping.layers.items():
        for s in shards:
            r = row(s.core)
            r["weights"] += shard_weight_words(net, layer_id, s)
            r["states"] += shard_state_words(net, layer_id, s)
    for core, table in (tables or {}).items():
        if len(table):
            row(core)["routing"] += len(table)
    for r in report.values():
        r["total"] = r["weights"] + r["states"] + r["routing"]
        r["overflow"] = int(r["total"] > capacity_words)
    return report
