"""2D mesh network-on-chip with label-keyed (source-based) multicast routing."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping

from .events import SpikePacket


class RoutingFault(RuntimeError):
    """Missing table entry or a routing loop."""


class Port(str, Enum):
    NORTH = "north"
    SOUTH = "south"
    EAST = "east"
    WEST = "west"
    LOCAL = "local"

    @property
    def opposite(self) -> "Port":
        return _OPPOSITE[self]


_OPPOSITE = {
    Port.NORTH: Port.SOUTH,
    Port.SOUTH: Port.NORTH,
    Port.EAST: Port.WEST,
    Port.WEST: Port.EAST,
    Port.LOCAL: Port.LOCAL,
}
# north is +y
_STEP = {Port.NORTH: (0, 1), Port.SOUTH: (0, -1), Port.EAST: (1, 0), Port.WEST: (-1, 0)}
PORT_ORDER = (Port.NORTH, Port.SOUTH, Port.EAST, Port.WEST, Port.LOCAL)


@dataclass(frozen=True)
class MeshTopology:
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError(f"mesh dimensions must be positive, got {self.width}x{self.height}")

    @property
    def n_cores(self) -> int:
        return self.width * self.height

    def coord(self, core: int) -> tuple[int, int]:
        if not 0 <= core < self.n_cores:
            raise ValueError(f"core {core} not in {self.width}x{self.height} mesh")
        return core % self.width, core // self.width

    def core_at(self, x: int, y: int) -> int:
        return y * self.width + x

    def ports(self, core: int) -> tuple[Port, ...]:
        """Ports that exist on this router (edge routers lose boundary ports)."""
        x, y = self.coord(core)
        out = []
        for p in PORT_ORDER:
            if p is Port.LOCAL:
                out.append(p)
                continue
            dx, dy = _STEP[p]
            if 0 <= x + dx < self.width and 0 <= y + dy < self.height:
                out.append(p)
        return tuple(out)

    def neighbor(self, core: int, port: Port) -> int:
        if port not in self.ports(core):
            raise RoutingFault(f"router {self.coord(core)} has no {port.value} port")
        x, y = self.coord(core)
        dx, dy = _STEP[port]
        return self.core_at(x + dx, y + dy)

    def links(self) -> list[tuple[int, int]]:
        """Directed links (from_core, to_core)."""
        return [
            (c, self.neighbor(c, p))
            for c in range(self.n_cores)
            for p in self.ports(c)
            if p is not Port.LOCAL
        ]

    def manhattan(self, a: int, b: int) -> int:
        (ax, ay), (bx, by) = self.coord(a), self.coord(b)
        return abs(ax - bx) + abs(ay - by)


def build_topology(width: int, height: int) -> MeshTopology:
    return MeshTopology(int(width), int(height))


@dataclass
class RoutingTable:
    """(input port, label) -> output ports for one router.

    A ``local -> local`` entry is the core's own loopback; every other entry
    must not send a packet back out of the port it came in on.
    """

    entries: dict[tuple[Port, int], frozenset[Port]] = field(default_factory=dict)

    def add(self, in_port: Port, label: int, out_ports: Iterable[Port]) -> None:
        outs = frozenset(out_ports)
        if not outs:
            raise ValueError("routing entry needs at least one output port")
        if in_port is not Port.LOCAL and in_port in outs:
            raise ValueError(f"entry ({in_port.value}, {label}) bounces back to its input port")
        key = (in_port, int(label))
        self.entries[key] = self.entries.get(key, frozenset()) | outs

    def __len__(self) -> int:
        return len(self.entries)

    def lookup(self, in_port: Port, label: int) -> frozenset[Port] | None:
        return self.entries.get((in_port, label))


def route_step(table: RoutingTable, input_port: Port, packet: SpikePacket, router: object = "?") -> frozenset[Port]:
    outs = table.lookup(input_port, packet.label)
    if outs is None:
        raise RoutingFault(
            f"no route at router {router} for label {packet.label} arriving on {input_port.value}"
        )
    return outs


@dataclass(frozen=True)
class LinkRecord:
    router: int
    in_port: Port
    out_ports: frozenset[Port]
    time: int


@dataclass
class DeliveryTrace:
    packet: SpikePacket
    link_traversals: int = 0
    destinations: dict[int, int] = field(default_factory=dict)  # core -> hops travelled
    records: list[LinkRecord] = field(default_factory=list)
    hops_by_router: dict[int, int] = field(default_factory=dict)  # link traversals leaving each router

    @property
    def destination_cores(self) -> set[int]:
        return set(self.destinations)


def deliver(
    topology: MeshTopology,
    tables: Mapping[int, RoutingTable],
    packet: SpikePacket,
    source: int,
    hop_latency: int = 1,
) -> DeliveryTrace:
    """Walk the multicast tree for ``packet`` injected at ``source``'s local port.

    Raises RoutingFault on a missing entry, a duplicate delivery, or a loop.
    """
    trace = DeliveryTrace(packet)
    seen: set[tuple[int, Port]] = set()
    frontier = [(source, Port.LOCAL, 0)]
    while frontier:
        nxt = []
        for core, in_port, hops in frontier:
            key = (core, in_port)
            if key in seen:
                raise RoutingFault(
                    f"routing loop: label {packet.label} revisits router {topology.coord(core)} via {in_port.value}"
                )
            seen.add(key)
            table = tables.get(core)
            if table is None:
                raise RoutingFault(f"router {topology.coord(core)} has no table installed")
            outs = route_step(table, in_port, packet, topology.coord(core))
            mesh_outs = [p for p in PORT_ORDER if p in outs and p is not Port.LOCAL]
            if mesh_outs:
                trace.records.append(
                    LinkRecord(core, in_port, frozenset(mesh_outs), packet.timestamp + hops * hop_latency)
                )
            for p in PORT_ORDER:
                if p not in outs:
                    continue
                if p is Port.LOCAL:
                    if core in trace.destinations:
                        raise RoutingFault(f"core {core} would receive label {packet.label} twice")
                    trace.destinations[core] = hops
                    continue
                nb = topology.neighbor(core, p)
                trace.link_traversals += 1
                trace.hops_by_router[core] = trace.hops_by_router.get(core, 0) + 1
                nxt.append((nb, p.opposite, hops + 1))
        frontier = nxt
    return trace


def xy_path(topology: MeshTopology, src: int, dst: int) -> list[tuple[int, Port]]:
    """Dimension-ordered route as (router, output port) steps, X first then Y."""
    (x, y), (tx, ty) = topology.coord(src), topology.coord(dst)
    steps = []
    while x != tx:
        p = Port.EAST if tx > x else Port.WEST
        steps.append((topology.core_at(x, y), p))
        x += 1 if p is Port.EAST else -1
    while y != ty:
        p = Port.NORTH if ty > y else Port.SOUTH
        steps.append((topology.core_at(x, y), p))
        y += 1 if p is Port.NORTH else -1
    return steps


def install_multicast(
    topology: MeshTopology,
    tables: dict[int, RoutingTable],
    label: int,
    source: int,
    destinations: Iterable[int],
) -> None:
    """Add the union of XY paths from ``source`` to every destination."""
    for dst in sorted(set(destinations)):
        if dst == source:
            tables.setdefault(source, RoutingTable()).add(Port.LOCAL, label, [Port.LOCAL])
            continue
        in_port = Port.LOCAL
        for router, out in xy_path(topology, source, dst):
            tables.setdefault(router, RoutingTable()).add(in_port, label, [out])
            in_port = out.opposite
        tables.setdefault(dst, RoutingTable()).add(in_port, label, [Port.LOCAL])


# ---- text format ------------------------------------------------------------


def dump_tables(topology: MeshTopology, tables: Mapping[int, RoutingTable]) -> str:
    """``router_x router_y in_port label -> out_port[,out_port...]`` per line."""
    lines = []
    for core in sorted(tables):
        x, y = topology.coord(core)
        for (in_port, label), outs in sorted(
            tables[core].entries.items(), key=lambda kv: (PORT_ORDER.index(kv[0][0]), kv[0][1])
        ):
            ports = ",".join(p.value for p in PORT_ORDER if p in outs)
            lines.append(f"{x} {y} {in_port.value} {label} -> {ports}")
    return "\n".join(lines) + ("\n" if lines else "")


def load_tables(topology: MeshTopology, text: str) -> dict[int, RoutingTable]:
    tables: dict[int, RoutingTable] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            lhs, rhs = line.split("->")
            xs, ys, port, label = lhs.split()
            core = topology.core_at(int(xs), int(ys))
            topology.coord(core)
            outs = [Port(p.strip()) for p in rhs.split(",")]
            tables.setdefault(core, RoutingTable()).add(Port(port), int(label), outs)
        except (ValueError, KeyError) as exc:
            raise ValueError(f"routing table line {lineno}: {raw!r}: {exc}") from exc
    return tables
