"""Benchmark plumbing: config, stimulus, report, variant comparison and sweeps."""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np
import yaml

from .core_model import OP_CLASSES, CostCounters, DEFAULT_DMEM_WORDS
from .cost_model import (
    DEFAULT_TARGETS,
    SCALAR_CLASSES,
    CalibrationResult,
    CalibrationTarget,
    CostTable,
    calibrate,
    evaluate,
)
from .mapping import ONE_LAYER_PER_CORE, POLICIES
from .netmodel import (
    BINARY,
    DEPTH_FIRST,
    GRADED,
    STATEFUL,
    ConfigError,
    NetworkSpec,
    default_benchmark_network,
    load_network,
    load_tensor,
)
from .noc import build_topology
from .simulator import SimResult, Simulator

REPORT_SCHEMA = "neuromesh.report/1"
SWEEP_SCHEMA = "neuromesh.sweep/1"
CONFIG_DIR_ENV = "NEUROMESH_CONFIG_DIR"
DEFAULT_CONFIG_NAME = "default.yaml"
CONSISTENCY_RTOL = 1e-9

VARIANTS = ("V1", "V2", "V3")
WEIGHT_SCHEMES = ("bf16", "int8", "int4")


class ReportError(AssertionError):
    """A report whose totals disagree with its breakdowns."""


@dataclass(frozen=True)
class BenchmarkConfig:
    network: str | None = None  # network description file; None selects the default benchmark
    network_seed: int = 0
    policy: str = ONE_LAYER_PER_CORE
    mesh: tuple[int, int] = (2, 2)
    variant: str = "V3"
    group_size: int = 1
    spike_mode: str | None = None  # None keeps the network's own modes
    weight_scheme: str | None = None
    conv_style: str | None = None
    cost_table: str | None = None
    calibrate: bool = False
    stimulus: str | None = None  # tensor file; otherwise generated from seed and density
    seed: int = 1
    density: float = 0.1
    repetitions: int = 1
    capacity_words: int = DEFAULT_DMEM_WORDS

    def __post_init__(self):
        object.__setattr__(self, "variant", str(self.variant).upper())
        object.__setattr__(self, "mesh", tuple(int(d) for d in self.mesh))
        if self.conv_style is not None:
            object.__setattr__(self, "conv_style", self.conv_style.replace("-", "_"))
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown mapping policy {self.policy!r}")
        if len(self.mesh) != 2 or min(self.mesh) < 1:
            raise ConfigError(f"mesh must be two positive dims, got {self.mesh}")
        if self.group_size < 1:
            raise ConfigError("group size must be >= 1")
        if self.spike_mode not in (None, GRADED, BINARY):
            raise ConfigError(f"unknown spike mode {self.spike_mode!r}")
        if self.weight_scheme not in (None, *WEIGHT_SCHEMES):
            raise ConfigError(f"unknown weight scheme {self.weight_scheme!r}")
        if self.conv_style not in (None, STATEFUL, DEPTH_FIRST):
            raise ConfigError(f"unknown conv style {self.conv_style!r}")
        # density 0 is the idle stimulus
        if not 0.0 <= self.density <= 1.0:
            raise ConfigError(f"density must lie in [0, 1], got {self.density}")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.capacity_words < 1:
            raise ConfigError("capacity must be positive")

    def with_(self, **kw) -> "BenchmarkConfig":
        return replace(self, **kw)

    def as_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["mesh"] = list(self.mesh)
        return d


_CONFIG_KEYS = {f.name for f in fields(BenchmarkConfig)}


def config_from_dict(doc: dict, base_dir: Path | None = None) -> BenchmarkConfig:
    if not isinstance(doc, dict):
        raise ConfigError("benchmark config must be a mapping")
    doc = dict(doc.get("benchmark", doc))
    unknown = set(doc) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for key in ("network", "cost_table", "stimulus"):
        if doc.get(key) is not None and base_dir is not None:
            p = Path(doc[key])
            doc[key] = str(p if p.is_absolute() else base_dir / p)
    try:
        return BenchmarkConfig(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad benchmark config: {exc}") from None


def load_config(path: str | Path) -> BenchmarkConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return config_from_dict(doc or {}, path.parent)


def default_config() -> BenchmarkConfig:
    """The config in $NEUROMESH_CONFIG_DIR/default.yaml when present, else built-in defaults."""
    d = os.environ.get(CONFIG_DIR_ENV)
    if d:
        p = Path(d) / DEFAULT_CONFIG_NAME
        if p.is_file():
            return load_config(p)
    return BenchmarkConfig()


# ---- inputs -----------------------------------------------------------------------


def base_network(cfg: BenchmarkConfig) -> NetworkSpec:
    if cfg.network is None:
        return default_benchmark_network(cfg.network_seed)
    return load_network(cfg.network)


def build_network(cfg: BenchmarkConfig) -> NetworkSpec:
    return base_network(cfg).with_overrides(
        spike_mode=cfg.spike_mode, weight_scheme=cfg.weight_scheme, conv_style=cfg.conv_style
    )


def random_stimulus(size: int, density: float, seed: int) -> np.ndarray:
    """Exactly round(density * size) non-zero inputs, values uniform in (0, 1]."""
    rng = np.random.default_rng(seed)
    x = np.zeros(size)
    n = int(round(density * size))
    idx = rng.choice(size, n, replace=False)
    x[np.sort(idx)] = 1.0 - rng.random(n)
    return x


def stimuli(cfg: BenchmarkConfig, net: NetworkSpec) -> list[np.ndarray]:
    """One input vector per repetition."""
    if cfg.stimulus is not None:
        try:
            data = load_tensor(cfg.stimulus).astype(np.float64)
        except OSError as exc:
            raise ConfigError(f"cannot read stimulus {cfg.stimulus}: {exc}") from None
        if data.size == net.input_size:
            return [data.reshape(-1)] * cfg.repetitions
        if data.size == cfg.repetitions * net.input_size:
            return list(data.reshape(cfg.repetitions, -1))
        raise ConfigError(
            f"stimulus has {data.size} values; need {net.input_size} or {cfg.repetitions} x {net.input_size}"
        )
    return [random_stimulus(net.input_size, cfg.density, cfg.seed + r) for r in range(cfg.repetitions)]


# ---- cost table -------------------------------------------------------------------


def calibration_workload(net: NetworkSpec, inputs: np.ndarray, mesh: tuple[int, int] = (2, 2),
                         policy: str = ONE_LAYER_PER_CORE, group_size: int = 1):
    """Workload callable for ``calibrate``: one simulated inference per (variant, table)."""
    topo = build_topology(*mesh)

    def run(variant: str, table: CostTable) -> SimResult:
        return Simulator(net, variant, table, topo=topo, policy=policy, group_size=group_size).run(inputs)

    return run


@lru_cache(maxsize=16)
def _calibrated(reference: BenchmarkConfig, targets: tuple[CalibrationTarget, ...]) -> CalibrationResult:
    net = build_network(reference)
    base = CostTable.load(reference.cost_table) if reference.cost_table else None
    workload = calibration_workload(net, stimuli(reference, net)[0], reference.mesh, reference.policy)
    return calibrate(targets, workload, base=base)


def calibrate_for(cfg: BenchmarkConfig, targets: Sequence[CalibrationTarget] = DEFAULT_TARGETS) -> CalibrationResult:
    """Calibrate on the config's network and stimulus as written (group 1, no overrides).

    Spike mode, weight scheme and grouping are the knobs being measured, so
    every point of a sweep shares the table of the unmodified reference run.
    """
    reference = cfg.with_(variant="V3", spike_mode=None, weight_scheme=None, conv_style=None, group_size=1,
                          calibrate=False, repetitions=1)
    return _calibrated(reference, tuple(targets))


def resolve_table(cfg: BenchmarkConfig) -> CostTable:
    if cfg.calibrate:
        return calibrate_for(cfg).table
    if cfg.cost_table:
        return CostTable.load(cfg.cost_table)
    return CostTable()


# ---- report -----------------------------------------------------------------------


def _counters_dict(c: CostCounters) -> dict[str, int]:
    return {k: int(c[k]) for k in OP_CLASSES}


@dataclass
class SimReport:
    config: dict[str, Any]
    cost_table: dict[str, Any]
    repetitions: int
    energy_uj: float
    latency_us: float
    latency_cycles: int
    energy_by_class_uj: dict[str, float]
    energy_by_core_uj: dict[str, float]
    counters_by_class: dict[str, int]
    counters_by_core: dict[str, dict[str, int]]
    input_events: int
    events_delivered: dict[str, int]
    events_emitted: dict[str, int]
    packets_routed: int
    noc_hops: int
    synaptic_ops: int
    operation_density: float
    peak_words_by_core: dict[str, int]
    activation_peak_words: int
    stateful_activation_words: int
    scalar_energy_share: float
    output_digests: list[str] = field(default_factory=list)
    trace_digests: list[str] = field(default_factory=list)
    schema: str = REPORT_SCHEMA

    @property
    def energy_per_inference_uj(self) -> float:
        return self.energy_uj / self.repetitions

    @property
    def latency_per_inference_us(self) -> float:
        return self.latency_us / self.repetitions

    def check(self) -> "SimReport":
        """Totals must equal the sums of their breakdowns."""

        def close(a: float, b: float) -> bool:
            return abs(a - b) <= CONSISTENCY_RTOL * max(abs(a), abs(b), 1e-12)

        problems = []
        if not close(self.energy_uj, sum(self.energy_by_class_uj.values())):
            problems.append("energy != sum over op classes")
        if not close(self.energy_uj, sum(self.energy_by_core_uj.values())):
            problems.append("energy != sum over cores")
        for k, n in self.counters_by_class.items():
            if n != sum(c[k] for c in self.counters_by_core.values()):
                problems.append(f"{k} count != sum over cores")
        if self.noc_hops != self.counters_by_class["noc_hop"]:
            problems.append("hop count disagrees with the noc_hop counter")
        if problems:
            raise ReportError("; ".join(problems))
        return self

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["energy_per_inference_uj"] = self.energy_per_inference_uj
        d["latency_per_inference_us"] = self.latency_per_inference_us
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    @classmethod
    def loads(cls, text: str) -> "SimReport":
        d = json.loads(text)
        if d.get("schema") != REPORT_SCHEMA:
            raise ConfigError(f"unsupported report schema {d.get('schema')!r}")
        d.pop("energy_per_inference_uj", None)
        d.pop("latency_per_inference_us", None)
        return cls(**d)

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps())
        return path


def _digest(arrays: dict[int, np.ndarray]) -> str:
    import hashlib

    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(np.ascontiguousarray(arrays[k], dtype="<f8").tobytes())
    return h.hexdigest()


def build_report(cfg: BenchmarkConfig, table: CostTable, results: Sequence[SimResult]) -> SimReport:
    per_core: dict[int, CostCounters] = {}
    delivered: dict[str, int] = {}
    emitted: dict[str, int] = {}
    peak: dict[str, int] = {}
    for r in results:
        for core, c in r.counters.items():
            per_core.setdefault(core, CostCounters()).add(c)
        for layer, n in r.events_in.items():
            delivered[str(layer)] = delivered.get(str(layer), 0) + n
        for layer, n in r.events_out.items():
            emitted[str(layer)] = emitted.get(str(layer), 0) + n
        for core, w in r.peak_words.items():
            peak[str(core)] = max(peak.get(str(core), 0), int(w))
    latency = sum(r.latency_cycles for r in results)
    ev = evaluate(per_core, table, latency)
    total = CostCounters()
    for c in per_core.values():
        total.add(c)
    n_delivered = sum(delivered.values())
    synaptic = sum(r.synaptic_ops for r in results)
    scalar = sum(ev.energy_by_class_uj[k] for k in SCALAR_CLASSES)
    return SimReport(
        config=cfg.as_dict(),
        cost_table={
            "clock_mhz": table.clock_mhz,
            "energy_pj": dict(table.energy_pj),
            "cycles": dict(table.cycles),
        },
        repetitions=len(results),
        energy_uj=ev.energy_uj,
        latency_us=ev.latency_us,
        latency_cycles=int(latency),
        energy_by_class_uj=ev.energy_by_class_uj,
        energy_by_core_uj={str(k): v for k, v in ev.energy_by_core_uj.items()},
        counters_by_class=_counters_dict(total),
        counters_by_core={str(k): _counters_dict(c) for k, c in sorted(per_core.items())},
        input_events=sum(r.input_events for r in results),
        events_delivered=delivered,
        events_emitted=emitted,
        packets_routed=sum(r.packets_routed for r in results),
        noc_hops=sum(r.noc_hops for r in results),
        synaptic_ops=synaptic,
        operation_density=synaptic / n_delivered if n_delivered else 0.0,
        peak_words_by_core=peak,
        activation_peak_words=max(r.activation_peak_words for r in results),
        stateful_activation_words=max(r.stateful_activation_words for r in results),
        scalar_energy_share=scalar / ev.energy_uj if ev.energy_uj > 0 else 0.0,
        output_digests=[_digest(r.out) for r in results],
        trace_digests=[r.trace_digest for r in results],
    ).check()


# ---- operations -------------------------------------------------------------------


def simulate_config(cfg: BenchmarkConfig, table: CostTable | None = None) -> tuple[CostTable, list[SimResult]]:
    table = table or resolve_table(cfg)
    net = build_network(cfg)
    sim = Simulator(net, cfg.variant, table, topo=build_topology(*cfg.mesh), group_size=cfg.group_size,
                    policy=cfg.policy, capacity_words=cfg.capacity_words)
    return table, [sim.run(x) for x in stimuli(cfg, net)]


def run_benchmark(cfg: BenchmarkConfig, table: CostTable | None = None) -> SimReport:
    """load net -> map -> routing tables -> stimulus -> simulate -> evaluate -> report."""
    table, results = simulate_config(cfg, table)
    return build_report(cfg, table, results)


@dataclass
class ComparisonRow:
    label: str
    energy_uj: float
    latency_us: float
    energy_gain: float  # first row energy / this row energy
    latency_gain: float


def _variant_config(cfg: BenchmarkConfig, spec: str | dict) -> tuple[str, BenchmarkConfig]:
    if isinstance(spec, str):
        return spec.upper(), cfg.with_(variant=spec)
    label = spec.get("label") or ",".join(f"{k}={v}" for k, v in sorted(spec.items()))
    return label, cfg.with_(**{k: v for k, v in spec.items() if k != "label"})


def compare_variants(cfg: BenchmarkConfig, variants: Sequence[str | dict],
                     table: CostTable | None = None) -> list[ComparisonRow]:
    """One row per variant (a tag, or a dict of config overrides), ratios against the first row."""
    if len(variants) < 2:
        raise ConfigError("comparison needs at least two variants")
    table = table or resolve_table(cfg)
    rows: list[ComparisonRow] = []
    for spec in variants:
        label, c = _variant_config(cfg, spec)
        rep = run_benchmark(c.with_(calibrate=False), table)
        e, t = rep.energy_per_inference_uj, rep.latency_per_inference_us
        e0 = rows[0].energy_uj if rows else e
        t0 = rows[0].latency_us if rows else t
        rows.append(ComparisonRow(label, e, t, e0 / e if e > 0 else float("nan"), t0 / t if t > 0 else float("nan")))
    return rows


def format_comparison(rows: Iterable[ComparisonRow]) -> str:
    out = [f"{'run':<24}{'energy uJ':>12}{'latency us':>12}{'E gain':>9}{'T gain':>9}"]
    for r in rows:
        out.append(f"{r.label:<24}{r.energy_uj:>12.4f}{r.latency_us:>12.2f}{r.energy_gain:>9.3f}{r.latency_gain:>9.3f}")
    return "\n".join(out)


SWEEP_FIELDS = ("schema", "group_size", "spike_mode", "weight_scheme", "energy_uj", "latency_us",
                "synaptic_ops", "noc_hops", "operation_density")


def sweep_optimizations(
    cfg: BenchmarkConfig,
    groups: Sequence[int] = (1, 4),
    spikes: Sequence[str] = (GRADED, BINARY),
    weights: Sequence[str] = WEIGHT_SCHEMES,
    out_dir: str | Path | None = None,
    table: CostTable | None = None,
) -> list[SimReport]:
    """One report per (group, spike mode, weight scheme); all share one cost table."""
    table = table or resolve_table(cfg)
    reports = []
    for g in groups:
        for s in spikes:
            for w in weights:
                c = cfg.with_(group_size=g, spike_mode=s, weight_scheme=w, calibrate=False)
                rep = run_benchmark(c, table)
                reports.append(rep)
                if out_dir is not None:
                    rep.save(Path(out_dir) / f"report_g{g}_{s}_{w}.json")
    if out_dir is not None:
        (Path(out_dir) / "sweep.csv").write_text(sweep_csv(reports))
    return reports


def sweep_csv(reports: Iterable[SimReport]) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SWEEP_FIELDS)
    for r in reports:
        wr.writerow([
            SWEEP_SCHEMA,
            r.config["group_size"],
            r.config["spike_mode"] or GRADED,
            r.config["weight_scheme"] or "bf16",
            repr(r.energy_per_inference_uj),
            repr(r.latency_per_inference_us),
            r.synaptic_ops,
            r.noc_hops,
            repr(r.operation_density),
        ])
    return buf.getvalue()
