"""Hard attention: find a region of interest on a pooled frame, classify the crop.

Pre- and post-processing (pooling, argmax, cropping) run on the scalar core
of core 0 and are charged there; the two networks run on the mesh like any
other workload. The baseline runs the classifier architecture on the full
frame under the same cost table.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core_model import CoreVariant, CostCounters, TaskCost
from ..cost_model import CostTable, energy_uj, task_cycles
from ..mapping import BALANCED_SPLIT
from ..netmodel import (
    ConfigError,
    LayerSpec,
    NetworkSpec,
    QuantScheme,
    bf16,
    random_weights,
)
from ..noc import build_topology

POOL_EVENT_INSTR = 4  # read event, cell address, accumulate
POOL_CELL_INSTR = 3  # scale and store one pooled value
ARGMAX_INSTR = 2  # compare and select, per detector output
CROP_EVENT_INSTR = 3  # bounds test and re-address, per event


@dataclass(frozen=True)
class AttentionConfig:
    frame_shape: tuple[int, int] = (64, 64)
    downsample: int = 8
    roi: int = 16
    grid: int = 4  # RoI cells per side; the detector has grid * grid outputs
    detector: NetworkSpec | None = None
    classifier: NetworkSpec | None = None
    baseline: NetworkSpec | None = None
    mesh: tuple[int, int] = (4, 4)
    group_size: int = 1

    def __post_init__(self):
        h, w = self.frame_shape
        if h % self.downsample or w % self.downsample:
            raise ConfigError("frame size must be a multiple of the downsample factor")
        if self.roi > min(h, w):
            raise ConfigError("RoI larger than the frame")
        if self.detector is not None and self.detector.layer_size(self.detector.n_layers) != self.grid**2:
            raise ConfigError(
                f"detector emits {self.detector.layer_size(self.detector.n_layers)} values, "
                f"need one per RoI cell ({self.grid**2})"
            )

    @property
    def pooled_shape(self) -> tuple[int, int]:
        return self.frame_shape[0] // self.downsample, self.frame_shape[1] // self.downsample


def pooling_detector(cfg: AttentionConfig) -> NetworkSpec:
    """Single dense layer summing the pooled pixels of each RoI cell."""
    ph, pw = cfg.pooled_shape
    cells = cfg.grid * cfg.grid
    w = np.zeros((ph * pw, cells))
    for y in range(ph):
        for x in range(pw):
            cy, cx = y * cfg.grid // ph, x * cfg.grid // pw
            w[y * pw + x, cy * cfg.grid + cx] = 1.0
    layer = LayerSpec.dense(ph * pw, cells)
    return NetworkSpec("detector", (ph * pw,), (layer,), (w,))


def dense_classifier(n_in: int, hidden: tuple[int, ...] = (64,), n_out: int = 10, seed: int = 0,
                     name: str = "classifier") -> NetworkSpec:
    rng = np.random.default_rng(seed)
    sizes = [n_in, *hidden, n_out]
    layers, weights = [], []
    for a, b in zip(sizes[:-1], sizes[1:]):
        layers.append(LayerSpec.dense(a, b, weight_scheme=QuantScheme("bf16")))
        weights.append(random_weights((a, b), a, rng))
    return NetworkSpec(name, (n_in,), tuple(layers), tuple(weights))


def default_attention_config(seed: int = 0) -> AttentionConfig:
    base = AttentionConfig()
    return AttentionConfig(
        detector=pooling_detector(base),
        classifier=dense_classifier(base.roi * base.roi, seed=seed),
        baseline=dense_classifier(base.frame_shape[0] * base.frame_shape[1], seed=seed, name="baseline"),
    )


def average_pool(frame: np.ndarray, factor: int) -> np.ndarray:
    h, w = frame.shape
    blocks = frame.reshape(h // factor, factor, w // factor, factor)
    return bf16(blocks.sum(axis=(1, 3)) / (factor * factor)).astype(np.float64)


def roi_window(cell: int, cfg: AttentionConfig) -> tuple[int, int]:
    """Top-left corner of the RoI centred on a grid cell, clamped to the frame."""
    h, w = cfg.frame_shape
    cy, cx = divmod(cell, cfg.grid)
    centre_y = (2 * cy + 1) * h // (2 * cfg.grid)
    centre_x = (2 * cx + 1) * w // (2 * cfg.grid)
    y0 = min(max(centre_y - cfg.roi // 2, 0), h - cfg.roi)
    x0 = min(max(centre_x - cfg.roi // 2, 0), w - cfg.roi)
    return y0, x0


@dataclass
class StageReport:
    name: str
    energy_uj: float
    latency_cycles: int
    counters: CostCounters


@dataclass
class PipelineReport:
    name: str
    stages: list[StageReport] = field(default_factory=list)
    roi: tuple[int, int] | None = None
    prediction: int | None = None

    @property
    def energy_uj(self) -> float:
        return sum(s.energy_uj for s in self.stages)

    @property
    def latency_cycles(self) -> int:
        return sum(s.latency_cycles for s in self.stages)

    def latency_us(self, table: CostTable) -> float:
        return self.latency_cycles / table.clock_mhz

    @property
    def counters(self) -> CostCounters:
        c = CostCounters()
        for s in self.stages:
            c.add(s.counters)
        return c


def _scalar_stage(name: str, instr: int, reads: int, writes: int, variant: CoreVariant, table: CostTable) -> StageReport:
    c = CostCounters()
    if instr:
        c.account("riscv_instr", instr).account("imem_fetch", instr)
    c.account("dmem_read_word", reads).account("dmem_write_word", writes)
    # scalar code: memory words are not spread over NPE lanes
    cycles = task_cycles(TaskCost(c), CoreVariant.named("V1"), table)
    return StageReport(name, energy_uj(c, table), cycles, c)


def _net_stage(name: str, net: NetworkSpec, x: np.ndarray, variant: CoreVariant, table: CostTable,
               cfg: AttentionConfig) -> tuple[StageReport, np.ndarray]:
    from ..simulator import Simulator

    sim = Simulator(net, variant, table, topo=build_topology(*cfg.mesh), group_size=cfg.group_size,
                    policy=BALANCED_SPLIT)
    r = sim.run(x)
    total = r.total
    return StageReport(name, energy_uj(total, table), r.latency_cycles, total), r.out[net.n_layers]


def _classify(report: PipelineReport, name: str, net: NetworkSpec, x: np.ndarray, variant: CoreVariant,
              table: CostTable, cfg: AttentionConfig) -> None:
    stage, out = _net_stage(name, net, x, variant, table, cfg)
    report.stages.append(stage)
    if np.any(out):
        report.prediction = int(np.argmax(out))


def run_hard_attention(
    frame: np.ndarray,
    cfg: AttentionConfig | None = None,
    table: CostTable | None = None,
    variant: CoreVariant | str = "V3",
) -> tuple[PipelineReport, PipelineReport]:
    """Returns (attention pipeline, full-frame baseline) reports."""
    cfg = cfg or default_attention_config()
    if cfg.detector is None or cfg.classifier is None or cfg.baseline is None:
        raise ConfigError("attention config needs detector, classifier and baseline networks")
    table = table or CostTable()
    variant = variant if isinstance(variant, CoreVariant) else CoreVariant.named(variant)
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != cfg.frame_shape:
        raise ConfigError(f"frame shape {frame.shape} != configured {cfg.frame_shape}")
    if cfg.classifier.input_size != cfg.roi * cfg.roi:
        raise ConfigError("classifier input must match the RoI size")
    if cfg.baseline.input_size != frame.size:
        raise ConfigError("baseline input must match the frame size")

    n_events = int(np.count_nonzero(frame))
    att = PipelineReport("attention")
    base = PipelineReport("baseline")
    if n_events:
        _classify(base, "classifier", cfg.baseline, frame.reshape(-1), variant, table, cfg)

    pooled = average_pool(frame, cfg.downsample)
    cells = int(np.count_nonzero(pooled))
    att.stages.append(
        _scalar_stage("downsample", POOL_EVENT_INSTR * n_events + POOL_CELL_INSTR * cells,
                      n_events + cells, n_events + cells, variant, table)
    )
    if not n_events:
        return att, base
    det_stage, scores = _net_stage("detector", cfg.detector, pooled.reshape(-1), variant, table, cfg)
    att.stages.append(det_stage)
    n_scores = cfg.grid * cfg.grid
    att.stages.append(_scalar_stage("argmax", ARGMAX_INSTR * n_scores, n_scores, 0, variant, table))
    if not np.any(scores):
        return att, base
    cell = int(np.argmax(scores))  # lowest index wins ties
    y0, x0 = roi_window(cell, cfg)
    att.roi = (y0, x0)
    crop = frame[y0 : y0 + cfg.roi, x0 : x0 + cfg.roi]
    kept = int(np.count_nonzero(crop))
    att.stages.append(_scalar_stage("crop", CROP_EVENT_INSTR * n_events, n_events, kept, variant, table))
    if kept:
        _classify(att, "classifier", cfg.classifier, crop.reshape(-1), variant, table, cfg)
    return att, base


def gesture_frame(seed: int = 0, shape: tuple[int, int] = (64, 64), events: int = 600,
                  focus: float = 0.8, blob: int = 16) -> np.ndarray:
    """Toy event frame: most events inside one blob, the rest uniform noise."""
    rng = np.random.default_rng(seed)
    h, w = shape
    frame = np.zeros(shape)
    cy, cx = rng.integers(0, h - blob + 1), rng.integers(0, w - blob + 1)
    n_focus = int(round(events * focus))
    ys = np.concatenate([rng.integers(cy, cy + blob, n_focus), rng.integers(0, h, events - n_focus)])
    xs = np.concatenate([rng.integers(cx, cx + blob, n_focus), rng.integers(0, w, events - n_focus)])
    np.add.at(frame, (ys, xs), 1.0)
    return frame
