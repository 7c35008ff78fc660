"""Energy and latency from cost counters, and calibration of the per-op table.

Energy is linear in the counters. Latency comes from the simulated critical
path: every task and packet carries the vector of op occurrences along the
longest dependency chain that produced it, so the latency of a run is a
linear function of the cycle table for a fixed schedule. Calibration uses
that to fit cycles, re-simulates, and repeats until the schedule settles.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .core_model import OP_CLASSES, CoreVariant, CostCounters, TaskCost

N_CLASSES = len(OP_CLASSES)
_I = {name: i for i, name in enumerate(OP_CLASSES)}
# critical-path vector: one slot per op class, then fixed stall cycles, then hops
PATH_STALL = N_CLASSES
PATH_HOPS = N_CLASSES + 1
PATH_LEN = N_CLASSES + 2
_LANE_CLASSES = [_I["dmem_read_word"], _I["dmem_write_word"], _I["npe_op"]]

DEFAULT_ENERGY_PJ = {
    "riscv_instr": 5.0,
    "imem_fetch": 3.0,
    "dmem_read_word": 10.0,
    "dmem_write_word": 12.0,
    "npe_op": 0.8,
    "loopctrl_step": 0.4,
    "noc_hop": 2.0,
    "packet_inject": 5.0,
}
DEFAULT_CYCLES = {
    "riscv_instr": 1.0,
    "imem_fetch": 0.0,  # overlapped with execution
    # lane work overlaps the issue of the instruction that triggers it
    "dmem_read_word": 0.25,
    "dmem_write_word": 0.25,
    "npe_op": 0.25,
    "loopctrl_step": 1.0,
    "noc_hop": 1.0,  # per-hop router latency
    "packet_inject": 1.0,
}
DEFAULT_CLOCK_MHZ = 100.0
NPE_TO_DMEM_RATIO = 10.0  # a data-memory word costs at least 10 NPE ops
LOOPCTRL_TO_RISCV_RATIO = 10.0  # a loop step costs at most a tenth of an instruction


class CostTableError(ValueError):
    pass


@dataclass(frozen=True)
class CostTable:
    energy_pj: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_ENERGY_PJ))
    cycles: Mapping[str, float] = field(default_factory=lambda: dict(DEFAULT_CYCLES))
    clock_mhz: float = DEFAULT_CLOCK_MHZ

    def __post_init__(self):
        for name, table in (("energy", self.energy_pj), ("cycles", self.cycles)):
            missing = set(OP_CLASSES) - set(table)
            extra = set(table) - set(OP_CLASSES)
            if missing or extra:
                raise CostTableError(f"{name} table: missing {sorted(missing)}, unknown {sorted(extra)}")

    def violations(self) -> list[str]:
        e = self.energy_pj
        out = []
        for k in OP_CLASSES:
            if not e[k] > 0:
                out.append(f"energy of {k} must be > 0, got {e[k]}")
            if not self.cycles[k] >= 0:
                out.append(f"cycles of {k} must be >= 0, got {self.cycles[k]}")
        if e["dmem_read_word"] < NPE_TO_DMEM_RATIO * e["npe_op"] * (1 - 1e-12):
            out.append("dmem_read_word energy must be >= 10x npe_op energy")
        if e["loopctrl_step"] > e["riscv_instr"] / LOOPCTRL_TO_RISCV_RATIO * (1 + 1e-12):
            out.append("loopctrl_step energy must be <= riscv_instr energy / 10")
        if not self.clock_mhz > 0:
            out.append("clock frequency must be positive")
        return out

    def validate(self) -> "CostTable":
        bad = self.violations()
        if bad:
            raise CostTableError("; ".join(bad))
        return self

    @property
    def energy_vector(self) -> np.ndarray:
        return np.array([self.energy_pj[k] for k in OP_CLASSES], dtype=np.float64)

    @property
    def cycle_vector(self) -> np.ndarray:
        return np.array([self.cycles[k] for k in OP_CLASSES], dtype=np.float64)

    @property
    def hop_latency(self) -> int:
        return int(ceil(self.cycles["noc_hop"] - 1e-9))

    def path_weights(self) -> np.ndarray:
        """Cycles per unit of each critical-path slot."""
        w = np.zeros(PATH_LEN)
        w[:N_CLASSES] = self.cycle_vector
        w[_I["noc_hop"]] = 0.0  # hops live in their own slot
        w[PATH_STALL] = 1.0
        w[PATH_HOPS] = self.hop_latency
        return w

    def replace(self, energy_pj: Mapping[str, float] | None = None, cycles: Mapping[str, float] | None = None,
                clock_mhz: float | None = None) -> "CostTable":
        return CostTable(
            {**self.energy_pj, **(energy_pj or {})},
            {**self.cycles, **(cycles or {})},
            self.clock_mhz if clock_mhz is None else clock_mhz,
        )

    # ---- key=value text ------------------------------------------------------

    def dumps(self) -> str:
        lines = [f"clock_mhz={self.clock_mhz!r}"]
        lines += [f"energy_pj.{k}={float(self.energy_pj[k])!r}" for k in OP_CLASSES]
        lines += [f"cycles.{k}={float(self.cycles[k])!r}" for k in OP_CLASSES]
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> "CostTable":
        energy, cycles = dict(DEFAULT_ENERGY_PJ), dict(DEFAULT_CYCLES)
        clock = DEFAULT_CLOCK_MHZ
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise CostTableError(f"line {lineno}: expected key=value, got {raw!r}")
            key = key.strip()
            try:
                num = float(value)
            except ValueError:
                raise CostTableError(f"line {lineno}: {value.strip()!r} is not a number") from None
            if key == "clock_mhz":
                clock = num
            elif key.startswith("energy_pj.") and key[10:] in energy:
                energy[key[10:]] = num
            elif key.startswith("cycles.") and key[7:] in cycles:
                cycles[key[7:]] = num
            else:
                raise CostTableError(f"line {lineno}: unknown key {key!r}")
        return cls(energy, cycles, clock).validate()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def load(cls, path: str | Path) -> "CostTable":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise CostTableError(f"cannot read cost table {path}: {exc}") from None
        return cls.loads(text)


def occupancy(counters: CostCounters, variant: CoreVariant) -> np.ndarray:
    """Serial occurrences on the core: lane-parallel classes are divided by the NPE count."""
    occ = counters.vector().astype(np.float64)
    if variant.has_npe:
        occ[_LANE_CLASSES] /= variant.npe_count
    occ[_I["noc_hop"]] = 0.0
    return occ


def task_path(cost: TaskCost, variant: CoreVariant) -> np.ndarray:
    p = np.zeros(PATH_LEN)
    p[:N_CLASSES] = occupancy(cost.counters, variant)
    p[PATH_STALL] = cost.stall_cycles
    return p


def task_cycles(cost: TaskCost, variant: CoreVariant, table: CostTable) -> int:
    """Busy cycles of one task, rounded up to whole cycles."""
    c = float(task_path(cost, variant) @ table.path_weights())
    return int(ceil(c - 1e-9)) if c > 0 else 0


@dataclass
class Evaluation:
    energy_uj: float
    latency_us: float
    energy_by_class_uj: dict[str, float]
    energy_by_core_uj: dict[int, float]


def energy_uj(counters: CostCounters, table: CostTable) -> float:
    return float(counters.vector() @ table.energy_vector) * 1e-6


def evaluate(
    counters: CostCounters | Mapping[int, CostCounters],
    table: CostTable,
    latency_cycles: float = 0.0,
) -> Evaluation:
    """energy = sum(count * pJ); latency = critical-path cycles / clock."""
    per_core = dict(counters) if isinstance(counters, Mapping) else {0: counters}
    total = CostCounters()
    for c in per_core.values():
        total.add(c)
    ev = table.energy_vector
    by_class = {k: float(total[k] * ev[i]) * 1e-6 for i, k in enumerate(OP_CLASSES)}
    by_core = {core: energy_uj(c, table) for core, c in sorted(per_core.items())}
    return Evaluation(
        energy_uj=float(total.vector() @ ev) * 1e-6,
        latency_us=float(latency_cycles) / table.clock_mhz,
        energy_by_class_uj=by_class,
        energy_by_core_uj=by_core,
    )


# ---- calibration ------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationTarget:
    variant: str
    energy_uj: float
    time_us: float


# per-inference totals of the benchmark on the three core generations
DEFAULT_TARGETS = (
    CalibrationTarget("V1", 34.0, 7000.0),
    CalibrationTarget("V2", 7.0, 1100.0),
    CalibrationTarget("V3", 3.0, 550.0),
)
SCALAR_ENERGY_V3_UJ = 0.2  # scalar core (instructions + fetches) once the loop controller is in
NPE_ENERGY_V3_UJ = 2.0  # neuron-update arithmetic on the NPEs
SCALAR_CLASSES = ("riscv_instr", "imem_fetch")
NPE_CLASSES = ("npe_op",)
NPE_TARGET_WEIGHT = 0.01
FITTED_CYCLES = ("riscv_instr", "dmem_read_word", "dmem_write_word", "npe_op", "loopctrl_step", "packet_inject")


class WorkloadRun:
    """What calibration needs from one simulated run."""

    total: CostCounters  # summed over cores
    latency_cycles: int
    critical_path: np.ndarray


Workload = Callable[[str, CostTable], WorkloadRun]


@dataclass
class CalibrationResult:
    table: CostTable
    residuals: dict[str, dict[str, float]]  # variant -> relative error of energy and time
    energy_uj: dict[str, float]
    time_us: dict[str, float]
    scalar_share_v3: float | None
    iterations: int
    tolerance: float

    @property
    def worst(self) -> float:
        return max((abs(r) for row in self.residuals.values() for r in row.values()), default=0.0)

    @property
    def feasible(self) -> bool:
        return self.worst <= self.tolerance

    def summary(self) -> str:
        lines = []
        for v in sorted(self.residuals):
            r = self.residuals[v]
            lines.append(
                f"{v}: energy {self.energy_uj[v]:.3f} uJ ({r['energy']:+.1%}), "
                f"time {self.time_us[v]:.1f} us ({r['time']:+.1%})"
            )
        if self.scalar_share_v3 is not None:
            lines.append(f"V3 scalar-core energy share {self.scalar_share_v3:.4f}")
        lines.append(f"worst residual {self.worst:.1%} ({'within' if self.feasible else 'OUTSIDE'} {self.tolerance:.0%})")
        return "\n".join(lines)


class CalibrationError(RuntimeError):
    def __init__(self, message: str, result: CalibrationResult | None = None):
        super().__init__(message)
        self.result = result


def _share(counters: CostCounters, e: np.ndarray, classes: Sequence[str]) -> float:
    v = counters.vector().astype(np.float64)
    idx = [_I[k] for k in classes]
    return float(v[idx] @ e[idx])


def _fit_energy(runs: Mapping[str, WorkloadRun], targets: Sequence[CalibrationTarget], base: CostTable,
                prior: float) -> dict[str, float]:
    from scipy.optimize import minimize

    counts = {t.variant: runs[t.variant].total.vector().astype(np.float64) for t in targets}
    x0 = np.log(base.energy_vector)
    has_v3 = "V3" in counts

    def objective(x: np.ndarray) -> float:
        e = np.exp(x)
        f = 0.0
        for t in targets:
            total = counts[t.variant] @ e * 1e-6
            f += np.log(max(total, 1e-300) / t.energy_uj) ** 2
        if has_v3:
            c = counts["V3"]
            scalar = sum(c[_I[k]] * e[_I[k]] for k in SCALAR_CLASSES) * 1e-6
            npe = sum(c[_I[k]] * e[_I[k]] for k in NPE_CLASSES) * 1e-6
            if scalar > 0:
                f += np.log(scalar / SCALAR_ENERGY_V3_UJ) ** 2
            if npe > 0:
                f += NPE_TARGET_WEIGHT * np.log(npe / NPE_ENERGY_V3_UJ) ** 2
        return float(f + prior * np.sum((x - x0) ** 2))

    log10 = np.log(NPE_TO_DMEM_RATIO)
    cons = [
        {"type": "ineq", "fun": lambda x: x[_I["dmem_read_word"]] - x[_I["npe_op"]] - log10},
        {"type": "ineq", "fun": lambda x: x[_I["riscv_instr"]] - x[_I["loopctrl_step"]] - np.log(LOOPCTRL_TO_RISCV_RATIO)},
    ]
    bounds = [(np.log(1e-3), np.log(1e4))] * N_CLASSES
    res = minimize(objective, x0, method="SLSQP", bounds=bounds, constraints=cons,
                   options={"maxiter": 500, "ftol": 1e-12})
    e = np.exp(res.x)
    # clip tiny constraint slack left by the solver
    e[_I["npe_op"]] = min(e[_I["npe_op"]], e[_I["dmem_read_word"]] / NPE_TO_DMEM_RATIO)
    e[_I["loopctrl_step"]] = min(e[_I["loopctrl_step"]], e[_I["riscv_instr"]] / LOOPCTRL_TO_RISCV_RATIO)
    return {k: float(e[i]) for i, k in enumerate(OP_CLASSES)}


def _fit_cycles(runs: Mapping[str, WorkloadRun], targets: Sequence[CalibrationTarget], table: CostTable,
                anchor: CostTable, prior: float) -> dict[str, float]:
    from scipy.optimize import minimize

    fit = [_I[k] for k in FITTED_CYCLES]
    paths = {t.variant: np.asarray(runs[t.variant].critical_path, dtype=np.float64) for t in targets}
    base_w = table.path_weights()
    y0 = np.log(np.maximum(np.array([anchor.cycles[k] for k in FITTED_CYCLES]), 1e-3))
    start = np.log(np.maximum(np.array([table.cycles[k] for k in FITTED_CYCLES]), 1e-3))

    def latency(y: np.ndarray, p: np.ndarray) -> float:
        w = base_w.copy()
        w[fit] = np.exp(y)
        return float(p @ w)

    def objective(y: np.ndarray) -> float:
        f = 0.0
        for t in targets:
            lat_us = latency(y, paths[t.variant]) / table.clock_mhz
            f += np.log(max(lat_us, 1e-300) / t.time_us) ** 2
        return float(f + prior * np.sum((y - y0) ** 2))

    bounds = [(np.log(1e-3), np.log(64.0))] * len(fit)
    res = minimize(objective, start, method="SLSQP", bounds=bounds, options={"maxiter": 500, "ftol": 1e-12})
    return {k: float(np.exp(res.x[j])) for j, k in enumerate(FITTED_CYCLES)}


def _residuals(runs: Mapping[str, WorkloadRun], targets: Sequence[CalibrationTarget], table: CostTable,
               tolerance: float, iterations: int) -> CalibrationResult:
    energy, time, resid = {}, {}, {}
    for t in targets:
        r = runs[t.variant]
        energy[t.variant] = energy_uj(r.total, table)
        time[t.variant] = r.latency_cycles / table.clock_mhz
        resid[t.variant] = {
            "energy": energy[t.variant] / t.energy_uj - 1.0,
            "time": time[t.variant] / t.time_us - 1.0,
        }
    share = None
    if "V3" in runs:
        c = runs["V3"].total
        total = energy_uj(c, table)
        share = _share(c, table.energy_vector, SCALAR_CLASSES) * 1e-6 / total if total > 0 else 0.0
    return CalibrationResult(table, resid, energy, time, share, iterations, tolerance)


def calibrate(
    targets: Sequence[CalibrationTarget],
    workload: Workload,
    base: CostTable | None = None,
    tolerance: float = 0.25,
    max_iter: int = 8,
    prior: float = 0.01,
    strict: bool = False,
) -> CalibrationResult:
    """Fit the cost table so the workload's simulated totals match ``targets``.

    Energies are fitted once (counters do not depend on timing). Cycle costs
    are fitted on the critical paths of the current schedule, the workload is
    re-simulated with the new table, and this repeats until the latencies
    stop moving. A log-space prior keeps entries near ``base``; the solver is
    deterministic. With ``strict`` an out-of-tolerance fit raises
    CalibrationError carrying the best residuals.
    """
    base = (base or CostTable()).validate()
    targets = list(targets)
    if not targets:
        raise ValueError("no calibration targets")
    variants = [t.variant for t in targets]
    if len(set(variants)) != len(variants):
        raise ValueError("one target per variant")
    runs = {v: workload(v, base) for v in variants}
    if len(targets) == 1:
        # underdetermined: keep the default shape, scale energy and clock
        t = targets[0]
        r = runs[t.variant]
        e_now = energy_uj(r.total, base)
        k_e = t.energy_uj / e_now if e_now > 0 else 1.0
        clock = r.latency_cycles / t.time_us if r.latency_cycles > 0 else base.clock_mhz  # cycles per us
        table = CostTable({k: v * k_e for k, v in base.energy_pj.items()}, dict(base.cycles), clock).validate()
        result = _residuals(runs, targets, table, tolerance, 1)
    else:
        energy = _fit_energy(runs, targets, base, prior)
        table = base.replace(energy_pj=energy)
        best: CalibrationResult | None = None
        lat_prev: dict[str, int] = {}
        for it in range(1, max_iter + 1):
            cycles = _fit_cycles(runs, targets, table, base, prior)
            table = table.replace(cycles=cycles)
            runs = {v: workload(v, table) for v in variants}
            result = _residuals(runs, targets, table, tolerance, it)
            if best is None or result.worst < best.worst - 1e-12:
                best = result
            lat = {v: runs[v].latency_cycles for v in variants}
            if lat_prev and all(abs(lat[v] - lat_prev[v]) <= 1e-3 * max(lat[v], 1) for v in variants):
                break
            lat_prev = lat
        result = best  # type: ignore[assignment]
        result.table.validate()
    if strict and not result.feasible:
        raise CalibrationError(f"calibration residuals exceed {tolerance:.0%}:\n{result.summary()}", result)
    return result
