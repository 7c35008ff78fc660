"""Event-driven simulator of a tiny-core neuromorphic mesh with a calibratable cost model."""

from .core_model import CoreVariant, CostCounters
from .cost_model import CostTable, calibrate, evaluate
from .harness import BenchmarkConfig, SimReport, compare_variants, run_benchmark, sweep_optimizations
from .kernels import BACKEND
from .netmodel import LayerSpec, NetworkSpec
from .simulator import SimResult, Simulator, simulate

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "BenchmarkConfig",
    "CoreVariant",
    "CostCounters",
    "CostTable",
    "LayerSpec",
    "NetworkSpec",
    "SimReport",
    "SimResult",
    "Simulator",
    "calibrate",
    "compare_variants",
    "evaluate",
    "run_benchmark",
    "simulate",
    "sweep_optimizations",
]
