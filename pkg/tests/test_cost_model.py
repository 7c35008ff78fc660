from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from neuromesh.core_model import OP_CLASSES, CoreVariant, CostCounters, TaskCost
from neuromesh.cost_model import (
    DEFAULT_TARGETS,
    CalibrationError,
    CalibrationTarget,
    CostTable,
    CostTableError,
    calibrate,
    energy_uj,
    evaluate,
    task_cycles,
)
from neuromesh.harness import calibration_workload, random_stimulus
from neuromesh.netmodel import default_benchmark_network
from neuromesh.simulator import simulate


def test_idle_counters():
    ev = evaluate(CostCounters(), CostTable(), 0)
    assert ev.energy_uj == 0.0 and ev.latency_us == 0.0


def test_linearity():
    t = CostTable().replace(energy_pj={"noc_hop": 2.0})
    assert evaluate(CostCounters({"noc_hop": 1000}), t).energy_uj == pytest.approx(2e-3)


def test_total_is_hand_summed(rng):
    net = default_benchmark_network()
    r = simulate(net, random_stimulus(256, 0.1, 1), "V2")
    t = CostTable()
    ev = evaluate(r.counters, t, r.latency_cycles)
    hand = sum(r.total[k] * t.energy_pj[k] for k in OP_CLASSES) * 1e-6
    assert ev.energy_uj == pytest.approx(hand, rel=1e-12)
    assert sum(ev.energy_by_class_uj.values()) == pytest.approx(hand, rel=1e-12)
    assert sum(ev.energy_by_core_uj.values()) == pytest.approx(hand, rel=1e-12)
    assert ev.latency_us == r.latency_cycles / t.clock_mhz


def test_default_table_meets_constraints():
    t = CostTable()
    assert t.violations() == []
    assert t.energy_pj["dmem_read_word"] >= 10 * t.energy_pj["npe_op"]
    assert t.energy_pj["loopctrl_step"] <= t.energy_pj["riscv_instr"] / 10


@pytest.mark.parametrize(
    "energy",
    [{"npe_op": 2.0}, {"loopctrl_step": 1.0}, {"riscv_instr": 0.0}],
)
def test_constraint_violations_rejected(energy):
    with pytest.raises(CostTableError):
        CostTable().replace(energy_pj=energy).validate()


@given(st.lists(st.floats(0.01, 100), min_size=8, max_size=8), st.floats(1, 1000))
def test_table_text_round_trip(energies, clock):
    e = dict(zip(OP_CLASSES, energies))
    e["dmem_read_word"] = max(e["dmem_read_word"], 10 * e["npe_op"])
    e["loopctrl_step"] = min(e["loopctrl_step"], e["riscv_instr"] / 10)
    t = CostTable(e, dict(CostTable().cycles), clock)
    again = CostTable.loads(t.dumps())
    assert again == t and again.dumps() == t.dumps()


def test_table_text_errors():
    with pytest.raises(CostTableError):
        CostTable.loads("energy_pj.warp_drive=1\n")
    with pytest.raises(CostTableError):
        CostTable.load("/nonexistent/table.txt")


def test_task_cycles_divide_lane_work():
    c = CostCounters({"dmem_read_word": 80, "riscv_instr": 3})
    t = CostTable()
    v1, v3 = CoreVariant.named("V1"), CoreVariant.named("V3")
    assert task_cycles(TaskCost(c), v1, t) == int(np.ceil(80 * 0.25 + 3))
    assert task_cycles(TaskCost(c, 4), v3, t) == int(np.ceil(80 / 8 * 0.25 + 3 + 4))
    assert task_cycles(TaskCost(), v3, t) == 0


@pytest.fixture(scope="module")
def workload():
    return calibration_workload(default_benchmark_network(), random_stimulus(256, 0.1, 1))


def test_single_target_scales_default_table(workload):
    res = calibrate([CalibrationTarget("V2", 7.0, 1100.0)], workload)
    base = CostTable()
    ratios = {k: res.table.energy_pj[k] / base.energy_pj[k] for k in OP_CLASSES}
    assert max(ratios.values()) == pytest.approx(min(ratios.values()))
    assert res.energy_uj["V2"] == pytest.approx(7.0, rel=1e-9)
    assert res.time_us["V2"] == pytest.approx(1100.0, rel=1e-9)


def test_three_targets_within_tolerance(calibrated):
    assert calibrated.feasible
    for t in DEFAULT_TARGETS:
        assert abs(calibrated.residuals[t.variant]["energy"]) <= 0.25
        assert abs(calibrated.residuals[t.variant]["time"]) <= 0.25
    assert calibrated.table.violations() == []


def test_dmem_sensitivity(calibrated_table, workload):
    r = workload("V1", calibrated_table)
    e0 = energy_uj(r.total, calibrated_table)
    share = r.total["dmem_read_word"] * calibrated_table.energy_pj["dmem_read_word"] * 1e-6 / e0
    bumped = calibrated_table.replace(
        energy_pj={"dmem_read_word": 2 * calibrated_table.energy_pj["dmem_read_word"]}
    )
    assert energy_uj(workload("V1", bumped).total, bumped) / e0 == pytest.approx(1 + share, rel=1e-9)


def test_strict_calibration_reports_residuals(workload):
    impossible = [CalibrationTarget("V1", 1.0, 1.0), CalibrationTarget("V3", 1000.0, 1e6)]
    with pytest.raises(CalibrationError) as err:
        calibrate(impossible, workload, strict=True, max_iter=2)
    assert err.value.result is not None and err.value.result.worst > 0.25


def test_calibration_input_validation(workload):
    with pytest.raises(ValueError):
        calibrate([], workload)
    with pytest.raises(ValueError):
        calibrate([CalibrationTarget("V1", 1, 1), CalibrationTarget("V1", 2, 2)], workload)
