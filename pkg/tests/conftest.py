from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from neuromesh import kernels
from neuromesh.harness import BenchmarkConfig, calibrate_for

settings.register_profile("repo", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

KERNEL_NAMES = ("round_bf16", "accumulate_row", "accumulate_group", "conv_pixel", "scatter_conv_event")


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = kernels.BACKENDS[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(kernels, name, getattr(mod, name))
    return request.param


@pytest.fixture(scope="session")
def calibrated():
    return calibrate_for(BenchmarkConfig())


@pytest.fixture(scope="session")
def calibrated_table(calibrated):
    return calibrated.table


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")
    config._criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    detail = dict(item.user_properties).get("detail", "")
    item.config._criteria[mark.args[0]] = ("PASS" if rep.passed else "FAIL", item.name, detail)


def pytest_terminal_summary(terminalreporter, config):
    results = getattr(config, "_criteria", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        status, name, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {name}  {detail}")
