"""Shared fixtures plus the acceptance-criteria terminal summary.

Tests marked ``@pytest.mark.acceptance(n, "label")`` each verify one
numbered acceptance criterion; after the run a one-line PASS/FAIL verdict
per criterion is printed so the gate can be read at a glance.
"""

import numpy as np
import pytest

from spsd_vit.model import NetworkConfig, VisionTransformer

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(number, label): marks a test as one acceptance criterion",
    )
    config.addinivalue_line("markers", "slow: long-running end-to-end test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, label = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"label": label, "status": "PASS"})
    if report.skipped:
        entry["status"] = "SKIP"
    elif report.failed:
        entry["status"] = "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        entry = _ACCEPTANCE[number]
        line = f"[{entry['status']}] criterion {number}: {entry['label']}"
        markup = {"PASS": {"green": True},
                  "FAIL": {"red": True}}.get(entry["status"], {"yellow": True})
        terminalreporter.write_line(line, **markup)


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


@pytest.fixture
def tiny_network_config():
    return NetworkConfig(num_classes=3, image_size=16, patch_size=8,
                         num_blocks=2, dim=8, num_heads=2, mlp_ratio=2.0)


@pytest.fixture
def tiny_model(tiny_network_config):
    return VisionTransformer(tiny_network_config, seed=7)
