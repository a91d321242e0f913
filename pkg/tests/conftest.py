import dataclasses
import hashlib

import numpy as np
import pytest

from promptmesh.core import FederationConfig


def digest(arr: np.ndarray) -> str:
    """Stable content hash of an array, for before/after purity checks."""
    return hashlib.sha256(np.ascontiguousarray(arr).tobytes()).hexdigest()


@pytest.fixture
def desk_cfg() -> FederationConfig:
    return FederationConfig()


@pytest.fixture
def tiny_cfg() -> FederationConfig:
    # small enough that protocol-level tests run in milliseconds
    return dataclasses.replace(
        FederationConfig(),
        num_clients=4,
        classes_per_client=2,
        shots_per_class=4,
        rounds=5,
        recipients_per_round=2,
        prompt_dim=6,
        embed_dim=8,
        image_dim=12,
        eval_every=2,
        test_shots_per_class=5,
    )


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, title): ties a test to one acceptance criterion"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    """Print one PASS/FAIL line per acceptance criterion as results come in."""
    outcome = yield
    rep = outcome.get_result()
    if rep.when != "call":
        return
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    tr = item.config.pluginmanager.get_plugin("terminalreporter")
    if tr is not None:
        status = "PASS" if rep.passed else "FAIL"
        tr.write_line(f"[{status}] acceptance criterion {marker.args[0]}: {marker.args[1]}")
