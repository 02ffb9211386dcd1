import os

import numpy as np
import pytest

from chaosflow.dynamics import SystemSpec, integrate

_ACCEPTANCE: list[tuple[str, bool, str, list]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "nightly: long-running run, enabled with CHAOSFLOW_NIGHTLY=1")


def pytest_collection_modifyitems(config, items):
    if os.environ.get("CHAOSFLOW_NIGHTLY") == "1":
        return
    skip = pytest.mark.skip(reason="nightly suite; set CHAOSFLOW_NIGHTLY=1")
    for item in items:
        if "nightly" in item.keywords:
            item.add_marker(skip)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    label = getattr(item.function, "acceptance", None)
    if label and rep.when == "call":
        _ACCEPTANCE.append((label, rep.passed, item.name, list(item.user_properties)))
    elif label and rep.when == "setup" and rep.skipped:
        _ACCEPTANCE.append((label, None, item.name, []))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, name, props in sorted(_ACCEPTANCE):
        status = "SKIP" if ok is None else ("PASS" if ok else "FAIL")
        terminalreporter.write_line(f"{status}  {label}  ({name})")
        for key, value in props:
            terminalreporter.write_line(f"        {key}: {value}")


@pytest.fixture(scope="session")
def lorenz_ref():
    """Lorenz 63 from (10, 10, 20), 10^4 steps of 0.01 s."""
    return integrate(SystemSpec("lorenz63"), [10.0, 10.0, 20.0], 0.01, 10_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
