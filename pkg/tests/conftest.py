import os

import numpy as np
import pytest

from cryoseg import kernels
from cryoseg.data import write_synthetic_corpus


@pytest.fixture(params=sorted(kernels.BACKENDS))
def backend(request):
    return kernels.BACKENDS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Two organs x three synthetic 512x512 samples."""
    root = tmp_path_factory.mktemp("corpus")
    write_synthetic_corpus(root, organs=("larynx", "skin"), per_organ=3, seed=7)
    return root


@pytest.fixture(scope="session")
def full_corpus(tmp_path_factory):
    """Ten organs x three synthetic samples, shaped like CryoNuSeg."""
    root = tmp_path_factory.mktemp("corpus30")
    write_synthetic_corpus(root, per_organ=3, seed=11)
    return root


@pytest.fixture(autouse=True)
def _cpu_only(monkeypatch):
    monkeypatch.setenv("CRYOSEG_DEVICE", os.environ.get("CRYOSEG_TEST_DEVICE", "cpu"))


_acceptance = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        props = dict(report.user_properties)
        if "criterion" in props:
            _acceptance.append((report.outcome, props["criterion"], props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for outcome, name, detail in sorted(_acceptance, key=lambda t: t[1]):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}" + (f"  ({detail})" if detail else ""))
