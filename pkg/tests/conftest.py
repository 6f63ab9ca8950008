import os
import sys

import pytest
from hypothesis import settings

from catmmv.coefficients import build_curves
from catmmv.diffusion import diffusion_coefficients
from catmmv.model import reference_params

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")

REF_SHORT = {"horizon.T": 10.0}
DIFFUSION_VARIANT = {"claims.catastrophe.rate": 3.0}


@pytest.fixture(scope="session")
def ref():
    return reference_params()


@pytest.fixture(scope="session")
def curves(ref):
    return build_curves(ref)


@pytest.fixture(scope="session")
def ref10():
    return reference_params(**REF_SHORT)


@pytest.fixture(scope="session")
def curves10(ref10):
    return build_curves(ref10)


@pytest.fixture(scope="session")
def dparams():
    return reference_params(**DIFFUSION_VARIANT)


@pytest.fixture(scope="session")
def dcoef(dparams):
    return diffusion_coefficients(dparams)


# ------------------------------------------------------- acceptance summary

_CRITERIA: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call" or report.failed:
        prev = _CRITERIA.get(name, ("passed", ""))[0]
        outcome = "failed" if report.failed or prev == "failed" else report.outcome
        _CRITERIA[name] = (outcome, f"{report.duration:.1f}s" if report.when == "call" else report.when)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA):
        outcome, info = _CRITERIA[name]
        num, label = name[len("test_criterion_"):].split("_", 1)
        mark = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"criterion {int(num):2d} {mark}  {label.replace('_', ' ')} ({info})")
