"""Shared fixtures and the acceptance report.

Tests named ``test_criterion_<n>_...`` in ``test_acceptance.py`` are grouped
per criterion; a summary line per criterion is printed at the end of the run.
Criterion 9 is judged from the property suite (``test_properties.py``) when
it is part of the session.
"""

import re
from collections import defaultdict

import pytest

from smpd.device import load_fixture

_CRITERION = re.compile(r"test_criterion_(\d+)_")
CRITERIA = {
    1: "efficiency budget: SMPD1 0.46 +- 0.01; SMPD2 factors (0.79, 0.90, 0.69, 0.73), product 0.358 +- 0.005; < 1 ms",
    2: "bandwidth: 0.434 +- 0.005 MHz; numeric FWHM within 1%; < 1 s",
    3: "sensitivity: (1.00 +- 0.03)e-22, (1.2 +- 0.1)e-22, long-T1 projection (6.8 +- 0.2)e-23 W/rtHz; < 1 ms",
    4: "dark counts: alpha_qubit 5 +- 1 /s; SMPD2 total within 5 /s of 101 and 103; < 1 ms",
    5: "dynamics: steady state vs closed form < 1e-6 rel; energy < 1e-6; step-halving order >= 3.8; < 30 s",
    6: "Monte-Carlo: dark rate within 3 sigma of 85 /s; slope 0.43 +- 0.02; plateau within 1%; bit-identical; < 60 s",
    7: "thermal law: slope to 1e-9; MC slope within 2%; nbar(10 mK) 3e-15 +- 20%; nbar(35 mK) 6.5e-5 +- 5%; < 60 s",
    8: "timing optimiser: 11.86 us; numeric objective >= closed form; < 1 ms",
    9: "property suites: >= 1000 cases per property",
}
_results = defaultdict(list)
_props = {"passed": 0, "failed": 0, "seconds": 0.0}
PROPERTY_BUDGET_S = 300.0


@pytest.fixture(scope="session")
def smpd1():
    return load_fixture("smpd1")


@pytest.fixture(scope="session")
def smpd2():
    return load_fixture("smpd2")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    name = report.nodeid.split("::")[-1]
    if "test_acceptance.py" in report.nodeid:
        m = _CRITERION.match(name)
        if m:
            _results[int(m.group(1))].append((name, report.outcome))
    elif "test_properties.py" in report.nodeid:
        _props["seconds"] += report.duration
        _props["passed" if report.outcome == "passed" else "failed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _results and not (_props["passed"] or _props["failed"]):
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(_results):
        checks = _results[crit]
        ok = all(outcome == "passed" for _, outcome in checks)
        failed = [n for n, o in checks if o != "passed"]
        tail = f" (failing: {', '.join(failed)})" if failed else ""
        tr.write_line(
            f"criterion {crit}: {'PASS' if ok else 'FAIL'} [{len(checks) - len(failed)}/{len(checks)} checks] "
            f"{CRITERIA.get(crit, '')}{tail}"
        )
    n_props = _props["passed"] + _props["failed"]
    if n_props:
        ok = _props["failed"] == 0 and _props["seconds"] < PROPERTY_BUDGET_S
        tr.write_line(
            f"criterion 9 (property suite): {'PASS' if ok else 'FAIL'} "
            f"[{_props['passed']}/{n_props} properties pass, {_props['seconds']:.1f} s of {PROPERTY_BUDGET_S:.0f} s budget]"
        )
    else:
        tr.write_line("criterion 9 (property suite): NOT RUN (tests/test_properties.py not in this session)")
