"""Test harness configuration.

Thread pinning must happen before numpy loads anywhere in the process:
several tests assert byte-identical reruns, and multi-threaded BLAS kernels
are allowed to reorder reductions.
"""

import os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
             "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
    os.environ.setdefault(_var, "1")

import pytest  # noqa: E402

_ACCEPTANCE_RESULTS = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "acceptance(num, title): one of the numbered acceptance criteria")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    num, title = marker.args
    if report.when == "call":
        status = "PASS" if report.passed else "FAIL"
    elif report.when == "setup" and not report.passed:
        status = "FAIL" if report.failed else "SKIP"
    else:
        return
    # criteria may span several test functions; a single failure is final
    prior, _ = _ACCEPTANCE_RESULTS.get(num, ("PASS", title))
    if prior != "FAIL":
        _ACCEPTANCE_RESULTS[num] = (status, title)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_ACCEPTANCE_RESULTS):
        status, title = _ACCEPTANCE_RESULTS[num]
        terminalreporter.write_line(f"criterion {num:2d}  {status}  {title}")
