import pytest

from faultsig import scenarios
from faultsig.pipeline import MODES, PipelineConfig, calibrate_library


@pytest.fixture(scope="session")
def pipeline_config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def calibration_records():
    return [s.labelled() for s in scenarios.calibration_suite()]


@pytest.fixture(scope="session")
def libraries(pipeline_config, calibration_records):
    """One signature library per analysis mode, calibrated on the shipped corpus."""
    return {m: calibrate_library(pipeline_config, calibration_records, m) for m in MODES}


CRITERIA: dict[int, str] = {}


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion."""

    def record(number: int, passed: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
        CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
