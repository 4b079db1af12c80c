import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from pterisk.embedder import BackendDescriptor, Embedder  # noqa: E402
from pterisk.evaluation import PreparedCohort  # noqa: E402
from pterisk.synthetic import generate_synthetic_cohort  # noqa: E402


@pytest.fixture(scope="session")
def frozen_cohort():
    return generate_synthetic_cohort(7)


@pytest.fixture(scope="session")
def small_cohort():
    return generate_synthetic_cohort(3, n=80, prevalence=0.25)


@pytest.fixture(scope="session")
def hash_descriptor():
    return BackendDescriptor("hash-128", 128)


@pytest.fixture(scope="session")
def frozen_prep(frozen_cohort, hash_descriptor):
    return PreparedCohort.from_cohort(frozen_cohort, Embedder(hash_descriptor))


@pytest.fixture(scope="session")
def small_prep(small_cohort, hash_descriptor):
    return PreparedCohort.from_cohort(small_cohort, Embedder(hash_descriptor))


ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
