import pytest

from rds_bench.synthetic import make_manifest

ACCEPTANCE_RESULTS = []


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    return make_manifest(tmp_path_factory.mktemp("small"), 60, seed=11)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)
