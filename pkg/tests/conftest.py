import pytest
from hypothesis import settings

from qnet_is import TargetSet, build_feedback, build_tandem

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture
def tandem2():
    return build_tandem(2, 0.1, [0.45, 0.45])


@pytest.fixture
def tandem4():
    return build_tandem(4, 0.04, [0.24] * 4)


@pytest.fixture
def feedback8():
    return build_feedback(0.1, 0.5, 0.4, 0.1)


@pytest.fixture
def feedback9():
    return build_feedback(0.1, 0.43, 0.47, 0.2)


@pytest.fixture
def total():
    return TargetSet.total()


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    """Collects one PASS/FAIL line per acceptance criterion for the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE_KEY, [])

    def record(criterion, passed, detail):
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
