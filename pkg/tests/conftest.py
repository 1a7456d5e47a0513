import pytest

from anova_evidence import bundled_study

_ACCEPTANCE = []


@pytest.fixture(scope="session")
def table1():
    return bundled_study("stapel1996_table1")


@pytest.fixture(scope="session")
def adapted():
    return bundled_study("stapel1996_adapted")


@pytest.fixture
def accept():
    """Record an acceptance criterion outcome, then assert it."""

    def check(cid, description, ok, detail=""):
        _ACCEPTANCE.append((cid, description, bool(ok), detail))
        assert ok, f"{cid} {description}: {detail}"

    return check


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid, desc, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {cid:<5} {desc}  [{detail}]")
