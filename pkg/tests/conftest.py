import numpy as np
import pytest

from smartassign.config import scenario_corpus
from smartassign.domain import CaseRecord, Cell, MediatorProfile

# acceptance outcomes collected during the run, printed in the terminal summary
ACCEPTANCE = {}


def record_criterion(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {status}  {title}  {detail}".rstrip())


CELL_A = Cell("1", "A")
CELL_B = Cell("1", "B")


@pytest.fixture
def scenario1():
    return scenario_corpus(1).mediators


@pytest.fixture
def scenario2():
    return scenario_corpus(2).mediators


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_case(cid="v", cell=CELL_A, p=0.5, **kw):
    return CaseRecord(cid, cell, p, **kw)


def make_mediator(mid, cells=(CELL_A,), capacity=3, load=0, va=0.0):
    return MediatorProfile(mid, set(cells), capacity, load, va)


def concluded(cid, mid, y, t, *, cell=CELL_A, p=0.5, period="0", mode="court"):
    """A finished historical case for estimation tests."""
    return CaseRecord(cid, cell, p, float(t), mode, period, mid, bool(y), float(t))
