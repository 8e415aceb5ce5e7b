import math

import numpy as np
import pytest
from hypothesis import settings

import diprime.baselines
import diprime.tree

# Property tests draw the same examples on every run.
settings.register_profile("repro", derandomize=True)
settings.load_profile("repro")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def expected_tree_epsilon(config):
    b = config.budget
    return math.fsum([b.epsilon_level] * b.d_max + [b.epsilon_leaf])


@pytest.fixture(autouse=True)
def audit_ledgers(monkeypatch):
    """Check the ledger of every private tree fitted anywhere in the suite."""
    original = diprime.tree.grow_tree
    audited = []

    def checked(data, config, rng, choose, epsilon_leaf, ledger=None):
        root = original(data, config, rng, choose, epsilon_leaf, ledger)
        if ledger is not None and config.budget is not None:
            want = expected_tree_epsilon(config)
            assert ledger.total() == want, f"ledger {ledger.total()!r} != budget {want!r}"
            audited.append(want)
        return root

    monkeypatch.setattr(diprime.tree, "grow_tree", checked)
    monkeypatch.setattr(diprime.baselines, "grow_tree", checked)
    return audited


ACCEPTANCE_LINES = []


@pytest.fixture
def report():
    """Print one verdict line per acceptance criterion and keep it for the summary."""

    def emit(number, title, detail, passed):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {title}  [{detail}]"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
