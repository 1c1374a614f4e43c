import numpy as np
import pytest

from binn.core import Interaction, build_corpus


def corpus_from(rows, num_behavior_types=4):
    """``rows`` are ``(user, item, behavior, timestamp)`` tuples."""
    return build_corpus([Interaction(*r) for r in rows], num_behavior_types)


def random_rows(rng, num_users, num_items, max_len, num_behavior_types=4, max_time=1000):
    rows = []
    for u in range(num_users):
        for _ in range(int(rng.integers(1, max_len + 1))):
            rows.append((f"u{u}", f"i{int(rng.integers(num_items))}",
                         int(rng.integers(1, num_behavior_types + 1)), int(rng.integers(max_time))))
    return rows


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# One line per acceptance criterion, printed at the end of the run.
ACCEPTANCE_LINES: dict[int, str] = {}


def record(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] #{number:<2d} {title}: {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
