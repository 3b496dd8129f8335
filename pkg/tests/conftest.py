from __future__ import annotations

import pytest

from pressure_field.scheduling import Meeting, Placement, Problem, Room

ACCEPTANCE_LINES: list[str] = []


def make_problem(rooms, meetings, placed=None, difficulty="easy", seed=0) -> Problem:
    """Hand-built problem. ``rooms`` are capacities, ``meetings`` are
    (id, duration, attendees), ``placed`` maps id -> (room, day, slot)."""
    return Problem(
        rooms=[Room(chr(ord("A") + i), c) for i, c in enumerate(rooms)],
        meetings=[Meeting(mid, dur, tuple(att)) for mid, dur, att in meetings],
        pre_scheduled={mid: Placement(*p) for mid, p in (placed or {}).items()},
        seed=seed,
        difficulty=difficulty,
    )


@pytest.fixture
def acceptance_log():
    def report(criterion: str, passed: bool, detail: str) -> None:
        line = f"{criterion}: {'PASS' if passed else 'FAIL'} - {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
