import contextlib
import itertools

import numpy as np
import pytest

from poregan.volume import Phase, VoxelVolume

ACCEPTANCE = {}


def volume_from(coords, dims, phase=Phase.SOLID):
    """Volume of the opposite phase with ``phase`` at the listed voxels."""
    other = Phase.VOID if phase == Phase.SOLID else Phase.SOLID
    data = np.full(dims, int(other), dtype=np.uint8)
    for c in coords:
        data[tuple(c)] = int(phase)
    return VoxelVolume(data)


def brute_force_cells(mask):
    """Count distinct cells by collecting every cell key of every voxel in a set."""
    cells = [set(), set(), set(), set()]
    for i, j, k in zip(*np.nonzero(mask)):
        for d in itertools.product((0, 1, 2), repeat=3):
            key = (2 * i + d[0], 2 * j + d[1], 2 * k + d[2])
            cells[sum(c % 2 for c in key)].add(key)
    return tuple(len(c) for c in cells)


def exposed_faces(mask):
    """Solid unit faces touching void or the domain boundary."""
    mask = np.asarray(mask, dtype=bool)
    padded = np.pad(mask, 1, constant_values=False)
    total = 0
    core = padded[1:-1, 1:-1, 1:-1]
    for axis in range(3):
        for shift in (-1, 1):
            neighbour = np.roll(padded, shift, axis=axis)[1:-1, 1:-1, 1:-1]
            total += int(np.count_nonzero(core & ~neighbour))
    return total


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def criterion():
    """Record one acceptance criterion's pass/fail for the terminal summary."""

    @contextlib.contextmanager
    def record(number, title):
        try:
            yield
        except BaseException as exc:
            ACCEPTANCE[number] = (title, False, f"{type(exc).__name__}: {exc}".splitlines()[0])
            raise
        else:
            ACCEPTANCE.setdefault(number, (title, True, ""))

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, why = ACCEPTANCE[number]
        line = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}"
        if why:
            line += f" -- {why[:160]}"
        terminalreporter.write_line(line)
