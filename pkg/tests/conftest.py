import numpy as np
import pytest

from mhdlab.grid import FieldSnapshot, Grid, workspace

ACCEPTANCE_LINES: list[str] = []


def band_limited(grid: Grid, rng: np.random.Generator, kmax: float = 4.0, nt: int | None = None,
                 solenoidal: bool = True) -> np.ndarray:
    """Random real vector slice(s) with |k| <= kmax, optionally divergence-free."""
    ws = workspace(grid)
    shape = ((nt,) if nt else ()) + (3,) + grid.shape3
    a = rng.standard_normal(shape)
    flat = a.reshape((-1, 3) + grid.shape3)
    out = np.empty_like(flat)
    for i, s in enumerate(flat):
        sh = ws.fwd(s) * (ws.k2 <= kmax * kmax)
        if solenoidal:
            sh = ws.leray_hat(sh)
        out[i] = ws.inv(sh)
    return out.reshape(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def grid16():
    return Grid.cube(16)


def snapshot(grid: Grid, data: np.ndarray, name: str = "") -> FieldSnapshot:
    return FieldSnapshot(grid, data, name)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
