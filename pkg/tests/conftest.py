import numpy as np
import pytest
from hypothesis import settings

from hybridlab.grid import ScalarField, make_grid, make_masks

settings.register_profile("lab", max_examples=25, deadline=None)
settings.load_profile("lab")


def bump_fn(cx=0.5, cy=0.5, r=0.2, a=1.0):
    """C-infinity bump ``a exp(1 - 1/(1 - s))``, ``s = |x - c|^2 / r^2``."""

    def fn(x, y):
        s = ((x - cx) ** 2 + (y - cy) ** 2) / r**2
        out = np.zeros_like(s, dtype=float)
        m = s < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - s[m]))
        return a * out

    return fn


def bump(grid, cx=0.5, cy=0.5, r=0.2, a=1.0) -> ScalarField:
    return ScalarField.from_padded(grid, grid.eval(bump_fn(cx, cy, r, a)))


def poly_bump(grid, power=3, box=(0.25, 0.75, 0.25, 0.75)) -> ScalarField:
    x0, x1, y0, y1 = box

    def fn(x, y):
        s, t = (x - x0) / (x1 - x0), (y - y0) / (y1 - y0)
        inside = (s > 0) & (s < 1) & (t > 0) & (t < 1)
        return np.where(inside, (16 * s * (1 - s) * t * (1 - t)) ** power, 0.0)

    return ScalarField.from_padded(grid, grid.eval(fn))


def random_bump(grid, rng, amp=1.0) -> ScalarField:
    """Seeded smooth draw: a bump with random centre and radius kept inside Omega'."""
    r = rng.uniform(0.1, 0.2)
    cx, cy = rng.uniform(0.25 + r, 0.75 - r, size=2)
    return bump(grid, cx, cy, r, amp * rng.uniform(0.5, 1.0))


@pytest.fixture(scope="session")
def g31():
    return make_grid(31)


@pytest.fixture(scope="session")
def m31(g31):
    return make_masks(g31)


@pytest.fixture(scope="session")
def g63():
    return make_grid(63)


@pytest.fixture(scope="session")
def m63(g63):
    return make_masks(g63)


# ---------------------------------------------------------------- acceptance verdict lines

VERDICTS: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
