from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import settings

from contact_hjb.grid import GridFunction, PeriodicGrid, from_expression
from contact_hjb.model import QuadraticContactHamiltonian, lagrangian
from contact_hjb.semigroup import SchemeParams

settings.register_profile("default", deadline=None, max_examples=25, derandomize=True)
settings.load_profile("default")

ACCEPTANCE_LINES: list[str] = []

C1 = (3 + math.sqrt(5)) / 2
C2 = (3 - math.sqrt(5)) / 2


def e1_model(lam: float = 3.0):
    return QuadraticContactHamiltonian(f"-{lam!r}*u", "0.5*x^2", a=1.0, lam=lam)


def e1_pair(grid: PeriodicGrid):
    V = from_expression(grid, "0.5*x^2")
    return V.with_values(C1 * V.values), V.with_values(C2 * V.values)


@pytest.fixture
def small_circle():
    return PeriodicGrid.circle(40)


@pytest.fixture
def free_lagrangian():
    return lagrangian(QuadraticContactHamiltonian("0", "0", lam=0.0))


@pytest.fixture
def coarse_params():
    return SchemeParams(dt=0.02, v_max=2.0, m_v=41)


def smooth_function(grid: PeriodicGrid, rng: np.random.Generator, modes: int = 3, scale: float = 0.3):
    x = grid.axis(0)
    vals = np.zeros_like(x)
    for k in range(1, modes + 1):
        a, b = rng.normal(scale=scale / k, size=2)
        vals += a * np.cos(k * math.pi * x) + b * np.sin(k * math.pi * x)
    return GridFunction(grid, vals)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
