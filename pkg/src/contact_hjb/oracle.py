"""Reference solutions used to validate the scheme: an exhaustive search
over the discrete control tree, the Hopf-Lax formula, and the explicit
pair of stationary solutions for ``-lam*u + p^2/2 + x^2/2`` on the circle."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError, SizeLimitError
from .grid import GridFunction, PeriodicGrid, SpaceTimeField, circle_distance, from_expression
from .semigroup import SchemeParams, Stencil, _combine, build_stencil

MAX_STEPS = 6
MAX_NODES = 32
MAX_VELOCITIES = 7
MAX_LEAVES = 20_000_000


def tree_size(stencil: Stencil, n_steps: int, nodes: int) -> int:
    """Number of leaves of the exhaustive search tree."""
    branching = int(np.count_nonzero(stencil.weights))
    return nodes * branching ** n_steps


def brute_force_value(phi: GridFunction, frozen_field: SpaceTimeField, n_steps: int, L,
                      params: SchemeParams, max_leaves: int = MAX_LEAVES) -> GridFunction:
    """Exhaustive minimum over every velocity sequence and every
    interpolation corner, without reusing intermediate values.

    Corners of zero weight contribute nothing to the interpolated value and
    are not expanded; all other arithmetic follows ``sl_step``.
    """
    grid = phi.grid
    if n_steps < 0 or n_steps > MAX_STEPS:
        raise SizeLimitError(f"n_steps must be in [0, {MAX_STEPS}], got {n_steps}")
    if grid.size > MAX_NODES:
        raise SizeLimitError(f"grid has {grid.size} nodes, limit {MAX_NODES}")
    if params.m_v > MAX_VELOCITIES:
        raise SizeLimitError(f"M_v = {params.m_v} exceeds {MAX_VELOCITIES}")
    if n_steps and frozen_field.n_steps < n_steps:
        raise PreconditionError("frozen field is shorter than n_steps")
    stencil = build_stencil(grid, params)
    leaves = tree_size(stencil, n_steps, grid.size)
    if leaves > max_leaves:
        raise SizeLimitError(f"search tree has {leaves} leaves, limit {max_leaves}")
    phi_flat = phi.flat
    frozen = frozen_field.snapshots
    live = [np.nonzero(stencil.weights[:, m])[0] for m in range(stencil.m)]

    def value(level: int, nodes: np.ndarray) -> np.ndarray:
        if level == 0:
            return phi_flat[nodes]
        C, M = stencil.weights.shape
        corner_vals = np.zeros((C, M) + nodes.shape)
        for m in range(M):
            for c in live[m]:
                corner_vals[c, m] = value(level - 1, stencil.index[c, m][nodes])
        flat = nodes.ravel()
        cost = stencil.dt * L.cost_matrix(stencil.x[flat], frozen[level - 1][flat], stencil.velocities)
        cost = cost.reshape((M,) + nodes.shape)
        w = stencil.weights.reshape((C, M) + (1,) * nodes.ndim)
        total = _combine(w, corner_vals, cost)
        j = np.argmin(total, axis=0)
        return np.take_along_axis(total, j[None], axis=0)[0]

    return GridFunction(grid, value(n_steps, np.arange(grid.size)))


def hopf_lax(phi: GridFunction, t: float) -> GridFunction:
    """``min_y phi(y) + d(x, y)^2 / (2t)`` over the nodes of a circle."""
    if phi.grid.dim != 1:
        raise PreconditionError("the Hopf-Lax oracle is implemented on the circle only")
    if not t > 0:
        raise PreconditionError("t must be positive")
    x = phi.grid.axis(0)
    d = circle_distance(x[:, None], x[None, :], phi.grid.lengths[0])
    return phi.with_values(np.min(phi.flat[None, :] + d * d / (2 * t), axis=1))


def e1_coefficients(lam: float) -> tuple[float, float]:
    if not lam > 2:
        raise PreconditionError(f"two stationary solutions need lambda > 2, got {lam}")
    root = math.sqrt(lam * lam - 4)
    return (lam + root) / 2, (lam - root) / 2


def e1_reference(lam: float, grid: PeriodicGrid) -> tuple[GridFunction, GridFunction]:
    """``(c1 V, c2 V)`` with ``V = x^2/2`` and ``c^2 - lam c + 1 = 0``."""
    if grid.dim != 1 or grid.lengths[0] != 2.0:
        raise PreconditionError("reference pair is defined on the circle (-1, 1]")
    c1, c2 = e1_coefficients(lam)
    V = from_expression(grid, "0.5*x^2")
    return V.with_values(c1 * V.values), V.with_values(c2 * V.values)


def e1_pde_residual(u: GridFunction, lam: float) -> float:
    """Max of ``|-lam u + (u')^2/2 + V|`` with centred differences, away from x = 1."""
    x = u.grid.axis(0)
    h = u.grid.h
    du = (np.roll(u.flat, -1) - np.roll(u.flat, 1)) / (2 * h)
    res = np.abs(-lam * u.flat + du * du / 2 + x * x / 2)
    interior = np.abs(x) < 1 - 1.5 * h
    return float(res[interior].max())


@dataclass
class OracleResult:
    name: str
    passed: bool
    value: float
    tolerance: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def random_instance(rng: np.random.Generator):
    """Small admissible problem for the exhaustive comparison."""
    from .model import QuadraticContactHamiltonian, lagrangian

    n = int(rng.integers(4, 33))
    grid = PeriodicGrid.circle(n, float(rng.choice([1.0, 2.0, 3.0])))
    m_v = int(rng.choice([1, 3, 5, 7]))
    h = grid.h
    dt = float(rng.uniform(0.2, 1.5)) * h
    v_max = min(float(rng.uniform(0.3, 2.0)), 0.45 * grid.lengths[0] / dt)
    params = SchemeParams(dt=dt, v_max=v_max, m_v=m_v)
    lam = float(rng.uniform(0.0, 3.0))
    sign = rng.choice(["-", ""])
    model = QuadraticContactHamiltonian(
        f"{sign}{lam!r}*u + 0.1*sin(u)", f"{rng.uniform(0.1, 2.0)!r}*cos(3*x)",
        a=float(rng.uniform(0.5, 2.0)), lam=lam + 0.1,
    )
    L = lagrangian(model)
    stencil = build_stencil(grid, params)
    branching = int(np.count_nonzero(stencil.weights))
    steps = int(rng.integers(0, MAX_STEPS + 1))
    while steps and tree_size(stencil, steps, n) > 2_000_000:
        steps -= 1
    phi = GridFunction(grid, rng.normal(size=n))
    frozen = SpaceTimeField(grid, dt, rng.normal(size=(max(steps, 1) + 1, n)))
    return phi, frozen, steps, L, params, branching


def iterated_steps(phi: GridFunction, frozen: SpaceTimeField, n_steps: int, L,
                   params: SchemeParams) -> GridFunction:
    from .semigroup import solve_frozen

    if n_steps == 0:
        return phi
    return solve_frozen(phi, frozen, n_steps * params.dt, L, params).final


def run_oracle_suite(grid: PeriodicGrid, params: SchemeParams, seed: int = 0,
                     instances: int = 10, include_e1: bool = True) -> list[OracleResult]:
    from .model import QuadraticContactHamiltonian, lagrangian
    from .semigroup import t_minus

    results = []
    rng = np.random.default_rng(seed)
    mismatches = 0
    for _ in range(instances):
        phi, frozen, steps, L, p, _ = random_instance(rng)
        a = brute_force_value(phi, frozen, steps, L, p)
        b = iterated_steps(phi, frozen, steps, L, p)
        mismatches += int(not np.array_equal(a.values, b.values))
    results.append(OracleResult("exhaustive_search_equals_scheme", mismatches == 0, mismatches, 0))

    if grid.dim == 1:
        tol = 4.0 * (grid.h + params.dt)
        free = lagrangian(QuadraticContactHamiltonian("0", "0", lam=0.0))
        phi = from_expression(grid, f"cos({math.pi!r}*x/{grid.lengths[0] / 2!r})")
        t = params.dt * max(1, round(0.5 / params.dt))
        err = float(np.max(np.abs(t_minus(phi, t, free, params).values - hopf_lax(phi, t).values)))
        results.append(OracleResult("hopf_lax_agreement", err <= tol, err, tol))

    if include_e1 and grid.dim == 1 and grid.lengths[0] == 2.0:
        model = QuadraticContactHamiltonian("-3*u", "0.5*x^2", lam=3.0)
        L = lagrangian(model)
        pair = e1_reference(3.0, grid)
        res = max(e1_pde_residual(u, 3.0) for u in pair)
        results.append(OracleResult("reference_pair_pde_residual", res <= 10 * grid.h, res, 10 * grid.h))
        tol = 4.0 * (grid.h + params.dt)
        t = params.dt * round(1.0 / params.dt)
        drift = max(float(np.max(np.abs(t_minus(u, t, L, params).values - u.values))) for u in pair)
        results.append(OracleResult("reference_pair_fixed_point", drift <= tol, drift, tol))
    return results
