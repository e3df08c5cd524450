"""Semi-Lagrangian discretisation of the implicit backward semigroup.

One step with a frozen contact argument ``w``::

    new(x) = min_v  u_prev(x - v dt) + dt * L(x, w(x), v)

over a symmetric velocity grid, with periodic linear interpolation at the
foot point. ``solve_frozen`` marches this step with ``w`` taken from a known
space-time field at the left endpoint of each step, and ``picard`` iterates
``u_k = solve_frozen(phi, u_{k-1})`` to the fixed point.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatchError, PreconditionError, SchemeError
from .grid import GridFunction, PeriodicGrid, SpaceTimeField, steps_for
from .model import DualLagrangian

THREADS_ENV = "CONTACT_HJB_THREADS"
_SNAP = 1e-12


@dataclass(frozen=True)
class SchemeParams:
    dt: float = 0.0025
    v_max: float = 4.0
    m_v: int = 161
    eps_k: float | None = None  # None: 1e-10 * max(1, |phi|_inf)
    k_max: int = 60
    horizon_cap: float = 64.0

    def __post_init__(self):
        if not self.dt > 0 or not self.v_max > 0:
            raise PreconditionError("dt and v_max must be positive")
        if self.m_v < 1 or self.m_v % 2 == 0:
            raise PreconditionError(f"M_v must be odd so that v = 0 is on the grid, got {self.m_v}")
        if self.k_max < 1:
            raise PreconditionError("K_max must be >= 1")
        if self.eps_k is not None and self.eps_k < 0:
            raise PreconditionError("eps_k must be nonnegative")

    def check_grid(self, grid: PeriodicGrid) -> None:
        for L in grid.lengths:
            if self.dt * self.v_max > L / 2 * (1 + 1e-12):
                raise PreconditionError(
                    f"dt*v_max = {self.dt * self.v_max} exceeds half the period {L / 2}"
                )

    def tolerance(self, phi: GridFunction) -> float:
        if self.eps_k is not None:
            return self.eps_k
        return 1e-10 * max(1.0, phi.sup())


def velocity_grid(params: SchemeParams, dim: int = 1) -> np.ndarray:
    """Velocities ordered by (|v|, v) so a first-occurrence argmin prefers
    the slowest one. Shape ``(M,)`` on the circle, ``(M, 2)`` on the torus."""
    axis = np.linspace(-params.v_max, params.v_max, params.m_v)
    axis[params.m_v // 2] = 0.0
    if dim == 1:
        return axis[np.lexsort((axis, np.abs(axis)))]
    vx, vy = (a.ravel() for a in np.meshgrid(axis, axis, indexing="ij"))
    order = np.lexsort((vy, vx, vx * vx + vy * vy))
    return np.stack([vx[order], vy[order]], axis=1)


@dataclass(frozen=True, eq=False)
class Stencil:
    """Foot-point interpolation data shared by the scheme and the oracle.

    ``index[c, m, i]`` is the flat node index of corner ``c`` of the foot of
    node ``i`` under velocity ``m``; ``weights[c, m]`` its weight (uniform
    grids make weights node independent).
    """

    grid: PeriodicGrid
    dt: float
    velocities: np.ndarray
    index: np.ndarray
    weights: np.ndarray
    x: np.ndarray  # node coordinates as passed to the Lagrangian

    @property
    def m(self) -> int:
        return self.velocities.shape[0]

    def velocity_vectors(self) -> np.ndarray:
        v = self.velocities
        return v[:, None] if v.ndim == 1 else v


def build_stencil(grid: PeriodicGrid, params: SchemeParams) -> Stencil:
    params.check_grid(grid)
    vel = velocity_grid(params, grid.dim)
    vv = vel[:, None] if grid.dim == 1 else vel
    M = vv.shape[0]
    node_idx = np.indices(grid.shape).reshape(grid.dim, -1)  # (dim, n)
    per_axis = []
    for k in range(grid.dim):
        shift = -vv[:, k] * params.dt / grid.spacing[k]
        base = np.floor(shift)
        theta = shift - base
        low = theta < _SNAP
        high = theta > 1 - _SNAP
        theta[low | high] = 0.0
        base[high] += 1
        per_axis.append((base.astype(np.int64), theta))
    corners = list(np.ndindex(*(2,) * grid.dim))
    index = np.empty((len(corners), M, grid.size), dtype=np.int64)
    weights = np.empty((len(corners), M))
    for c, corner in enumerate(corners):
        w = np.ones(M)
        flat = np.zeros((M, grid.size), dtype=np.int64)
        for k, ck in enumerate(corner):
            base, theta = per_axis[k]
            w = w * (theta if ck else 1.0 - theta)
            pos = np.mod(node_idx[k][None, :] + base[:, None] + ck, grid.counts[k])
            flat = flat * grid.counts[k] + pos
        index[c] = flat
        weights[c] = w
    pts = grid.points()
    return Stencil(grid, params.dt, vel, index, weights, pts[:, 0] if grid.dim == 1 else pts)


def _combine(weights, corner_values, cost):
    """Interpolated foot value plus running cost, in a fixed order."""
    acc = weights[0] * corner_values[0]
    for c in range(1, weights.shape[0]):
        acc = acc + weights[c] * corner_values[c]
    return acc + cost


def step_cost(L, nodes, frozen_values, stencil: Stencil):
    """``dt * L(x_i, w_i, v_m)`` for the selected nodes, shape ``(M, n_selected)``."""
    return stencil.dt * L.cost_matrix(stencil.x[nodes], frozen_values, stencil.velocities)


def _thread_count() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _step_block(u_flat, frozen_flat, L, stencil, nodes: slice):
    cost = step_cost(L, nodes, frozen_flat[nodes], stencil)
    vals = u_flat[stencil.index[:, :, nodes]]
    total = _combine(stencil.weights[:, :, None], vals, cost)
    j = np.argmin(total, axis=0)
    best = np.take_along_axis(total, j[None, :], axis=0)[0]
    bad = ~np.isfinite(best)
    if bad.any():
        i = nodes.start + int(np.argmax(bad))
        point = stencil.grid.points()[i].tolist()
        raise SchemeError(f"every velocity is infeasible at node {i} (x = {point})")
    return best, j


def sl_step(u_prev: GridFunction, frozen: GridFunction, L, params: SchemeParams,
            stencil: Stencil | None = None):
    """One frozen-argument step; returns the new grid function and the
    argmin velocity per node, shape ``(size, dim)``."""
    if u_prev.grid != frozen.grid:
        raise GridMismatchError("u_prev and frozen live on different grids")
    stencil = stencil or build_stencil(u_prev.grid, params)
    values, idx = _sl_step_flat(u_prev.flat, frozen.flat, L, stencil)
    return GridFunction(u_prev.grid, values), stencil.velocity_vectors()[idx]


def _sl_step_flat(u_flat, frozen_flat, L, stencil: Stencil):
    n = stencil.grid.size
    threads = _thread_count()
    if threads == 1 or n < 2 * threads:
        return _step_block(u_flat, frozen_flat, L, stencil, slice(0, n))
    edges = np.linspace(0, n, threads + 1).astype(int)
    blocks = [slice(a, b) for a, b in zip(edges[:-1], edges[1:])]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda b: _step_block(u_flat, frozen_flat, L, stencil, b), blocks))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def solve_frozen(phi: GridFunction, frozen_field: SpaceTimeField, horizon: float, L,
                 params: SchemeParams, stencil: Stencil | None = None,
                 record_argmins: bool = False) -> SpaceTimeField:
    """March ``sl_step`` from ``phi`` with the contact argument taken from
    ``frozen_field`` at the left endpoint of each step."""
    n_steps = steps_for(horizon, params.dt)
    if frozen_field.grid != phi.grid:
        raise GridMismatchError("frozen field and initial data live on different grids")
    if not math.isclose(frozen_field.dt, params.dt, rel_tol=1e-12) or frozen_field.n_steps < n_steps:
        raise PreconditionError("frozen field does not cover the horizon with the scheme's dt")
    stencil = stencil or build_stencil(phi.grid, params)
    snaps = np.empty((n_steps + 1, phi.grid.size))
    snaps[0] = phi.flat
    argmins = np.empty((n_steps, phi.grid.size), dtype=np.int64) if record_argmins else None
    for n in range(n_steps):
        snaps[n + 1], idx = _sl_step_flat(snaps[n], frozen_field.snapshots[n], L, stencil)
        if record_argmins:
            argmins[n] = idx
    vel = None
    if record_argmins:
        vel = stencil.velocity_vectors()[argmins]
    return SpaceTimeField(phi.grid, params.dt, snaps, vel)


@dataclass
class PicardDiagnostics:
    increments: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    tolerance: float = 0.0
    bound_hits: int = 0  # argmins on the velocity bound in the final iterate
    final: SpaceTimeField | None = None


def picard(phi: GridFunction, horizon: float, L, params: SchemeParams,
           record_argmins: bool = False, stencil: Stencil | None = None):
    """Fixed point of ``u -> solve_frozen(phi, u)`` started from ``phi``
    held constant in time. Returns ``(field, diagnostics)``."""
    if horizon < 0:
        raise PreconditionError("horizon must be nonnegative")
    if horizon > params.horizon_cap * (1 + 1e-12):
        raise PreconditionError(
            f"horizon {horizon} exceeds the per-call cap {params.horizon_cap}; run in chunks"
        )
    n_steps = steps_for(horizon, params.dt)
    stencil = stencil or build_stencil(phi.grid, params)
    tol = params.tolerance(phi)
    current = SpaceTimeField.constant_in_time(phi, params.dt, n_steps)
    diag = PicardDiagnostics(tolerance=tol)
    if n_steps == 0:
        diag.converged = True
        diag.final = current
        return current, diag
    for k in range(1, params.k_max + 1):
        nxt = solve_frozen(phi, current, horizon, L, params, stencil, record_argmins)
        inc = float(np.max(np.abs(nxt.snapshots - current.snapshots)))
        diag.increments.append(inc)
        diag.iterations = k
        current = nxt
        if inc <= tol:
            diag.converged = True
            break
    if current.argmins is not None:
        diag.bound_hits = int(np.sum(np.any(np.abs(current.argmins) >= params.v_max, axis=-1)))
    current.meta["picard_iterations"] = diag.iterations
    current.meta["increments"] = list(diag.increments)
    current.meta["converged"] = diag.converged
    diag.final = current
    return current, diag


def t_minus(phi: GridFunction, t: float, L, params: SchemeParams,
            stencil: Stencil | None = None) -> GridFunction:
    if t == 0:
        return phi
    field_, _ = picard(phi, t, L, params, stencil=stencil)
    return field_.final


def t_plus(phi: GridFunction, t: float, L, params: SchemeParams,
           stencil: Stencil | None = None) -> GridFunction:
    """``-Tbar_t(-phi)`` where ``Tbar`` uses ``L(x, -u, -v)``."""
    if t == 0:
        return phi
    return -t_minus(-phi, t, DualLagrangian(L), params, stencil)


def t_plus_field(phi: GridFunction, t: float, L, params: SchemeParams,
                 stencil: Stencil | None = None):
    """Forward evolution with all snapshots; returns ``(field, diagnostics)``."""
    dual, diag = picard(-phi, t, DualLagrangian(L), params, stencil=stencil)
    dual.snapshots = -dual.snapshots
    return dual, diag
