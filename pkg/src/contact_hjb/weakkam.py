"""Long-time behaviour of the semigroups: stationary solutions, conjugate
pairs, equality (Aubry) sets, traced minimizers and the comparison check."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NotConvergedError, PreconditionError
from .grid import GridFunction, PeriodicGrid, SpaceTimeField, torus_distance, wrap
from .semigroup import (
    SchemeParams,
    Stencil,
    build_stencil,
    picard,
    sl_step,
    t_minus,
    t_plus_field,
)

CONVERGED, UNBOUNDED, UNDECIDED = "Converged", "Unbounded", "Undecided"


@dataclass
class LimitReport:
    status: str
    limit: GridFunction | None
    tail: list[GridFunction]
    times: list[float]  # chunk endpoint times
    sup_history: list[float]  # max over nodes at each endpoint
    inf_history: list[float]  # min over nodes at each endpoint
    differences: list[float]  # sup-norm change between successive endpoints
    tol_limit: float
    blowup: float
    direction: str = "minus"

    @property
    def horizon(self) -> float:
        return self.times[-1] if self.times else 0.0

    def growth(self) -> dict:
        return {
            "max_sup": max(self.sup_history, default=0.0),
            "min_sup": min(self.sup_history, default=0.0),
            "max_inf": max(self.inf_history, default=0.0),
            "min_inf": min(self.inf_history, default=0.0),
        }


def _chunk_run(phi, chunk, L, params, stencil, direction):
    if direction == "minus":
        field_, diag = picard(phi, chunk, L, params, stencil=stencil)
    elif direction == "plus":
        field_, diag = t_plus_field(phi, chunk, L, params, stencil)
    else:
        raise PreconditionError(f"unknown direction {direction!r}")
    return field_, diag


def long_time(phi: GridFunction, chunk: float, max_horizon: float, L, params: SchemeParams,
              tol_limit: float = 1e-8, blowup: float = 1e6, tail_size: int = 4,
              direction: str = "minus", stencil: Stencil | None = None) -> LimitReport:
    """Apply the semigroup in chunks until the endpoints settle, blow up,
    or the horizon runs out."""
    if not 0 < chunk <= max_horizon:
        raise PreconditionError("need 0 < chunk <= max_horizon")
    stencil = stencil or build_stencil(phi.grid, params)
    report = LimitReport(UNDECIDED, None, [phi], [0.0], [float(phi.values.max())],
                         [float(phi.values.min())], [], tol_limit, blowup, direction)
    current, t = phi, 0.0
    n_chunks = int(round(max_horizon / chunk))
    for _ in range(n_chunks):
        field_, _diag = _chunk_run(current, chunk, L, params, stencil, direction)
        snaps = field_.snapshots
        finite = np.all(np.isfinite(snaps))
        peak = float(np.max(np.abs(snaps))) if finite else np.inf
        t += chunk
        if not finite or peak > blowup:
            report.status = UNBOUNDED
            report.times.append(t)
            report.sup_history.append(float(np.nanmax(snaps[-1])) if finite else np.inf)
            report.inf_history.append(float(np.nanmin(snaps[-1])) if finite else -np.inf)
            return report
        nxt = field_.final
        diff = float(np.max(np.abs(nxt.values - current.values)))
        report.differences.append(diff)
        report.times.append(t)
        report.sup_history.append(float(nxt.values.max()))
        report.inf_history.append(float(nxt.values.min()))
        report.tail = (report.tail + [nxt])[-tail_size:]
        current = nxt
        if diff <= tol_limit:
            report.status = CONVERGED
            report.limit = nxt
            return report
    return report


def ring_min(f: GridFunction) -> GridFunction:
    """Minimum over each node's 1-ring (3 or 3x3 neighbourhood)."""
    vals = f.values
    out = vals.copy()
    shifts = (-1, 0, 1)
    if f.grid.dim == 1:
        for s in shifts:
            out = np.minimum(out, np.roll(vals, s))
    else:
        for a in shifts:
            for b in shifts:
                out = np.minimum(out, np.roll(vals, (a, b), axis=(0, 1)))
    return f.with_values(out)


def half_limit(report: LimitReport) -> GridFunction:
    """Discrete lower half limit: tail minimum, then a 1-ring minimum."""
    if report.status == UNBOUNDED:
        raise PreconditionError("half limit of an unbounded evolution is undefined")
    if not report.tail:
        raise PreconditionError("report has an empty tail window")
    low = np.min(np.stack([g.values for g in report.tail]), axis=0)
    return ring_min(report.tail[0].with_values(low))


def fixed_point_residual(u: GridFunction, horizon: float, L, params: SchemeParams,
                         stencil: Stencil | None = None) -> float:
    return float(np.max(np.abs(t_minus(u, horizon, L, params, stencil).values - u.values)))


def default_residual_tol(grid: PeriodicGrid, params: SchemeParams) -> float:
    """Residual budget ``4 (h + dt)`` for one time unit of a first-order scheme."""
    return 4.0 * (grid.h + params.dt)


@dataclass
class WeakKamPair:
    u_minus: GridFunction
    u_plus: GridFunction
    residual_minus: float
    residual_plus: float
    horizon: float
    cauchy: list[float] = field(default_factory=list)
    max_increase: float = 0.0  # largest rise between successive forward snapshots


def conjugate_pair(u_minus: GridFunction, chunk: float, max_horizon: float, L,
                   params: SchemeParams, tol_limit: float = 1e-8,
                   residual_tol: float | None = None, residual_horizon: float = 1.0,
                   stencil: Stencil | None = None) -> WeakKamPair:
    """Follow the forward semigroup from a backward solution to its limit."""
    if not 0 < chunk <= max_horizon:
        raise PreconditionError("need 0 < chunk <= max_horizon")
    stencil = stencil or build_stencil(u_minus.grid, params)
    if residual_tol is None:
        residual_tol = default_residual_tol(u_minus.grid, params)
    res = fixed_point_residual(u_minus, residual_horizon, L, params, stencil)
    if res > residual_tol:
        raise PreconditionError(
            f"input is not a fixed point: residual {res:.3e} exceeds {residual_tol:.3e}"
        )
    current, t = u_minus, 0.0
    cauchy: list[float] = []
    max_inc = -np.inf
    for _ in range(int(round(max_horizon / chunk))):
        field_, _diag = t_plus_field(current, chunk, L, params, stencil)
        max_inc = max(max_inc, float(np.max(np.diff(field_.snapshots, axis=0))))
        nxt = field_.final
        t += chunk
        cauchy.append(float(np.max(np.abs(nxt.values - current.values))))
        current = nxt
        if cauchy[-1] <= tol_limit:
            return WeakKamPair(u_minus, current, res, cauchy[-1], t, cauchy, max_inc)
    raise NotConvergedError(
        f"forward evolution undecided after {t}: last chunk change {cauchy[-1]:.3e}"
    )


@dataclass
class AubryEstimate:
    nodes: np.ndarray  # flat node indices
    points: np.ndarray  # (k, dim)
    gap: GridFunction
    eta: float

    def to_dict(self) -> dict:
        return {"aubry_nodes": [p.tolist() for p in self.points], "eta": self.eta}


def aubry_equality_set(pair: WeakKamPair, eta: float) -> AubryEstimate:
    if not eta > 0:
        raise PreconditionError("eta must be positive")
    gap = pair.u_minus.with_values(pair.u_minus.values - pair.u_plus.values)
    nodes = np.nonzero(np.abs(gap.flat) <= eta)[0]
    return AubryEstimate(nodes, gap.grid.points()[nodes], gap, float(eta))


def stationary_field(u: GridFunction, n_steps: int, L, params: SchemeParams,
                     stencil: Stencil | None = None) -> SpaceTimeField:
    """Time-independent field ``u`` with the argmins of one step from ``u``
    frozen at ``u``, repeated at every step."""
    _, vel = sl_step(u, u, L, params, stencil)
    snaps = np.broadcast_to(u.flat, (n_steps + 1, u.grid.size))
    argmins = np.broadcast_to(vel, (n_steps,) + vel.shape)
    return SpaceTimeField(u.grid, params.dt, snaps, argmins)


@dataclass
class MinimizerCurve:
    grid: PeriodicGrid
    dt: float
    times: np.ndarray  # from the anchor time down to 0
    points: np.ndarray  # (n + 1, dim), points[0] is the anchor
    velocities: np.ndarray  # (n, dim); velocities[k] moves points[k + 1] to points[k]
    snap_distance: float


def _nearest_node(grid: PeriodicGrid, point) -> int:
    flat = 0
    p = np.atleast_1d(point)
    for k in range(grid.dim):
        L, n = grid.lengths[k], grid.counts[k]
        i = int(np.rint((p[k] + L / 2) / (L / n) - 1.0)) % n
        flat = flat * n + i
    return flat


def trace_minimizer(field_: SpaceTimeField, x, from_t: float, snap: bool = False) -> MinimizerCurve:
    """Backtrack foot points through the recorded argmins.

    The argmin is read at the node nearest to the current point. With
    ``snap`` the point itself is moved to that node; otherwise it is kept
    continuous and the distance to the node is accumulated as snap distance.
    """
    if field_.argmins is None:
        raise PreconditionError("field has no recorded argmin velocities")
    grid = field_.grid
    n = int(round(from_t / field_.dt))
    if n > field_.n_steps or abs(n * field_.dt - from_t) > 1e-9 * max(1.0, from_t):
        raise PreconditionError(f"from_t={from_t} is not on the field's time grid")
    nodes = grid.points()
    point = np.atleast_1d(np.asarray(x, float))
    start = _nearest_node(grid, point)
    if np.max(torus_distance(grid, nodes[start], point)) > 1e-9:
        raise PreconditionError("trace must start at a grid node")
    points = [nodes[start].copy()]
    vels = []
    snapped = 0.0
    current = nodes[start].copy()
    for step in range(n - 1, -1, -1):
        i = _nearest_node(grid, current)
        snapped += float(np.max(torus_distance(grid, nodes[i], current)))
        if snap:
            current = nodes[i].copy()
        v = np.asarray(field_.argmins[step][i], float)
        current = np.atleast_1d(wrap(grid, current - v * field_.dt))
        points.append(current.copy())
        vels.append(v)
    times = field_.dt * np.arange(n, -1, -1)
    vel_arr = np.array(vels).reshape(n, grid.dim)
    return MinimizerCurve(grid, field_.dt, times, np.array(points), vel_arr, snapped)


def alpha_limit(curve: MinimizerCurve, tail_fraction: float, radius: float | None = None) -> np.ndarray:
    """Cluster representatives of the earliest-in-time part of the curve."""
    if not 0 < tail_fraction <= 1:
        raise PreconditionError("tail_fraction must be in (0, 1]")
    radius = 2 * curve.grid.h if radius is None else radius
    count = max(1, int(np.ceil(tail_fraction * len(curve.points))))
    tail = curve.points[-count:]
    centers: list[np.ndarray] = []
    for p in tail:
        if not any(float(np.max(torus_distance(curve.grid, c, p))) <= radius for c in centers):
            centers.append(p)
    return np.array(centers).reshape(-1, curve.grid.dim)


@dataclass
class ComparisonReport:
    hypothesis: bool
    conclusion: bool
    margins: dict

    @property
    def falsified(self) -> bool:
        return self.hypothesis and not self.conclusion

    def to_dict(self) -> dict:
        return {"hypothesis": self.hypothesis, "conclusion": self.conclusion,
                "margins": self.margins}


def comparison_check(v1: GridFunction, v2: GridFunction, aubry2: AubryEstimate, radius: float,
                     L, params: SchemeParams, tol: float = 1e-9,
                     residual_tol: float | None = None, residual_horizon: float = 1.0,
                     check_residuals: bool = True, stencil: Stencil | None = None) -> ComparisonReport:
    """Test ``v1 <= v2`` near the equality set of ``v2`` and everywhere."""
    if not L.strictly_increasing_in_u():
        raise PreconditionError("comparison requires H strictly decreasing in u")
    if v1.grid != v2.grid or aubry2.gap.grid != v1.grid:
        raise PreconditionError("inputs live on different grids")
    if check_residuals:
        stencil = stencil or build_stencil(v1.grid, params)
        tol_res = default_residual_tol(v1.grid, params) if residual_tol is None else residual_tol
        for name, v in (("v1", v1), ("v2", v2)):
            res = fixed_point_residual(v, residual_horizon, L, params, stencil)
            if res > tol_res:
                raise PreconditionError(f"{name} residual {res:.3e} exceeds {tol_res:.3e}")
    pts = v1.grid.points()
    if aubry2.points.size:
        dist = np.min(np.stack([torus_distance(v1.grid, pts, np.broadcast_to(a, pts.shape))
                                for a in aubry2.points]), axis=0)
    else:
        dist = np.full(v1.grid.size, np.inf)
    near = dist <= radius
    diff = v1.flat - v2.flat
    near_max = float(diff[near].max()) if near.any() else -np.inf
    margins = {
        "neighborhood_nodes": int(near.sum()),
        "max_on_neighborhood": near_max,
        "max_everywhere": float(diff.max()),
        "argmax_everywhere": pts[int(np.argmax(diff))].tolist(),
        "tol": tol,
    }
    return ComparisonReport(bool(near_max <= tol), bool(diff.max() <= tol), margins)


@dataclass
class ScanEntry:
    constant: float
    status: str
    lower_bounded: bool
    upper_bounded: bool
    ge_time: float | None  # first endpoint with T c >= c
    le_time: float | None  # first endpoint with T c <= c


@dataclass
class ExistenceReport:
    entries: list[ScanEntry]
    criterion_bounds: bool
    criterion_order: bool

    @property
    def solutions_exist(self) -> bool:
        return self.criterion_bounds or self.criterion_order

    def to_dict(self) -> dict:
        return {
            "solutions_exist": self.solutions_exist,
            "criterion_bounds": self.criterion_bounds,
            "criterion_order": self.criterion_order,
            "entries": [e.__dict__ for e in self.entries],
        }


def _settles(history: list[float], sign: float) -> bool:
    """True unless ``sign * history`` keeps drifting outward: the last
    outward increment must be at most half the largest early one."""
    d = np.diff(sign * np.asarray(history, float))
    if d.size < 2:
        return True
    early = max(float(d[: d.size // 2].max()), 0.0)
    return bool(d[-1] <= 0.5 * early + 1e-12 * max(1.0, float(np.abs(history).max())))


def existence_scan(constants, chunk: float, max_horizon: float, L, params: SchemeParams,
                   grid: PeriodicGrid, blowup: float = 1e6, tol_limit: float = 1e-8) -> ExistenceReport:
    """Classify existence of stationary solutions from constant initial data."""
    stencil = build_stencil(grid, params)
    entries = []
    for c in constants:
        phi = GridFunction.constant(grid, c)
        rep = long_time(phi, chunk, max_horizon, L, params, tol_limit, blowup, stencil=stencil)
        lower = rep.status == CONVERGED or (
            min(rep.inf_history) > -blowup and _settles(rep.inf_history, -1.0))
        upper = rep.status == CONVERGED or (
            max(rep.sup_history) < blowup and _settles(rep.sup_history, 1.0))
        ge = next((t for t, lo in zip(rep.times[1:], rep.inf_history[1:]) if lo >= c), None)
        le = next((t for t, hi in zip(rep.times[1:], rep.sup_history[1:]) if hi <= c), None)
        entries.append(ScanEntry(float(c), rep.status, bool(lower), bool(upper), ge, le))
    bounds = any(e.lower_bounded for e in entries) and any(e.upper_bounded for e in entries)
    order = any(e.ge_time is not None for e in entries) and any(e.le_time is not None for e in entries)
    return ExistenceReport(entries, bounds, order)
