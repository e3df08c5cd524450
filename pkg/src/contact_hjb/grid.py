"""Flat periodic domains (circle and 2-torus), grid functions and
space-time fields."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import GridMismatchError, PreconditionError
from .expression import Expression

FLOAT_FMT = "{:.17g}"


def fmt(value: float) -> str:
    return FLOAT_FMT.format(float(value))


@dataclass(frozen=True)
class PeriodicGrid:
    """Uniform periodic grid with fundamental domain ``(-L/2, L/2]`` per axis.

    Node ``i`` sits at ``-L/2 + (i + 1) h`` so the right end of the
    fundamental domain is a node.
    """

    lengths: tuple[float, ...] = (2.0,)
    counts: tuple[int, ...] = (400,)

    def __post_init__(self):
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "counts", tuple(int(n) for n in self.counts))
        if len(self.lengths) != len(self.counts) or len(self.counts) not in (1, 2):
            raise PreconditionError("grid dimension must be 1 or 2")
        if min(self.counts) < 4:
            raise PreconditionError("need at least 4 nodes per axis")
        if min(self.lengths) <= 0:
            raise PreconditionError("period lengths must be positive")

    @classmethod
    def circle(cls, n: int = 400, length: float = 2.0) -> "PeriodicGrid":
        return cls((length,), (n,))

    @classmethod
    def torus(cls, n: tuple[int, int], lengths: tuple[float, float] = (2.0, 2.0)):
        return cls(tuple(lengths), tuple(n))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.counts

    @property
    def size(self) -> int:
        return int(np.prod(self.counts))

    @property
    def spacing(self) -> tuple[float, ...]:
        return tuple(L / n for L, n in zip(self.lengths, self.counts))

    @property
    def h(self) -> float:
        """Largest spacing (the single spacing on the circle)."""
        return max(self.spacing)

    def axis(self, k: int) -> np.ndarray:
        L, n = self.lengths[k], self.counts[k]
        return -L / 2 + (np.arange(n) + 1) * (L / n)

    def coords(self) -> list[np.ndarray]:
        """Per-axis coordinate arrays of shape ``self.shape``."""
        return list(np.meshgrid(*(self.axis(k) for k in range(self.dim)), indexing="ij"))

    def points(self) -> np.ndarray:
        """Node coordinates, shape ``(size, dim)`` in row-major node order."""
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def to_dict(self) -> dict:
        return {"dimension": self.dim, "lengths": list(self.lengths), "counts": list(self.counts)}


def wrap(grid: PeriodicGrid, point):
    """Map ``point`` into the fundamental domain ``(-L/2, L/2]``."""
    p = np.asarray(point, dtype=float)
    L = grid.lengths[0] if grid.dim == 1 else np.asarray(grid.lengths)
    half = np.asarray(L) / 2
    out = half - np.mod(half - p, L)
    return out if out.ndim else float(out)


def circle_distance(a, b, length: float = 2.0):
    d = np.mod(np.abs(np.asarray(a, float) - np.asarray(b, float)), length)
    return np.minimum(d, length - d)


def torus_distance(grid: PeriodicGrid, a, b):
    """Quotient (Euclidean) distance between points of shape ``(..., dim)``;
    on the circle plain scalars or arrays of scalars are accepted too."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    if grid.dim == 1:
        a = a if a.ndim and a.shape[-1] == 1 else a[..., None]
        b = b if b.ndim and b.shape[-1] == 1 else b[..., None]
    comps = [circle_distance(a[..., k], b[..., k], grid.lengths[k]) for k in range(grid.dim)]
    return np.sqrt(sum(c * c for c in comps))


def _index_coords(grid: PeriodicGrid, point):
    """Fractional node indices of a (wrapped) point, one per axis."""
    p = np.asarray(point, dtype=float)
    out = []
    for k in range(grid.dim):
        L, n = grid.lengths[k], grid.counts[k]
        h = L / n
        comp = p if grid.dim == 1 else p[..., k]
        q = L / 2 - np.mod(L / 2 - comp, L)
        out.append((q + L / 2) / h - 1.0)
    return out


@dataclass(frozen=True, eq=False)
class GridFunction:
    grid: PeriodicGrid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if not np.all(np.isfinite(vals)):
            raise PreconditionError("grid function values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @classmethod
    def constant(cls, grid: PeriodicGrid, c: float) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(c)))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def with_values(self, values) -> "GridFunction":
        return GridFunction(self.grid, values)

    def __neg__(self):
        return self.with_values(-self.values)

    def __add__(self, c: float):
        return self.with_values(self.values + c)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def to_csv(self, path) -> None:
        pts = self.grid.points()
        header = ["x", "y"][: self.grid.dim] + ["value"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for p, v in zip(pts, self.flat):
                w.writerow([fmt(c) for c in p] + [fmt(v)])

    @classmethod
    def from_csv(cls, grid: PeriodicGrid, path) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != grid.size:
            raise GridMismatchError(f"{path}: {len(rows)} rows for a grid of {grid.size} nodes")
        pts = grid.points()
        axes = ["x", "y"][: grid.dim]
        for p, row in zip(pts, rows):
            for k, a in enumerate(axes):
                if abs(float(row[a]) - p[k]) > 1e-9 * max(grid.lengths):
                    raise GridMismatchError(f"{path}: node coordinates do not match the grid")
        return cls(grid, np.array([float(r["value"]) for r in rows]))


def interpolate(f: GridFunction, point) -> float:
    """Periodic (multi)linear interpolation; exact at nodes."""
    grid = f.grid
    idx = _index_coords(grid, point)
    corners = [(0,), (1,)] if grid.dim == 1 else [(0, 0), (1, 0), (0, 1), (1, 1)]
    base = [np.floor(s).astype(int) for s in idx]
    frac = [s - b for s, b in zip(idx, base)]
    total = 0.0
    for c in corners:
        w = 1.0
        index = []
        for k, ck in enumerate(c):
            w = w * (frac[k] if ck else 1.0 - frac[k])
            index.append(np.mod(base[k] + ck, grid.counts[k]))
        total = total + w * f.values[tuple(index)]
    total = np.asarray(total)
    return float(total) if total.ndim == 0 else total


def sup_norm_diff(f: GridFunction, g: GridFunction) -> float:
    if f.grid != g.grid:
        raise GridMismatchError("grid functions live on different grids")
    return float(np.max(np.abs(f.values - g.values)))


def from_expression(grid: PeriodicGrid, expr) -> GridFunction:
    """Evaluate an expression in ``x`` (and ``y`` on the torus) at the nodes."""
    if not isinstance(expr, Expression):
        expr = Expression(expr)
    allowed = {"x"} if grid.dim == 1 else {"x", "y"}
    extra = expr.variables - allowed
    if extra:
        raise PreconditionError(f"expression {expr.text!r} uses unsupported variables {sorted(extra)}")
    coords = grid.coords()
    bound = {"x": coords[0]}
    if grid.dim == 2:
        bound["y"] = coords[1]
    vals = np.broadcast_to(np.asarray(expr(**bound), dtype=float), grid.shape)
    return GridFunction(grid, vals)


@dataclass(eq=False)
class SpaceTimeField:
    """Snapshots ``u(., t_n)`` for ``t_n = n dt``; optional per-step argmin
    velocities (``argmins[n]`` belongs to the step producing snapshot n+1)."""

    grid: PeriodicGrid
    dt: float
    snapshots: np.ndarray  # (n_steps + 1, size)
    argmins: np.ndarray | None = None  # (n_steps, size, dim)
    meta: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.snapshots.shape[0] - 1

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    def snapshot(self, n: int) -> GridFunction:
        return GridFunction(self.grid, self.snapshots[n])

    @property
    def initial(self) -> GridFunction:
        return self.snapshot(0)

    @property
    def final(self) -> GridFunction:
        return self.snapshot(self.n_steps)

    @classmethod
    def constant_in_time(cls, phi: GridFunction, dt: float, n_steps: int) -> "SpaceTimeField":
        snaps = np.broadcast_to(phi.flat, (n_steps + 1, phi.grid.size))
        return cls(phi.grid, dt, snaps)

    def export(self, directory, stride: int = 1, extra: dict | None = None) -> Path:
        """Write one CSV per exported snapshot plus ``manifest.json``."""
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        indices = list(range(0, self.n_steps + 1, max(1, stride)))
        if indices[-1] != self.n_steps:
            indices.append(self.n_steps)
        width = max(4, len(str(self.n_steps)))
        files = []
        for n in indices:
            name = f"snapshot_{n:0{width}d}.csv"
            self.snapshot(n).to_csv(out / name)
            files.append({"step": n, "t": float(n * self.dt), "file": name})
        manifest = {
            "dt": float(self.dt),
            "n_steps": self.n_steps,
            "grid": self.grid.to_dict(),
            "picard_iterations": self.meta.get("picard_iterations", 0),
            "increments": [float(v) for v in self.meta.get("increments", [])],
            "snapshots": files,
        }
        if extra:
            manifest.update(extra)
        (out / "manifest.json").write_text(to_json(manifest) + "\n")
        return out


def steps_for(t: float, dt: float) -> int:
    """Number of steps of size ``dt`` covering ``t``; ``t`` must be a multiple."""
    n = round(t / dt)
    if n < 0 or not math.isclose(n * dt, t, rel_tol=1e-9, abs_tol=1e-12):
        raise PreconditionError(f"horizon {t} is not a nonnegative multiple of dt={dt}")
    return int(n)


def to_json(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON text with sorted keys and floats at 17 significant digits.

    Non-finite floats are written as the strings "inf", "-inf" and "nan".
    """
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {to_json(obj[k], indent, _level + 1)}"
                 for k in sorted(obj, key=str)]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        return "[\n" + ",\n".join(pad + to_json(v, indent, _level + 1) for v in seq) + "\n" + end + "]"
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return '"nan"'
        if math.isinf(v):
            return '"inf"' if v > 0 else '"-inf"'
        return fmt(v)
    return json.dumps(str(obj) if not isinstance(obj, str) else obj)
