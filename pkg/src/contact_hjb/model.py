"""Contact Hamiltonians H(x, u, p), their Lagrangians, and the discrete
Legendre transform.

Lagrangian values outside the effective domain are ``math.inf``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .errors import ModelError, RangeError
from .expression import Expression

INF = math.inf


def _as_expr(e) -> Expression:
    return e if isinstance(e, Expression) else Expression(str(e))


def _bind_x(x, dim: int) -> dict:
    x = np.asarray(x, dtype=float)
    if dim == 1:
        return {"x": x}
    return {"x": x[..., 0], "y": x[..., 1]}


def _sq(v, dim: int):
    v = np.asarray(v, dtype=float)
    return v * v if dim == 1 else v[..., 0] * v[..., 0] + v[..., 1] * v[..., 1]


class QuadraticContactHamiltonian:
    """``H(x, u, p) = g(u) + a |p|^2 / 2 + V(x)``."""

    family = "QuadraticContact"

    def __init__(self, g="0", V="0", a: float = 1.0, lam: float | None = None,
                 p_max: float = 8.0, dim: int = 1):
        self.g = _as_expr(g)
        self.V = _as_expr(V)
        self.a = float(a)
        self.dim = int(dim)
        self.p_max = float(p_max)
        if self.a <= 0:
            raise ModelError("kinetic coefficient a must be positive")
        if self.g.variables - {"u"}:
            raise ModelError(f"coupling g may only use u, got {sorted(self.g.variables)}")
        allowed = {"x"} if self.dim == 1 else {"x", "y"}
        if self.V.variables - allowed:
            raise ModelError(f"potential V may only use {sorted(allowed)}")
        self.lam = float(lam) if lam is not None else estimate_lipschitz(self.coupling)
        if self.lam < 0:
            raise ModelError("lambda must be nonnegative")

    def coupling(self, u):
        return np.broadcast_to(np.asarray(self.g(u=np.asarray(u, float)), float), np.shape(u))

    def potential(self, x):
        x = np.asarray(x, float)
        shape = x.shape if self.dim == 1 else x.shape[:-1]
        return np.broadcast_to(np.asarray(self.V(**_bind_x(x, self.dim)), float), shape)

    def evaluate(self, x, u, p):
        return self.coupling(u) + self.a * _sq(p, self.dim) / 2 + self.potential(x)

    def strictly_decreasing_in_u(self, u_range: float = 10.0, samples: int = 201) -> bool:
        us = np.linspace(-u_range, u_range, samples)
        return bool(np.all(np.diff(self.coupling(us)) < 0))

    def describe(self) -> dict:
        return {"family": self.family, "g": self.g.text, "V": self.V.text, "a": self.a,
                "lambda": self.lam, "p_max": self.p_max, "dimension": self.dim}


class TabulatedHamiltonian:
    """Samples of H on an ``(x, u, p)`` lattice over the circle.

    Interpolation is trilinear: periodic in x, linear extrapolation in u,
    and ``|p| <= p_max`` is enforced.
    """

    family = "Tabulated"
    dim = 1

    def __init__(self, xs, us, ps, values, lam: float, length: float = 2.0):
        self.xs = np.asarray(xs, float)
        self.us = np.asarray(us, float)
        self.ps = np.asarray(ps, float)
        self.values = np.asarray(values, float).reshape(len(self.xs), len(self.us), len(self.ps))
        self.lam = float(lam)
        self.length = float(length)
        if np.any(np.diff(self.xs) <= 0) or np.any(np.diff(self.us) <= 0) or np.any(np.diff(self.ps) <= 0):
            raise ModelError("tabulated lattice axes must be strictly increasing")
        if len(self.us) < 2 or len(self.ps) < 3:
            raise ModelError("tabulated lattice needs >= 2 u values and >= 3 p values")
        self.p_max = float(min(-self.ps[0], self.ps[-1]))

    @classmethod
    def from_csv(cls, path, lam: float, length: float = 2.0) -> "TabulatedHamiltonian":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["x", "u", "p", "H"]:
                raise ModelError(f"{path}: expected header x,u,p,H")
            rows = [(float(r["x"]), float(r["u"]), float(r["p"]), float(r["H"])) for r in reader]
        xs, us, ps = (np.unique([r[k] for r in rows]) for k in range(3))
        table = np.full((len(xs), len(us), len(ps)), np.nan)
        for x, u, p, H in rows:
            table[np.searchsorted(xs, x), np.searchsorted(us, u), np.searchsorted(ps, p)] = H
        if np.isnan(table).any():
            raise ModelError(f"{path}: samples do not form a complete x,u,p lattice")
        return cls(xs, us, ps, table, lam, length)

    def _x_cells(self, x):
        x = np.asarray(x, float)
        L = self.length
        xs = np.concatenate([self.xs, [self.xs[0] + L]])
        q = np.mod(x - self.xs[0], L) + self.xs[0]
        j = np.clip(np.searchsorted(xs, q, side="right") - 1, 0, len(self.xs) - 1)
        w = (q - xs[j]) / (xs[j + 1] - xs[j])
        return j, (j + 1) % len(self.xs), w

    def _u_cells(self, u):
        u = np.asarray(u, float)
        k = np.clip(np.searchsorted(self.us, u, side="right") - 1, 0, len(self.us) - 2)
        w = (u - self.us[k]) / (self.us[k + 1] - self.us[k])
        return k, w

    def evaluate(self, x, u, p):
        p = np.asarray(p, float)
        if np.any(np.abs(p) > self.p_max * (1 + 1e-12)):
            raise RangeError(f"|p| exceeds the tabulated range p_max={self.p_max}")
        x, u, p = np.broadcast_arrays(np.asarray(x, float), np.asarray(u, float), p)
        j0, j1, wx = self._x_cells(x)
        k, wu = self._u_cells(u)
        m = np.clip(np.searchsorted(self.ps, p, side="right") - 1, 0, len(self.ps) - 2)
        wp = (p - self.ps[m]) / (self.ps[m + 1] - self.ps[m])
        out = 0.0
        for jj, fx in ((j0, 1 - wx), (j1, wx)):
            for kk, fu in ((k, 1 - wu), (k + 1, wu)):
                for mm, fp in ((m, 1 - wp), (m + 1, wp)):
                    out = out + fx * fu * fp * self.values[jj, kk, mm]
        return out

    def strictly_decreasing_in_u(self, *_args) -> bool:
        return bool(np.all(np.diff(self.values, axis=1) < 0))

    def describe(self) -> dict:
        return {"family": self.family, "lambda": self.lam, "p_max": self.p_max,
                "lattice": [len(self.xs), len(self.us), len(self.ps)]}


def hamiltonian_eval(model, x, u, p) -> float:
    out = model.evaluate(x, u, p)
    return float(out) if np.ndim(out) == 0 else out


def estimate_lipschitz(fn, u_range: float = 10.0, samples: int = 2001) -> float:
    us = np.linspace(-u_range, u_range, samples)
    vals = np.asarray(fn(us), float)
    return float(np.max(np.abs(np.diff(vals)) / np.diff(us)))


@dataclass
class LipschitzReport:
    max_slope: float
    lam: float
    passed: bool
    witness: dict


def _sample_points(model, n: int):
    if model.dim == 1:
        return np.linspace(-1.0, 1.0, n) if not hasattr(model, "xs") else np.linspace(
            model.xs[0], model.xs[-1], n)
    s = np.linspace(-1.0, 1.0, n)
    return np.stack([s, 0.7 * s[::-1]], axis=-1)


def _sample_momenta(model, n: int):
    s = np.linspace(-model.p_max, model.p_max, n)
    return s if model.dim == 1 else np.stack([s, -0.3 * s], axis=-1)


def validate_lipschitz(model, sample_count: int, u_range: float = 10.0) -> LipschitzReport:
    """Largest observed u-difference quotient on a sampling lattice."""
    if sample_count < 2:
        raise ValueError("sample_count must be >= 2")
    us = np.linspace(-u_range, u_range, sample_count)
    if hasattr(model, "us"):
        us = np.linspace(model.us[0], model.us[-1], sample_count)
    best = (-1.0, None)
    for x in _sample_points(model, sample_count):
        for p in _sample_momenta(model, sample_count):
            Hs = np.asarray(model.evaluate(x, us, p), float)
            slopes = np.abs(np.diff(Hs)) / np.diff(us)
            j = int(np.argmax(slopes))
            if slopes[j] > best[0]:
                best = (float(slopes[j]), {"x": np.asarray(x).tolist(), "p": np.asarray(p).tolist(),
                                           "u": float(us[j]), "u2": float(us[j + 1])})
    passed = best[0] <= model.lam * (1 + 1e-6)
    return LipschitzReport(best[0], model.lam, passed, best[1])


def check_convexity(model, samples: int = 41, tol: float = 1e-9) -> None:
    """Midpoint convexity in p on sampled (x, u); raises ModelError with the triple."""
    us = np.linspace(-1.0, 1.0, 5) if not hasattr(model, "us") else model.us
    ps = np.linspace(-model.p_max, model.p_max, samples) if model.dim == 1 else None
    for x in _sample_points(model, 9):
        for u in us:
            if model.dim == 1:
                _convex_or_raise(model.evaluate(x, u, ps), ps, x, u, tol)
            else:
                s = np.linspace(-model.p_max, model.p_max, samples)
                for direction in (np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.6, 0.8])):
                    _convex_or_raise(model.evaluate(x, u, s[:, None] * direction), s, x, u, tol)


def _convex_or_raise(Hp, ps, x, u, tol):
    Hp = np.asarray(Hp, float)
    second = Hp[:-2] - 2 * Hp[1:-1] + Hp[2:]
    bad = np.nonzero(second < -tol * np.maximum(1.0, np.abs(Hp[1:-1])))[0]
    if bad.size:
        j = int(bad[0])
        raise ModelError(
            f"H is not convex in p at x={np.asarray(x).tolist()}, u={float(u)}: "
            f"p triple ({ps[j]}, {ps[j + 1]}, {ps[j + 2]})"
        )


def check_coercivity(model, margin: float = 1e-6) -> bool:
    for x in _sample_points(model, 9):
        p_hi = model.p_max if model.dim == 1 else np.array([model.p_max, 0.0])
        h0 = model.evaluate(x, 0.0, 0.0 if model.dim == 1 else np.zeros(2))
        if min(model.evaluate(x, 0.0, p_hi), model.evaluate(x, 0.0, -p_hi)) < h0 + margin:
            return False
    return True


@dataclass
class LegendreRow:
    v: np.ndarray
    values: np.ndarray  # INF where edge_active
    raw: np.ndarray  # discrete maximum, finite
    argmax_p: np.ndarray
    edge_active: np.ndarray


def _check_p_grid(p_grid):
    p = np.asarray(p_grid, float)
    if p.ndim != 1 or p.size < 3:
        raise ModelError("p_grid must be a 1-D array of at least 3 momenta")
    steps = np.diff(p)
    if np.any(steps <= 0) or np.ptp(steps) > 1e-9 * np.max(np.abs(p)) or abs(p[0] + p[-1]) > 1e-9 * abs(p[-1]):
        raise ModelError("p_grid must be uniform and symmetric about 0")
    return p


def legendre_transform(model, x, u, v_grid, p_grid) -> LegendreRow:
    """``L(x,u,v) = max_p (p v - H(x,u,p))`` over ``p_grid``.

    Entries whose maximiser sits on the boundary of ``p_grid`` are flagged
    ``edge_active`` and set to INF. Ties go to the smallest ``|p|``.
    """
    if model.dim != 1:
        raise ModelError("the discrete Legendre transform is implemented on the circle only")
    p = _check_p_grid(p_grid)
    v = np.asarray(v_grid, float)
    Hp = np.asarray(model.evaluate(x, u, p), float)
    _convex_or_raise(Hp, p, x, u, 1e-9)
    order = np.lexsort((p, np.abs(p)))
    obj = v[:, None] * p[None, order] - Hp[None, order]
    j = order[np.argmax(obj, axis=1)]
    raw = v * p[j] - Hp[j]
    edge = (j == 0) | (j == p.size - 1)
    return LegendreRow(v, np.where(edge, INF, raw), raw, p[j], edge)


class QuadraticLagrangian:
    """Closed form ``L = -g(u) + |v|^2/(2a) - V(x)`` of a QuadraticContact model."""

    analytic = True

    def __init__(self, hamiltonian: QuadraticContactHamiltonian):
        self.hamiltonian = hamiltonian
        self.lam = hamiltonian.lam
        self.dim = hamiltonian.dim
        self._half_inv_a = 0.5 / hamiltonian.a

    def value(self, x, u, v):
        H = self.hamiltonian
        return (-H.coupling(u) + _sq(v, self.dim) * self._half_inv_a) - H.potential(x)

    def cost_matrix(self, x, u, v):
        """``L(x_i, u_i, v_m)`` with shape ``(len(v), len(x))``."""
        H = self.hamiltonian
        kin = _sq(v, self.dim) * self._half_inv_a
        return (-H.coupling(u)[None, :] + kin[:, None]) - H.potential(x)[None, :]

    def strictly_increasing_in_u(self) -> bool:
        return self.hamiltonian.strictly_decreasing_in_u()


class TabulatedLagrangian:
    """Legendre tables per ``(x, u)`` lattice cell over a fixed velocity grid."""

    analytic = False
    dim = 1

    def __init__(self, hamiltonian: TabulatedHamiltonian, v_grid, p_count: int = 801):
        self.hamiltonian = hamiltonian
        self.lam = hamiltonian.lam
        self.v_grid = np.sort(np.asarray(v_grid, float))
        p_grid = np.linspace(-hamiltonian.p_max, hamiltonian.p_max, p_count)
        H = hamiltonian
        self.table = np.empty((len(H.xs), len(H.us), len(self.v_grid)))
        self.edge = np.zeros((len(H.xs), len(H.us), len(self.v_grid)), bool)
        self.argmax_p = np.empty_like(self.table)
        for i, x in enumerate(H.xs):
            for k, u in enumerate(H.us):
                row = legendre_transform(H, x, u, self.v_grid, p_grid)
                self.table[i, k] = row.values
                self.edge[i, k] = row.edge_active
                self.argmax_p[i, k] = row.argmax_p
        # the effective domain is u-independent; one mask per x node
        self.mask = self.edge.any(axis=1)

    def value(self, x, u, v):
        H = self.hamiltonian
        x, u, v = np.broadcast_arrays(np.asarray(x, float), np.asarray(u, float), np.asarray(v, float))
        j0, j1, wx = H._x_cells(x)
        k, wu = H._u_cells(u)
        vg = self.v_grid
        m = np.clip(np.searchsorted(vg, v, side="right") - 1, 0, len(vg) - 2)
        wv = np.clip((v - vg[m]) / (vg[m + 1] - vg[m]), 0.0, 1.0)
        outside = (v < vg[0] - 1e-12) | (v > vg[-1] + 1e-12)
        blocked = outside.copy()
        table = np.where(np.isfinite(self.table), self.table, 0.0)
        out = 0.0
        for jj, fx in ((j0, 1 - wx), (j1, wx)):
            for mm, fv in ((m, 1 - wv), (m + 1, wv)):
                blocked |= self.mask[jj, mm] & (fv > 0)
                for kk, fu in ((k, 1 - wu), (k + 1, wu)):
                    out = out + fx * fu * fv * table[jj, kk, mm]
        return np.where(blocked, INF, out)

    def cost_matrix(self, x, u, v):
        v = np.asarray(v, float)
        return self.value(np.asarray(x)[None, :], np.asarray(u)[None, :], v[:, None])

    def strictly_increasing_in_u(self) -> bool:
        return self.hamiltonian.strictly_decreasing_in_u()


class DualLagrangian:
    """``L(x, -u, -v)``: the Lagrangian whose backward semigroup gives the
    forward one by ``T+ phi = -Tbar-(-phi)``."""

    def __init__(self, base):
        self.base = base
        self.lam = base.lam
        self.dim = base.dim
        self.analytic = getattr(base, "analytic", False)

    def value(self, x, u, v):
        return self.base.value(x, -np.asarray(u, float), -np.asarray(v, float))

    def cost_matrix(self, x, u, v):
        return self.base.cost_matrix(x, -np.asarray(u, float), -np.asarray(v, float))

    def strictly_increasing_in_u(self) -> bool:
        return False


def lagrangian(model, v_grid=None, p_count: int = 801):
    """Lagrangian of ``model``: analytic when available, else tabulated on ``v_grid``."""
    if isinstance(model, QuadraticContactHamiltonian):
        return QuadraticLagrangian(model)
    if v_grid is None:
        raise ModelError("a tabulated Hamiltonian needs a velocity grid for its Legendre tables")
    return TabulatedLagrangian(model, v_grid, p_count)


def lagrangian_eval(L, x, u, v) -> float:
    out = L.value(x, u, v)
    return float(out) if np.ndim(out) == 0 else out
