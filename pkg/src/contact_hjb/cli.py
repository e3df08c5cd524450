"""Command line entry point: ``contact-hjb <command> --config <path> [--out <dir>]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig, load_config
from .errors import ContactHJBError, OracleMismatchError, PreconditionError
from .grid import GridFunction, fmt, from_expression, steps_for, to_json, torus_distance
from .model import lagrangian, legendre_transform, validate_lipschitz
from .oracle import run_oracle_suite
from .semigroup import picard, t_plus_field
from .weakkam import (
    aubry_equality_set,
    alpha_limit,
    comparison_check,
    conjugate_pair,
    existence_scan,
    fixed_point_residual,
    half_limit,
    long_time,
    stationary_field,
    trace_minimizer,
    UNBOUNDED,
)

COMMANDS = ("evolve", "fixpoint", "weakkam", "compare", "legendre", "oracle-check", "existence-scan")


def diagnostic(event: str, **data) -> None:
    """One JSON line on standard error."""
    sys.stderr.write(json.dumps({"event": event, **data}, sort_keys=True, default=str) + "\n")


class Context:
    def __init__(self, cfg: RunConfig, config_path: Path, out: Path):
        self.cfg = cfg
        self.base = config_path.parent
        self.out = out
        self.grid = cfg.build_grid()
        self.params = cfg.build_params()
        self.model = cfg.build_model(self.base)
        self._L = None

    @property
    def L(self):
        if self._L is None:
            from .semigroup import velocity_grid

            v = velocity_grid(self.params, self.grid.dim)
            self._L = lagrangian(self.model, v, self.cfg.run.p_count)
        return self._L

    def function(self, expr: str, csv_path: str = "") -> GridFunction:
        if csv_path:
            path = Path(csv_path)
            return GridFunction.from_csv(self.grid, path if path.is_absolute() else self.base / path)
        return from_expression(self.grid, expr)

    def write_json(self, name: str, payload: dict) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(to_json(payload) + "\n")
        return path

    def write_csv(self, name: str, f: GridFunction) -> str:
        self.out.mkdir(parents=True, exist_ok=True)
        f.to_csv(self.out / name)
        return name


def cmd_evolve(ctx: Context) -> dict:
    run = ctx.cfg.run
    phi = ctx.function(run.initial, run.initial_csv)
    steps_for(run.horizon, ctx.params.dt)
    if run.direction == "minus":
        field_, diag = picard(phi, run.horizon, ctx.L, ctx.params, record_argmins=True)
    else:
        field_, diag = t_plus_field(phi, run.horizon, ctx.L, ctx.params)
    extra = {"direction": run.direction, "converged": diag.converged,
             "argmin_bound_hits": diag.bound_hits}
    field_.meta.update(picard_iterations=diag.iterations, increments=diag.increments)
    field_.export(ctx.out, run.stride, extra)
    if diag.bound_hits:
        diagnostic("velocity_bound_active", nodes=diag.bound_hits)
    return {"picard_iterations": diag.iterations, "converged": diag.converged}


def cmd_fixpoint(ctx: Context) -> dict:
    run = ctx.cfg.run
    phi = ctx.function(run.initial, run.initial_csv)
    rep = long_time(phi, run.chunk, run.max_horizon, ctx.L, ctx.params, run.tol_limit,
                    run.blowup, direction=run.direction)
    payload = {
        "status": rep.status,
        "times": rep.times,
        "sup_history": rep.sup_history,
        "inf_history": rep.inf_history,
        "differences": rep.differences,
        "tol_limit": rep.tol_limit,
        "blowup": rep.blowup,
        "growth": rep.growth(),
        "grid": ctx.grid.to_dict(),
    }
    if rep.limit is not None:
        payload["limit_csv"] = ctx.write_csv("limit.csv", rep.limit)
    if rep.status != UNBOUNDED:
        low = half_limit(rep)
        payload["half_limit_csv"] = ctx.write_csv("half_limit.csv", low)
        payload["half_limit_residual"] = fixed_point_residual(low, run.chunk, ctx.L, ctx.params)
    ctx.write_json("limit_report.json", payload)
    return {"status": rep.status}


def _eta(ctx: Context) -> float:
    return 3 * ctx.grid.h if ctx.cfg.run.eta is None else ctx.cfg.run.eta


def cmd_weakkam(ctx: Context) -> dict:
    run = ctx.cfg.run
    u_minus = ctx.function(run.initial, run.initial_csv)
    pair = conjugate_pair(u_minus, run.chunk, run.max_horizon, ctx.L, ctx.params,
                          run.tol_limit, run.residual_tol)
    est = aubry_equality_set(pair, _eta(ctx))
    trace_params = ctx.cfg.build_params(run.trace_m_v)
    trace_L = lagrangian(ctx.model, _velocities(trace_params, ctx.grid.dim), run.p_count)
    n = steps_for(run.trace_horizon, ctx.params.dt)
    field_ = stationary_field(u_minus, n, trace_L, trace_params)
    x0 = _nearest_point(ctx, run.trace_x)
    curve = trace_minimizer(field_, x0, run.trace_horizon)
    alpha = alpha_limit(curve, run.tail_fraction)
    nodes = est.points
    inside = [bool(nodes.size and np.min(torus_distance(ctx.grid, nodes, np.broadcast_to(a, nodes.shape)))
                   <= ctx.grid.h * (1 + 1e-9)) for a in alpha]
    payload = {
        "grid": ctx.grid.to_dict(),
        "u_minus_csv": ctx.write_csv("u_minus.csv", pair.u_minus),
        "u_plus_csv": ctx.write_csv("u_plus.csv", pair.u_plus),
        "gap_csv": ctx.write_csv("gap.csv", est.gap),
        "aubry_nodes": [p.tolist() for p in nodes],
        "eta": est.eta,
        "residual_minus": pair.residual_minus,
        "residual_plus": pair.residual_plus,
        "forward_horizon": pair.horizon,
        "forward_max_increase": pair.max_increase,
        "trace": {"start": np.atleast_1d(x0).tolist(), "horizon": run.trace_horizon,
                  "velocity_count": trace_params.m_v, "snap_distance": curve.snap_distance,
                  "alpha_limit": alpha.tolist(), "alpha_in_aubry_set": inside},
    }
    ctx.write_json("weakkam.json", payload)
    return {"aubry_nodes": len(nodes), "alpha_limit": alpha.tolist()}


def _velocities(params, dim):
    from .semigroup import velocity_grid

    return velocity_grid(params, dim)


def _nearest_point(ctx: Context, x):
    pts = ctx.grid.points()
    target = np.broadcast_to(np.atleast_1d(np.asarray(x, float)), (ctx.grid.dim,))
    i = int(np.argmin(torus_distance(ctx.grid, pts, np.broadcast_to(target, pts.shape))))
    return pts[i] if ctx.grid.dim > 1 else float(pts[i, 0])


def cmd_compare(ctx: Context) -> dict:
    run = ctx.cfg.run
    v1 = ctx.function(run.v1)
    v2 = ctx.function(run.v2)
    pair = conjugate_pair(v2, run.chunk, run.max_horizon, ctx.L, ctx.params,
                          run.tol_limit, run.residual_tol)
    aubry2 = aubry_equality_set(pair, _eta(ctx))
    rep = comparison_check(v1, v2, aubry2, run.radius, ctx.L, ctx.params,
                           residual_tol=run.residual_tol)
    payload = rep.to_dict()
    payload["falsified"] = rep.falsified
    payload["aubry2_nodes"] = [p.tolist() for p in aubry2.points]
    ctx.write_json("compare.json", payload)
    return {"hypothesis": rep.hypothesis, "conclusion": rep.conclusion}


def cmd_legendre(ctx: Context) -> dict:
    if ctx.grid.dim != 1:
        raise PreconditionError("legendre tables are written for circle models only")
    run = ctx.cfg.run
    v = np.sort(_velocities(ctx.params, 1))
    p_grid = np.linspace(-ctx.model.p_max, ctx.model.p_max, run.p_count)
    ctx.out.mkdir(parents=True, exist_ok=True)
    edge_total = 0
    with open(ctx.out / "legendre.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "u", "v", "L", "edge_active", "argmax_p"])
        for x in ctx.grid.axis(0):
            for u in run.legendre_u:
                row = legendre_transform(ctx.model, x, u, v, p_grid)
                edge_total += int(row.edge_active.sum())
                for k in range(v.size):
                    value = "inf" if row.edge_active[k] else fmt(row.values[k])
                    w.writerow([fmt(x), fmt(u), fmt(v[k]), value,
                                "true" if row.edge_active[k] else "false", fmt(row.argmax_p[k])])
    lip = validate_lipschitz(ctx.model, 21)
    ctx.write_json("legendre.json", {"edge_active_entries": edge_total, "lipschitz": lip.__dict__})
    if edge_total:
        diagnostic("edge_active", entries=edge_total)
    return {"edge_active_entries": edge_total}


def cmd_oracle_check(ctx: Context) -> dict:
    run = ctx.cfg.run
    results = run_oracle_suite(ctx.grid, ctx.params, run.seed, run.instances)
    ctx.write_json("oracle.json", {"results": [r.to_dict() for r in results]})
    failed = [r.name for r in results if not r.passed]
    for r in results:
        diagnostic("oracle", **r.to_dict())
    if failed:
        raise OracleMismatchError(f"oracle checks failed: {', '.join(failed)}")
    return {"passed": len(results)}


def cmd_existence_scan(ctx: Context) -> dict:
    run = ctx.cfg.run
    rep = existence_scan(run.constants, run.chunk, run.max_horizon, ctx.L, ctx.params,
                         ctx.grid, run.blowup, run.tol_limit)
    ctx.write_json("existence.json", rep.to_dict())
    return {"solutions_exist": rep.solutions_exist}


HANDLERS = {
    "evolve": cmd_evolve,
    "fixpoint": cmd_fixpoint,
    "weakkam": cmd_weakkam,
    "compare": cmd_compare,
    "legendre": cmd_legendre,
    "oracle-check": cmd_oracle_check,
    "existence-scan": cmd_existence_scan,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="contact-hjb", description=__doc__)
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="run configuration file")
    parser.add_argument("--out", help="output directory (overrides [output] directory)")
    return parser


def run_command(cfg: RunConfig, command: str, config_path: Path, out: Path | None = None) -> dict:
    out = Path(out) if out is not None else config_path.parent / cfg.output.directory
    ctx = Context(cfg, config_path, out)
    return HANDLERS[command](ctx)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        path = Path(args.config)
        cfg = load_config(path)
        summary = run_command(cfg, args.command, path, Path(args.out) if args.out else None)
    except ContactHJBError as exc:
        diagnostic("error", kind=type(exc).__name__, message=str(exc), exit_code=exc.exit_code)
        return exc.exit_code
    diagnostic("done", command=args.command, **summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
