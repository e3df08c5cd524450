from __future__ import annotations

import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from contact_hjb.cli import main
from contact_hjb.config import RunConfig, configs_equal, load_config, parse_config, serialize_config
from contact_hjb.errors import ConfigError, ExpressionError, PreconditionError
from contact_hjb.grid import GridFunction, PeriodicGrid, from_expression

SMALL = """\
[model]
family = QuadraticContact
g = -3*u
V = 0.5*x^2
lambda = 3

[grid]
N = 40

[scheme]
dt = 0.02
v_max = 2
M_v = 41

[run]
horizon = 0.2
chunk = 0.5
max_horizon = 8
trace_horizon = 2
trace_m_v = 201
constants = -1, 0, 1
legendre_u = 0, 1
"""


def with_run_keys(text, **keys):
    """Set [run] keys (the run section is last in ``text``)."""
    lines = [ln for ln in text.splitlines() if ln.split(" = ")[0] not in keys]
    return "\n".join(lines + [f"{k} = {v}" for k, v in keys.items()]) + "\n"


def write_config(tmp_path, text=SMALL, **keys):
    path = tmp_path / "run.cfg"
    path.write_text(with_run_keys(text, **keys))
    return path


def run(tmp_path, command, text=SMALL, out="out", **keys):
    path = write_config(tmp_path, text, **keys)
    return main([command, "--config", str(path), "--out", str(tmp_path / out)])


def test_defaults_describe_the_circle_example():
    cfg = RunConfig()
    assert cfg.build_grid() == PeriodicGrid.circle(400)
    p = cfg.build_params()
    assert (p.dt, p.v_max, p.m_v) == (0.0025, 4.0, 161)
    assert cfg.build_model().lam == 3.0


def test_parse_types_and_auto():
    cfg = parse_config(SMALL + "eta = auto\nresidual_tol = 0.5\n")
    assert cfg.grid.N == [40] and cfg.scheme.M_v == 41
    assert cfg.run.eta is None and cfg.run.residual_tol == 0.5
    assert cfg.run.constants == [-1.0, 0.0, 1.0]
    assert cfg.model.lambda_ == 3.0


def test_torus_lengths_broadcast():
    cfg = parse_config("[grid]\ndimension = 2\nN = 8\nlengths = 2\n[model]\nV = cos(x)*cos(y)\n"
                       "[run]\ninitial = 0\nv1 = 0\nv2 = 0\n")
    assert cfg.build_grid() == PeriodicGrid.torus((8, 8))


@pytest.mark.parametrize(
    "text",
    [
        "[grid]\nN = 40\nbogus = 1\n",
        "[nonsense]\na = 1\n",
        "[scheme]\nM_v = many\n",
        "[scheme]\nM_v = 40\n",
        "[model]\nlambda = -1\n",
        "[run]\ndirection = sideways\n",
        "[grid]\ndimension = 2\nN = 4, 4, 4\n",
        "no section header\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_bad_expression_in_config():
    with pytest.raises(ExpressionError):
        parse_config("[model]\nV = 0.5*x^^2\n")


def test_round_trip_of_small_config():
    cfg = parse_config(SMALL)
    again = parse_config(serialize_config(cfg))
    assert configs_equal(cfg, again)
    assert serialize_config(again) == serialize_config(cfg)


@given(
    st.floats(1e-4, 0.05),
    st.integers(4, 500),
    st.sampled_from([1, 3, 41, 161]),
    st.one_of(st.none(), st.floats(0, 10)),
    st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=4),
)
def test_round_trip_property(dt, n, m_v, eta, constants):
    cfg = RunConfig()
    cfg.scheme.dt, cfg.scheme.M_v = dt, m_v
    cfg.scheme.v_max = 1.0
    cfg.grid.N = [n]
    cfg.run.eta = eta
    cfg.run.constants = constants
    cfg.run.initial = "0.25*cos(3*x) - max(x, 0)^2"
    assert configs_equal(parse_config(serialize_config(cfg)), cfg)


def test_load_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")


def test_exit_codes(tmp_path, capsys):
    assert main(["evolve", "--config", str(tmp_path / "missing.cfg")]) == 2
    assert run(tmp_path, "evolve", initial="1 +") == 3
    assert run(tmp_path, "evolve", horizon="0.03") == PreconditionError.exit_code
    assert run(tmp_path, "weakkam", initial="2 + cos(3*x)") == 8
    err = capsys.readouterr().err.strip().splitlines()
    last = json.loads(err[-1])
    assert last["event"] == "error" and last["exit_code"] == 8


def test_unknown_command_is_usage_error(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["explode", "--config", str(write_config(tmp_path))])
    assert info.value.code == 2


def test_evolve_zero_horizon_reproduces_initial_file(tmp_path):
    grid = PeriodicGrid.circle(40)
    from_expression(grid, "sin(3*x) + 0.1").to_csv(tmp_path / "init.csv")
    assert run(tmp_path, "evolve", horizon="0", initial_csv="init.csv") == 0
    assert (tmp_path / "out" / "snapshot_0000.csv").read_bytes() == (tmp_path / "init.csv").read_bytes()
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["n_steps"] == 0 and manifest["picard_iterations"] == 0


def test_evolve_exports_manifest(tmp_path):
    assert run(tmp_path, "evolve", stride="4") == 0
    manifest = json.loads((tmp_path / "out" / "manifest.json").read_text())
    assert manifest["n_steps"] == 10 and manifest["converged"] is True
    assert [s["step"] for s in manifest["snapshots"]] == [0, 4, 8, 10]
    assert set(manifest) >= {"dt", "n_steps", "grid", "picard_iterations", "increments"}
    final = GridFunction.from_csv(PeriodicGrid.circle(40), tmp_path / "out" / "snapshot_0010.csv")
    assert final.values.shape == (40,)


def test_forward_evolve(tmp_path):
    assert run(tmp_path, "evolve", direction="plus") == 0
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["direction"] == "plus"


def test_determinism_across_thread_counts(tmp_path, monkeypatch):
    outputs = []
    for threads in ("1", "4"):
        monkeypatch.setenv("CONTACT_HJB_THREADS", threads)
        assert run(tmp_path, "evolve", out=f"out{threads}") == 0
        outputs.append({p.name: p.read_bytes() for p in sorted((tmp_path / f"out{threads}").iterdir())})
    assert outputs[0] == outputs[1]


def test_fixpoint_report(tmp_path):
    text = SMALL.replace("g = -3*u", "g = u").replace("lambda = 3", "lambda = 1")
    assert run(tmp_path, "fixpoint", text=text, initial="1", max_horizon="32") == 0
    rep = json.loads((tmp_path / "out" / "limit_report.json").read_text())
    assert rep["status"] == "Converged"
    assert (tmp_path / "out" / rep["limit_csv"]).exists()
    assert rep["half_limit_residual"] >= 0


def test_fixpoint_unbounded(tmp_path):
    text = SMALL.replace("g = -3*u", "g = -u").replace("lambda = 3", "lambda = 1")
    assert run(tmp_path, "fixpoint", text=text, initial="1", max_horizon="32") == 0
    rep = json.loads((tmp_path / "out" / "limit_report.json").read_text())
    assert rep["status"] == "Unbounded" and "half_limit_csv" not in rep


def test_weakkam_bundle(tmp_path):
    assert run(tmp_path, "weakkam", trace_x="0.5") == 0
    bundle = json.loads((tmp_path / "out" / "weakkam.json").read_text())
    assert set(bundle) >= {"grid", "u_minus_csv", "u_plus_csv", "gap_csv", "aubry_nodes", "eta"}
    assert bundle["eta"] == pytest.approx(0.15)
    assert [0.0] in bundle["aubry_nodes"]
    grid = PeriodicGrid.circle(40)
    u_minus = GridFunction.from_csv(grid, tmp_path / "out" / bundle["u_minus_csv"])
    u_plus = GridFunction.from_csv(grid, tmp_path / "out" / bundle["u_plus_csv"])
    assert abs(u_plus.values[19]) <= 0.01
    assert np.all(u_plus.values <= u_minus.values + 0.01)


def test_compare_verdict(tmp_path):
    assert run(tmp_path, "compare") == 0
    verdict = json.loads((tmp_path / "out" / "compare.json").read_text())
    assert verdict["hypothesis"] is True and verdict["conclusion"] is True
    assert verdict["falsified"] is False
    assert set(verdict["margins"]) >= {"max_everywhere", "max_on_neighborhood"}


def test_legendre_table(tmp_path):
    assert run(tmp_path, "legendre") == 0
    with open(tmp_path / "out" / "legendre.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 40 * 2 * 41
    row = next(r for r in rows if r["x"] == "1" and r["u"] == "1" and r["v"] == "0")
    # L(1, 1, 0) = 3 - 1/2
    assert float(row["L"]) == 2.5 and row["edge_active"] == "false"
    meta = json.loads((tmp_path / "out" / "legendre.json").read_text())
    assert meta["edge_active_entries"] == 0 and meta["lipschitz"]["passed"] is True


def test_legendre_tabulated_model(tmp_path):
    with open(tmp_path / "h.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "u", "p", "H"])
        for x in (-0.5, 0.0, 0.5, 1.0):
            for u in (-1.0, 1.0):
                for p in np.linspace(-1, 1, 5):
                    w.writerow([x, u, p, -u + abs(p)])
    text = SMALL.replace("family = QuadraticContact", "family = Tabulated\ntable = h.csv").replace(
        "lambda = 3", "lambda = 1")
    assert run(tmp_path, "legendre", text=text) == 0
    meta = json.loads((tmp_path / "out" / "legendre.json").read_text())
    assert meta["edge_active_entries"] > 0
    assert run(tmp_path, "evolve", text=text, out="evo") == 0


def test_existence_scan(tmp_path):
    text = SMALL.replace("g = -3*u", "g = u").replace("lambda = 3", "lambda = 1")
    assert run(tmp_path, "existence-scan", text=text) == 0
    rep = json.loads((tmp_path / "out" / "existence.json").read_text())
    assert rep["solutions_exist"] is True
    assert [e["constant"] for e in rep["entries"]] == [-1.0, 0.0, 1.0]


def test_oracle_check_small(tmp_path):
    text = SMALL.replace("N = 40", "N = 100").replace("dt = 0.02", "dt = 0.01")
    assert run(tmp_path, "oracle-check", text=text, instances="3") == 0
    results = json.loads((tmp_path / "out" / "oracle.json").read_text())["results"]
    assert all(r["passed"] for r in results)


@pytest.mark.slow
def test_oracle_check_default_config(tmp_path):
    path = tmp_path / "default.cfg"
    path.write_text(serialize_config(RunConfig()))
    proc = subprocess.run(
        [sys.executable, "-m", "contact_hjb.cli", "oracle-check", "--config", str(path),
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    events = [json.loads(line) for line in proc.stderr.splitlines()]
    assert events[-1]["event"] == "done"


def test_documented_defaults_parse_to_defaults():
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    block = readme.split("```ini\n", 1)[1].split("```", 1)[0]
    assert configs_equal(parse_config(block), RunConfig())


def test_inline_comments():
    cfg = parse_config("[scheme]\ndt = 0.01   # step\n; full-line comment\nM_v = 21\n")
    assert cfg.scheme.dt == 0.01 and cfg.scheme.M_v == 21
