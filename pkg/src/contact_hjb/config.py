"""Run configuration: a sectioned ``key = value`` file.

Each section maps onto a dataclass below; every key has a declared type
(float, int, bool, str, expression, float list, int list or "auto"-able
float), so values are coerced by schema rather than guessed. Unknown
sections or keys are rejected.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError, ContactHJBError
from .expression import Expression
from .grid import PeriodicGrid, fmt

AUTO = "auto"


@dataclass
class ModelSection:
    family: str = "QuadraticContact"
    g: str = "-3*u"
    V: str = "0.5*x^2"
    a: float = 1.0
    lambda_: float | None = 3.0  # "auto": estimated from g
    p_max: float = 8.0
    table: str = ""


@dataclass
class GridSection:
    dimension: int = 1
    lengths: list[float] = field(default_factory=lambda: [2.0])
    N: list[int] = field(default_factory=lambda: [400])


@dataclass
class SchemeSection:
    dt: float = 0.0025
    v_max: float = 4.0
    M_v: int = 161
    eps_k: float | None = None
    K_max: int = 60
    horizon_cap: float = 64.0


@dataclass
class RunSection:
    initial: str = "0.5*0.3819660112501051*x^2"
    initial_csv: str = ""
    direction: str = "minus"
    horizon: float = 1.0
    chunk: float = 0.5
    max_horizon: float = 32.0
    tol_limit: float = 1e-8
    blowup: float = 1e6
    residual_tol: float | None = None
    eta: float | None = None  # auto: 3h
    radius: float = 0.2
    v1: str = "0.5*0.3819660112501051*x^2"
    v2: str = "0.5*2.618033988749895*x^2"
    trace_x: float = 0.7
    trace_horizon: float = 32.0
    trace_m_v: int = 1601
    tail_fraction: float = 0.25
    constants: list[float] = field(default_factory=lambda: [-1.0, 0.0, 1.0])
    legendre_u: list[float] = field(default_factory=lambda: [0.0])
    p_count: int = 801
    seed: int = 0
    instances: int = 10
    stride: int = 1


@dataclass
class OutputSection:
    directory: str = "out"


@dataclass
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    grid: GridSection = field(default_factory=GridSection)
    scheme: SchemeSection = field(default_factory=SchemeSection)
    run: RunSection = field(default_factory=RunSection)
    output: OutputSection = field(default_factory=OutputSection)

    # builders -----------------------------------------------------------

    def build_grid(self) -> PeriodicGrid:
        g = self.grid
        if g.dimension not in (1, 2):
            raise ConfigError("grid.dimension must be 1 or 2")
        lengths = _per_axis(g.lengths, g.dimension, "grid.lengths")
        counts = _per_axis(g.N, g.dimension, "grid.N")
        try:
            return PeriodicGrid(tuple(lengths), tuple(counts))
        except ContactHJBError as exc:
            raise ConfigError(str(exc)) from exc

    def build_params(self, m_v: int | None = None):
        from .semigroup import SchemeParams

        s = self.scheme
        try:
            return SchemeParams(s.dt, s.v_max, m_v or s.M_v, s.eps_k, s.K_max, s.horizon_cap)
        except ContactHJBError as exc:
            raise ConfigError(str(exc)) from exc

    def build_model(self, base: Path | None = None):
        from .model import QuadraticContactHamiltonian, TabulatedHamiltonian

        m = self.model
        if m.family == "QuadraticContact":
            return QuadraticContactHamiltonian(m.g, m.V, m.a, m.lambda_, m.p_max, self.grid.dimension)
        if m.family == "Tabulated":
            if not m.table:
                raise ConfigError("model.table is required for a Tabulated model")
            if m.lambda_ is None:
                raise ConfigError("model.lambda must be given for a Tabulated model")
            if self.grid.dimension != 1:
                raise ConfigError("tabulated models are supported on the circle only")
            path = Path(m.table)
            if base is not None and not path.is_absolute():
                path = base / path
            return TabulatedHamiltonian.from_csv(path, m.lambda_, self.grid.lengths[0])
        raise ConfigError(f"unknown model family {m.family!r}")

    def validate(self) -> None:
        grid = self.build_grid()
        params = self.build_params()
        params_check = params.check_grid
        try:
            params_check(grid)
        except ContactHJBError as exc:
            raise ConfigError(str(exc)) from exc
        if self.model.lambda_ is not None and self.model.lambda_ < 0:
            raise ConfigError("model.lambda must be nonnegative")
        if self.run.direction not in ("minus", "plus"):
            raise ConfigError("run.direction must be 'minus' or 'plus'")
        for name in ("initial", "v1", "v2"):
            Expression(getattr(self.run, name))
        Expression(self.model.g)
        Expression(self.model.V)


# key name in the file -> attribute name
_RENAMES = {"lambda": "lambda_"}
_SECTIONS = ("model", "grid", "scheme", "run", "output")
_AUTO_KEYS = {("model", "lambda_"), ("scheme", "eps_k"), ("run", "residual_tol"), ("run", "eta")}


def _per_axis(values, dim, name):
    values = list(values)
    if len(values) == 1 and dim == 2:
        values = values * 2
    if len(values) != dim:
        raise ConfigError(f"{name} needs {dim} value(s), got {len(values)}")
    return values


def _field_kind(section: str, attr: str, default) -> str:
    if (section, attr) in _AUTO_KEYS:
        return "auto_float"
    if isinstance(default, bool):
        return "bool"
    if isinstance(default, int):
        return "int"
    if isinstance(default, float):
        return "float"
    if isinstance(default, list):
        return "int_list" if default and isinstance(default[0], int) else "float_list"
    return "str"


def _coerce(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "auto_float":
            return None if raw.lower() == AUTO else float(raw)
        if kind == "float":
            return float(raw)
        if kind == "int":
            return int(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(raw)
        if kind == "float_list":
            return [float(v) for v in raw.split(",") if v.strip()]
        if kind == "int_list":
            return [int(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"{where}: cannot read {raw!r} as {kind.replace('_', ' ')}") from None
    return raw


def _render(kind: str, value) -> str:
    if kind == "auto_float":
        return AUTO if value is None else fmt(value)
    if kind == "float":
        return fmt(value)
    if kind == "bool":
        return "true" if value else "false"
    if kind == "int":
        return str(int(value))
    if kind in ("float_list",):
        return ", ".join(fmt(v) for v in value)
    if kind == "int_list":
        return ", ".join(str(int(v)) for v in value)
    return str(value)


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    cfg = RunConfig()
    for section in parser.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"{source}: unknown section [{section}]")
        target = getattr(cfg, section)
        defaults = {f.name: getattr(target, f.name) for f in fields(target)}
        for key, raw in parser.items(section):
            attr = _RENAMES.get(key, key)
            if attr not in defaults:
                raise ConfigError(f"{source}: unknown key {key!r} in [{section}]")
            kind = _field_kind(section, attr, defaults[attr])
            setattr(target, attr, _coerce(kind, raw, f"{source} [{section}] {key}"))
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, str(path))


def serialize_config(cfg: RunConfig) -> str:
    reverse = {v: k for k, v in _RENAMES.items()}
    fresh = RunConfig()
    out = []
    for section in _SECTIONS:
        target = getattr(cfg, section)
        reference = getattr(fresh, section)
        out.append(f"[{section}]")
        for f in fields(target):
            kind = _field_kind(section, f.name, getattr(reference, f.name))
            out.append(f"{reverse.get(f.name, f.name)} = {_render(kind, getattr(target, f.name))}")
        out.append("")
    return "\n".join(out)


def configs_equal(a: RunConfig, b: RunConfig) -> bool:
    def norm(v):
        if isinstance(v, float) and math.isnan(v):
            return "nan"
        return v

    da, db = dataclasses.asdict(a), dataclasses.asdict(b)
    return {k: {kk: norm(vv) for kk, vv in s.items()} for k, s in da.items()} == {
        k: {kk: norm(vv) for kk, vv in s.items()} for k, s in db.items()
    }
