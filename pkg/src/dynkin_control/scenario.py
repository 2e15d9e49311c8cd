"""Scenario files: parsing, validation, serialisation and model construction.

A scenario is a flat INI file. Every section and key is optional except
``[scenario] name``, ``[diffusion]``, ``[cost]`` and ``[grid]``; missing keys
take the defaults of the dataclasses below. Lists are comma separated and
matrix rows are separated by ``;``. Comments start with ``#``. Expressions use the variables
``x1 … xn`` (see :mod:`dynkin_control.expressions`).

Example::

    [scenario]
    name = s1
    seed = 1

    [diffusion]
    kind = constant
    drift = 0
    sigma = 1
    alpha = 1

    [cost]
    H = x1

    [grid]
    lower = -4
    upper = 4
    counts = 801
"""
import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

import numpy as np

from .diffusion import DiffusionSpec
from .errors import ConfigurationError, ExpressionError
from .expressions import Expression
from .grid import GridSpec
from .vi_solver import CostSpec

DIFFUSION_KINDS = ("constant", "sinusoidal", "expression")
BUILTIN = ("s1", "s2")


# --------------------------------------------------------------------------
# Value codecs

def _fmt(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(", ".join(_fmt(v) for v in row) for row in value)
        return ", ".join(_fmt(v) for v in value)
    return str(value)


def _float(text, where):
    try:
        value = float(text)
    except ValueError:
        raise ConfigurationError(f"expected a number, got {text!r}", field=where) from None
    if not math.isfinite(value):
        raise ConfigurationError("value must be finite", field=where)
    return value


def _int(text, where):
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"expected an integer, got {text!r}", field=where) from None


def _items(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


def _floats(text, where):
    return tuple(_float(t, where) for t in _items(text))


def _ints(text, where):
    return tuple(_int(t, where) for t in _items(text))


def _matrix(text):
    return tuple(_items(row) for row in text.split(";") if row.strip())


# --------------------------------------------------------------------------
# Sections

@dataclass(frozen=True)
class DiffusionConfig:
    """Catalog entry for the diffusion.

    ``constant``: numeric ``drift`` (n values) and ``sigma`` (scalar, n
    values for a diagonal, or an n×m matrix). ``sinusoidal``: as constant
    plus ``amplitude·sin(frequency·x1)`` added to the last drift component.
    ``expression``: every entry of ``drift``/``sigma`` is an expression.
    """

    kind: str = "constant"
    drift: tuple = ("0",)
    sigma: tuple = (("1",),)
    alpha: float = 1.0
    amplitude: float = 0.0
    frequency: float = 1.0


@dataclass(frozen=True)
class CostConfig:
    H: str = "0"
    f1: str = "1"
    f2: str = "1"


@dataclass(frozen=True)
class GridConfig:
    lower: tuple = (-4.0,)
    upper: tuple = (4.0,)
    counts: tuple = (801,)
    lateral_bc: tuple = ()


@dataclass(frozen=True)
class SolverConfig:
    omega: float = 1.5
    tol: float = 1e-8
    max_iter: int = 100_000
    xn_bc: str = "pin"
    hjb_tol: float = 1e-6


@dataclass(frozen=True)
class BandConfig:
    """Comparison band ``A(x̄) < a ≤ b < B(x̄)``; expressions in the lateral variables."""

    A: str = ""
    B: str = ""
    samples: int = 3
    paths: int = 20_000


@dataclass(frozen=True)
class GameConfig:
    paths: int = 100_000
    dt: float = 1e-3
    t_max: float = 20.0
    x0: tuple = (0.0,)
    shifts: tuple = (0.25,)


@dataclass(frozen=True)
class ControlConfig:
    paths: int = 100_000
    dt: float = 1e-3
    t_max: float = 10.0
    x0: tuple = (0.0,)
    widen: tuple = (0.25, 0.5)
    narrow: tuple = (0.25, 0.5)
    translate: tuple = (0.3,)


@dataclass(frozen=True)
class AppendixConfig:
    """1-D model for the appendix stage (expressions in ``x1``)."""

    mu: str = "0"
    sigma: str = "1"
    alpha: float = 1.0
    interval: tuple = (-1.0, 1.0)
    base: float = 0.0
    counts: tuple = (51, 101, 201, 401)
    bump: int = 1


@dataclass(frozen=True)
class Scenario:
    name: str
    diffusion: DiffusionConfig
    cost: CostConfig
    grid: GridConfig
    seed: int = 0
    output_dir: str = ""
    solver: SolverConfig = field(default_factory=SolverConfig)
    bands: BandConfig = field(default_factory=BandConfig)
    game: GameConfig = field(default_factory=GameConfig)
    control: ControlConfig = field(default_factory=ControlConfig)
    appendix: AppendixConfig = field(default_factory=AppendixConfig)

    def __post_init__(self):
        validate(self)

    @property
    def n(self):
        return len(self.grid.counts)

    def digest(self):
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def with_overrides(self, assignments):
        """Copy with ``section.key=value`` assignments applied."""
        text = dumps(self)
        parser = _parser()
        parser.read_string(text)
        for item in assignments:
            key, sep, value = item.partition("=")
            section, dot, option = key.strip().partition(".")
            if not (sep and dot):
                raise ConfigurationError(f"override {item!r} is not section.key=value")
            if not parser.has_section(section):
                parser.add_section(section)
            parser.set(section, option, value.strip())
        return _from_parser(parser)


_SECTIONS = {
    "diffusion": DiffusionConfig, "cost": CostConfig, "grid": GridConfig, "solver": SolverConfig,
    "bands": BandConfig, "game": GameConfig, "control": ControlConfig, "appendix": AppendixConfig,
}
_TOP = ("name", "seed", "output_dir")


def _parser():
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",),
                                       comment_prefixes=("#",))
    parser.optionxform = str
    return parser


def _decode(cls, section, raw):
    values = {}
    known = {f.name: f for f in fields(cls)}
    for key, text in raw.items():
        if key not in known:
            raise ConfigurationError(f"unknown key {key!r}", field=f"{section}.{key}")
        where = f"{section}.{key}"
        default = known[key].default
        if key == "sigma" and cls is DiffusionConfig:
            values[key] = _matrix(text)
        elif key == "drift" or key == "lateral_bc":
            values[key] = _items(text)
        elif isinstance(default, int):
            values[key] = _int(text, where)
        elif isinstance(default, float):
            values[key] = _float(text, where)
        elif key == "counts":
            values[key] = _ints(text, where)
        elif isinstance(default, tuple):
            values[key] = _floats(text, where)
        else:
            values[key] = text.strip()
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigurationError(str(exc), field=section) from None


def _from_parser(parser) -> Scenario:
    for section in parser.sections():
        if section != "scenario" and section not in _SECTIONS:
            raise ConfigurationError(f"unknown section [{section}]", field=section)
    for required in ("scenario", "diffusion", "cost", "grid"):
        if not parser.has_section(required):
            raise ConfigurationError("section is missing", field=required)
    top = dict(parser.items("scenario"))
    for key in top:
        if key not in _TOP:
            raise ConfigurationError(f"unknown key {key!r}", field=f"scenario.{key}")
    if not top.get("name"):
        raise ConfigurationError("scenario needs a name", field="scenario.name")
    kwargs = {"name": top["name"].strip(), "seed": _int(top.get("seed", "0"), "scenario.seed"),
              "output_dir": top.get("output_dir", "").strip()}
    for section, cls in _SECTIONS.items():
        raw = dict(parser.items(section)) if parser.has_section(section) else {}
        kwargs[section] = _decode(cls, section, raw)
    return Scenario(**kwargs)


def loads(text: str) -> Scenario:
    """Parse scenario text."""
    parser = _parser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigurationError(f"malformed scenario file: {exc}") from None
    return _from_parser(parser)


def dumps(scenario: Scenario) -> str:
    """Canonical text form; ``loads(dumps(s)) == s``."""
    lines = ["[scenario]", f"name = {scenario.name}", f"seed = {scenario.seed}"]
    if scenario.output_dir:
        lines.append(f"output_dir = {scenario.output_dir}")
    for section in _SECTIONS:
        cfg = getattr(scenario, section)
        lines += ["", f"[{section}]"]
        for f in fields(cfg):
            lines.append(f"{f.name} = {_fmt(getattr(cfg, f.name))}".rstrip())
    return "\n".join(lines) + "\n"


def load(path_or_name) -> Scenario:
    """Read a scenario file, or a built-in scenario by name (``s1``, ``s2``)."""
    name = str(path_or_name)
    if name in BUILTIN:
        return loads(resources.files(__package__).joinpath("scenarios", f"{name}.ini").read_text())
    path = Path(name)
    if not path.is_file():
        raise ConfigurationError(f"no scenario file {name!r} and no built-in scenario of that name",
                                 field="scenario")
    return loads(path.read_text())


# --------------------------------------------------------------------------
# Validation and model construction

def _expr(text, nvars, where):
    try:
        return Expression(text, nvars)
    except ExpressionError as exc:
        raise ConfigurationError(str(exc), field=where) from None


def validate(s: Scenario):
    n = len(s.grid.counts)
    if not s.name or any(c in s.name for c in "/\\"):
        raise ConfigurationError("name must be non-empty without path separators", field="scenario.name")
    if s.seed < 0:
        raise ConfigurationError("seed must be non-negative", field="scenario.seed")
    d = s.diffusion
    if d.kind not in DIFFUSION_KINDS:
        raise ConfigurationError(f"unknown diffusion kind {d.kind!r}; choose from {DIFFUSION_KINDS}",
                                 field="diffusion.kind")
    if not d.alpha > 0:
        raise ConfigurationError("alpha must be positive", field="diffusion.alpha")
    if len(d.drift) != n:
        raise ConfigurationError(f"drift needs {n} entries", field="diffusion.drift")
    rows = d.sigma
    if not (len(rows) == 1 and len(rows[0]) in (1, n)) and len(rows) != n:
        raise ConfigurationError(f"sigma must be a scalar, {n} diagonal entries or {n} rows",
                                 field="diffusion.sigma")
    if len({len(r) for r in rows}) != 1:
        raise ConfigurationError("sigma rows differ in length", field="diffusion.sigma")
    for k, text in enumerate(d.drift):
        _check_entry(d.kind, text, n, f"diffusion.drift[{k}]")
    for i, row in enumerate(rows):
        for j, text in enumerate(row):
            _check_entry(d.kind, text, n, f"diffusion.sigma[{i}][{j}]")
    for key in ("H", "f1", "f2"):
        _expr(getattr(s.cost, key), n, f"cost.{key}")
    g = s.grid
    if not (len(g.lower) == len(g.upper) == n):
        raise ConfigurationError("lower/upper/counts lengths differ", field="grid")
    build_grid(s)
    if not 0 < s.solver.omega < 2:
        raise ConfigurationError("omega must lie in (0, 2)", field="solver.omega")
    if not s.solver.hjb_tol > 0:
        raise ConfigurationError("hjb_tol must be positive", field="solver.hjb_tol")
    if s.solver.xn_bc not in ("pin", "neumann"):
        raise ConfigurationError("xn_bc must be pin or neumann", field="solver.xn_bc")
    for section in ("game", "control"):
        cfg = getattr(s, section)
        if cfg.paths < 2:
            raise ConfigurationError("need at least two paths", field=f"{section}.paths")
        if not (cfg.dt > 0 and cfg.t_max >= cfg.dt):
            raise ConfigurationError("need dt > 0 and t_max >= dt", field=f"{section}.dt")
        if len(cfg.x0) != n:
            raise ConfigurationError(f"x0 needs {n} entries", field=f"{section}.x0")
    for key in ("A", "B"):
        text = getattr(s.bands, key)
        if text:
            _expr(text, max(n - 1, 0), f"bands.{key}")
    a = s.appendix
    _expr(a.mu, 1, "appendix.mu")
    _expr(a.sigma, 1, "appendix.sigma")
    if len(a.interval) != 2 or a.interval[0] >= a.interval[1]:
        raise ConfigurationError("interval must be two increasing numbers", field="appendix.interval")
    if len(a.counts) < 2 or any(c < 5 for c in a.counts):
        raise ConfigurationError("need at least two grids of 5 or more nodes", field="appendix.counts")
    if not a.alpha > 0:
        raise ConfigurationError("alpha must be positive", field="appendix.alpha")


def _check_entry(kind, text, n, where):
    if kind == "expression":
        _expr(text, n, where)
    else:
        _float(text, where)


def build_grid(s: Scenario) -> GridSpec:
    g = s.grid
    return GridSpec(g.lower, g.upper, g.counts, g.lateral_bc)


def _sigma_array(rows, n, convert):
    if len(rows) == 1 and len(rows[0]) == 1:
        return [[convert(rows[0][0]) if i == j else None for j in range(n)] for i in range(n)]
    if len(rows) == 1 and n > 1:
        return [[convert(rows[0][i]) if i == j else None for j in range(n)] for i in range(n)]
    return [[convert(v) for v in row] for row in rows]


def build_diffusion(s: Scenario) -> DiffusionSpec:
    d = s.diffusion
    n = s.n
    if d.kind == "expression":
        drift = [_expr(t, n, "diffusion.drift") for t in d.drift]
        sig = _sigma_array(d.sigma, n, lambda t: _expr(t, n, "diffusion.sigma"))
        m = len(sig[0])

        def drift_fn(x):
            x = np.asarray(x, dtype=np.float64)
            return np.stack([e(x) for e in drift], axis=-1)

        def sigma_fn(x):
            x = np.asarray(x, dtype=np.float64)
            out = np.zeros(x.shape[:-1] + (n, m))
            for i in range(n):
                for j in range(m):
                    if sig[i][j] is not None:
                        out[..., i, j] = sig[i][j](x)
            return out

        return DiffusionSpec(n, drift_fn, sigma_fn, d.alpha)
    mu = np.array([float(t) for t in d.drift])
    sig = np.array([[0.0 if v is None else v for v in row]
                    for row in _sigma_array(d.sigma, n, float)])
    base = DiffusionSpec.constant(mu, sig, d.alpha)
    if d.kind == "constant" or d.amplitude == 0.0:
        return base
    amp, freq = d.amplitude, d.frequency

    def drift_sin(x):
        out = base.drift(x)
        out[..., -1] += amp * np.sin(freq * np.asarray(x, dtype=np.float64)[..., 0])
        return out

    return DiffusionSpec(n, drift_sin, base.sigma, d.alpha)


def build_cost(s: Scenario) -> CostSpec:
    n = s.n
    exprs = {k: _expr(getattr(s.cost, k), n, f"cost.{k}") for k in ("H", "f1", "f2")}

    def grad(e):
        parts = [e.derivative(n, i) for i in range(n)]
        return lambda x: np.stack([p(x) for p in parts], axis=-1)

    def hess(e):
        parts = [[e.derivative(n, i, j) for j in range(n)] for i in range(n)]
        return lambda x: np.stack([np.stack([p(x) for p in row], axis=-1) for row in parts], axis=-2)

    return CostSpec(exprs["H"], exprs["f1"], exprs["f2"], grad(exprs["f1"]), grad(exprs["f2"]),
                    hess(exprs["f1"]), hess(exprs["f2"]))


def build_band_curves(s: Scenario, grid: GridSpec):
    """``(A_band, B_band)`` per column, or ``(None, None)`` entries when unset."""
    out = []
    for key in ("A", "B"):
        text = getattr(s.bands, key)
        if not text:
            out.append(None)
            continue
        e = _expr(text, max(s.n - 1, 0), f"bands.{key}")
        pts = grid.column_points() if grid.ndim > 1 else np.zeros((1,))
        out.append(np.asarray(e(pts), dtype=np.float64).reshape(grid.column_shape))
    return tuple(out)


def build_appendix_model(s: Scenario):
    from .appendix import OneDimModel

    a = s.appendix
    mu = _expr(a.mu, 1, "appendix.mu")
    sig = _expr(a.sigma, 1, "appendix.sigma")
    dsig = sig.derivative(1, 0)

    def lift(fn):
        return lambda x: fn(np.asarray(x, dtype=np.float64)[..., None])

    return OneDimModel(lift(mu), lift(sig), lift(dsig), a.alpha, tuple(a.interval), a.base)


def with_paths(s: Scenario, game=None, control=None, bands=None) -> Scenario:
    """Copy with smaller Monte Carlo budgets (handy for quick runs)."""
    out = s
    if game is not None:
        out = replace(out, game=replace(out.game, paths=game))
    if control is not None:
        out = replace(out, control=replace(out.control, paths=control))
    if bands is not None:
        out = replace(out, bands=replace(out.bands, paths=bands))
    return out
