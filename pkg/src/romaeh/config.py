"""Run configuration read from TOML.

Every section is optional; missing keys take the defaults below. Values are
validated completely when the file is loaded, before any computation.
Units: lengths in mm, moduli and stresses in MPa, fracture energy in N/mm.
"""
from dataclasses import asdict, dataclass, field, fields, replace
import math
import os

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .constitutive import PhaseMaterial
from .geometry import BUILTIN_SCHEMES


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


@dataclass(frozen=True)
class MaterialConfig:
    E: float
    nu: float
    plasticity: bool = False
    sigma_y0: float = 1e30
    H: float = 0.0
    damage: bool = False
    kappa_df: float = 1e30
    m: float = 1.0
    G_F: float = None

    def material(self):
        return PhaseMaterial(self.E, self.nu, self.sigma_y0, self.H, self.kappa_df, self.m, self.G_F,
                             self.plasticity, self.damage)


DEFAULT_FIBER = MaterialConfig(E=72000.0, nu=0.26)
DEFAULT_MATRIX = MaterialConfig(E=3500.0, nu=0.35, plasticity=True, sigma_y0=60.0, H=500.0, damage=True,
                                kappa_df=0.01, m=1.0, G_F=3.0)
DEFAULT_STRIP = MaterialConfig(E=1000.0, nu=0.0, damage=True, kappa_df=0.01, m=1.0, G_F=0.2)


@dataclass(frozen=True)
class PathsConfig:
    output: str = "results"
    mesh: str = "results/cell.mesh"
    coefficients: str = "results/cell.coeffs"


@dataclass(frozen=True)
class CellConfig:
    size: float = 12.5
    fiber_diameter: float = 10.0
    elements_per_side: int = 16
    scheme: str = "F1-M8"
    strip_width: float = None


@dataclass(frozen=True)
class RomConfig:
    calibration: bool = True
    single_pass: bool = False
    tol: float = 1e-8
    maxit: int = 25
    min_substep: float = 1.0 / 64


@dataclass(frozen=True)
class LoadConfig:
    direction: tuple = (1.0, 0.0, 0.0)
    max_strain: float = 0.03
    steps: int = 300


@dataclass(frozen=True)
class DnsConfig:
    tol: float = 1e-6
    maxit: int = 100
    min_substep: float = 1.0 / 64
    seed_factor: float = 0.98
    length: str = "area"


@dataclass(frozen=True)
class VerifyConfig:
    schemes: tuple = ("F1-M1", "F1-M4", "F1-M8")
    programs: tuple = ("uniaxial", "biaxial")


@dataclass(frozen=True)
class MacroConfig:
    n_cells: int = 8
    hole_ratio: float = 0.2
    max_displacement: float = 0.5
    steps: int = 100
    tol: float = 1e-6
    maxit: int = 30
    min_substep: float = 1.0 / 64
    explicit_substep: float = 0.25
    snapshot_every: int = 10
    with_dns: bool = False
    dns_elements_per_cell: int = 8


@dataclass(frozen=True)
class StripConfig:
    elements: tuple = (1, 8)
    length: float = 1.0
    steps: int = 400


@dataclass(frozen=True)
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    cell: CellConfig = field(default_factory=CellConfig)
    fiber: MaterialConfig = DEFAULT_FIBER
    matrix: MaterialConfig = DEFAULT_MATRIX
    rom: RomConfig = field(default_factory=RomConfig)
    load: LoadConfig = field(default_factory=LoadConfig)
    dns: DnsConfig = field(default_factory=DnsConfig)
    verify: VerifyConfig = field(default_factory=VerifyConfig)
    macro: MacroConfig = field(default_factory=MacroConfig)
    strip: StripConfig = field(default_factory=StripConfig)
    strip_material: MaterialConfig = DEFAULT_STRIP
    source: str = ""

    def materials(self):
        """Phase materials indexed by phase (fiber 0, matrix 1)."""
        return [self.fiber.material(), self.matrix.material()]

    def resolve(self, path):
        """Paths are relative to the config file's directory."""
        if os.path.isabs(path) or not self.source:
            return path
        return os.path.normpath(os.path.join(os.path.dirname(os.path.abspath(self.source)), path))


_SECTIONS = {"paths": PathsConfig, "cell": CellConfig, "fiber": MaterialConfig, "matrix": MaterialConfig,
             "rom": RomConfig, "load": LoadConfig, "dns": DnsConfig, "verify": VerifyConfig,
             "macro": MacroConfig, "strip": StripConfig, "strip_material": MaterialConfig}


def _coerce(section, name, value, default, typ):
    where = f"[{section}] {name}"
    if typ in (bool, "bool"):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{where} must be true or false")
        return value
    if isinstance(default, int) and not isinstance(default, bool) and typ in (int, "int"):
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{where} must be an integer")
        return value
    if isinstance(default, tuple) or typ in (tuple, "tuple"):
        if not isinstance(value, list):
            raise ConfigError(f"{where} must be an array")
        return tuple(value)
    if isinstance(default, str) or typ in (str, "str"):
        if not isinstance(value, str):
            raise ConfigError(f"{where} must be a string")
        return value
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where} must be a number")
    return float(value)


def _build(section, cls, table, base=None):
    if not isinstance(table, dict):
        raise ConfigError(f"[{section}] must be a table")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(table) - set(known))
    if unknown:
        raise ConfigError(f"[{section}] unknown key(s): {', '.join(unknown)}")
    values = asdict(base) if base is not None else {}
    for name, value in table.items():
        f = known[name]
        default = values.get(name, f.default if f.default is not f.default_factory else None)
        values[name] = _coerce(section, name, value, default, f.type)
    try:
        return cls(**values) if base is None else replace(base, **values)
    except TypeError as exc:
        raise ConfigError(f"[{section}] {exc}") from exc


def _positive(where, v):
    if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
        raise ConfigError(f"{where} must be positive, got {v}")


def validate(cfg):
    """Raise :class:`ConfigError` on the first violated constraint."""
    for name in ("fiber", "matrix", "strip_material"):
        m = getattr(cfg, name)
        try:
            m.material()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"[{name}] {exc}") from exc
    c = cfg.cell
    _positive("[cell] size", c.size)
    if not 0 <= c.fiber_diameter < c.size:
        raise ConfigError(f"[cell] fiber_diameter must satisfy 0 <= fiber_diameter < size "
                          f"(got {c.fiber_diameter} with size {c.size})")
    if c.elements_per_side < 8:
        raise ConfigError("[cell] elements_per_side must be >= 8")
    if c.scheme not in BUILTIN_SCHEMES:
        raise ConfigError(f"[cell] scheme must be one of {', '.join(BUILTIN_SCHEMES)}")
    if c.strip_width is not None:
        _positive("[cell] strip_width", c.strip_width)
    for name in ("rom", "dns", "macro"):
        s = getattr(cfg, name)
        _positive(f"[{name}] tol", s.tol)
        if s.maxit < 1:
            raise ConfigError(f"[{name}] maxit must be >= 1")
        if not 0 < s.min_substep <= 1:
            raise ConfigError(f"[{name}] min_substep must lie in (0, 1]")
    if len(cfg.load.direction) != 3 or not any(cfg.load.direction):
        raise ConfigError("[load] direction must be a non-zero array of 3 strain components")
    _positive("[load] max_strain", cfg.load.max_strain)
    if cfg.load.steps < 1:
        raise ConfigError("[load] steps must be >= 1")
    if cfg.dns.length not in ("area", "oliver"):
        raise ConfigError("[dns] length must be 'area' or 'oliver'")
    for s in cfg.verify.schemes:
        if s not in BUILTIN_SCHEMES:
            raise ConfigError(f"[verify] unknown scheme {s!r}")
    for p in cfg.verify.programs:
        if p not in PROGRAMS:
            raise ConfigError(f"[verify] unknown program {p!r}; use {', '.join(PROGRAMS)}")
    mc = cfg.macro
    if mc.n_cells < 2 or mc.n_cells % 2:
        raise ConfigError("[macro] n_cells must be an even integer >= 2")
    if not 0 < mc.hole_ratio < 0.5:
        raise ConfigError("[macro] hole_ratio must lie in (0, 0.5)")
    _positive("[macro] max_displacement", mc.max_displacement)
    if mc.steps < 1 or mc.snapshot_every < 1:
        raise ConfigError("[macro] steps and snapshot_every must be >= 1")
    if not 0 < mc.explicit_substep <= 1:
        raise ConfigError("[macro] explicit_substep must lie in (0, 1]")
    if mc.dns_elements_per_cell < 8:
        raise ConfigError("[macro] dns_elements_per_cell must be >= 8")
    if not cfg.strip.elements or any((not isinstance(n, int)) or n < 1 for n in cfg.strip.elements):
        raise ConfigError("[strip] elements must be positive integers")
    _positive("[strip] length", cfg.strip.length)
    if cfg.strip_material.G_F is None or not cfg.strip_material.damage:
        raise ConfigError("[strip_material] needs damage = true and G_F")
    return cfg


PROGRAMS = {"uniaxial": (1.0, 0.0, 0.0), "biaxial": (1.0, 1.0, 0.0), "shear": (0.0, 0.0, 1.0)}


def load_config(path=None):
    """Read and validate a TOML file (``None`` gives the defaults)."""
    cfg = RunConfig()
    if path is None:
        return validate(cfg)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    unknown = sorted(set(data) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
    updates = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            updates[name] = _build(name, cls, data[name], getattr(cfg, name))
    return validate(replace(cfg, source=os.fspath(path), **updates))


def dump_config(cfg):
    """TOML text of a configuration (used as a provenance echo)."""
    lines = []
    for name in _SECTIONS:
        lines.append(f"[{name}]")
        for key, value in asdict(getattr(cfg, name)).items():
            if value is None:
                continue
            lines.append(f"{key} = {_toml_value(value)}")
        lines.append("")
    return "\n".join(lines)


def _toml_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        return repr(v) if math.isfinite(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(type(v))
