"""Experiment configuration read from INI files.

``config/defaults.ini`` holds every known key; a user file overlays it. Unknown
sections or keys, malformed lines and out-of-range values are reported with the
line they come from.
"""
from __future__ import annotations

import configparser
import json
import logging
import re
from dataclasses import dataclass, field, fields
from fractions import Fraction
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

from errors import ConfigError, InvalidValue, ParseError, ReportIoError, UnknownKey
from fem.tensors import ElasticityTensor4, MaterialSpec
from forcing.expressions import parse_expression, parse_vector
from forcing.spec import MACRO_VARIABLES, ForcingSpec
from geometry.mesh import CellGeometry, InclusionShape, Rectangle

logger = logging.getLogger(__name__)

DEFAULTS_PATH = Path(__file__).with_name("defaults.ini")
SECTIONS = ("geometry", "material", "solver", "experiment")

_SECTION_LINE = re.compile(r"^\s*\[([^\]]*)\]")
_KEY_LINE = re.compile(r"^\s*([^\s=:#;\[][^=:]*?)\s*[=:]\s*")


@dataclass(frozen=True)
class GeometryConfig:
    shape: str = "disk"
    center: Tuple[float, float] = (0.5, 0.5)
    size: float = 0.25
    cell_res: int = 32
    fine_cell_res: int = 8
    domain: Tuple[float, float, float, float] = (0.0, 1.0, 0.0, 1.0)

    def cell_geometry(self, resolution: Optional[int] = None) -> CellGeometry:
        return CellGeometry(InclusionShape(self.shape), self.center, self.size, resolution or self.cell_res)

    @property
    def rectangle(self) -> Rectangle:
        return Rectangle.from_sequence(self.domain)


@dataclass(frozen=True)
class MaterialConfig:
    matrix_lambda: float = 1.0
    matrix_mu: float = 1.0
    matrix_voigt: Optional[Tuple[Tuple[float, float, float], ...]] = None
    inclusion_lambda: float = 1.0
    inclusion_mu_scale: float = 0.5
    degenerate_scaling: bool = True

    def material_spec(self) -> MaterialSpec:
        if self.matrix_voigt is not None:
            matrix = ElasticityTensor4.from_voigt(self.matrix_voigt)
        else:
            matrix = ElasticityTensor4.isotropic(self.matrix_lambda, self.matrix_mu)
        return MaterialSpec(matrix, self.inclusion_lambda, self.inclusion_mu_scale,
                            degenerate_scaling=self.degenerate_scaling)


@dataclass(frozen=True)
class SolverConfig:
    tol: float = 1e-10
    eig_tol: float = 1e-8
    maxiter: int = 0
    deterministic: bool = False
    workers: int = 1
    inner_solver: str = "minres"
    linear_solver: str = "direct"
    bubble_samples: int = 10

    @property
    def max_iterations(self) -> Optional[int]:
        return self.maxiter or None


@dataclass(frozen=True)
class ExperimentConfig:
    alpha: float = 1.0
    f0: str = "(1, 0)"
    f1: str = "0"
    frot: str = "(0, 0)"
    epsilon: Tuple[int, ...] = (4, 8, 16)     # denominators n of eps = 1/n
    window: Optional[float] = None            # None: 1.1 * mu_2
    k: int = 6
    k_slice: int = 8
    macro_res: int = 8
    seed: int = 20240101

    @property
    def epsilons(self) -> Tuple[float, ...]:
        return tuple(1.0 / n for n in self.epsilon)

    def forcing(self) -> ForcingSpec:
        return ForcingSpec(self.f0, self.f1, self.frot)


@dataclass(frozen=True)
class RunConfig:
    geometry: GeometryConfig = field(default_factory=GeometryConfig)
    material: MaterialConfig = field(default_factory=MaterialConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    experiment: ExperimentConfig = field(default_factory=ExperimentConfig)

    def to_dict(self) -> Dict[str, Dict[str, str]]:
        return {section: dict(_section_items(getattr(self, section))) for section in SECTIONS}


# ---------------- value codecs ---------------- #
def _float(text: str) -> float:
    return float(text)


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise ValueError("must be > 0")
    return value


def _non_negative(text: str) -> float:
    value = float(text)
    if not value >= 0:
        raise ValueError("must be >= 0")
    return value


def _int_at_least(low: int) -> Callable[[str], int]:
    def parse(text: str) -> int:
        value = int(text)
        if value < low:
            raise ValueError(f"must be >= {low}")
        return value
    return parse


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered not in configparser.ConfigParser.BOOLEAN_STATES:
        raise ValueError("expected true or false")
    return configparser.ConfigParser.BOOLEAN_STATES[lowered]


def _choice(*options: str) -> Callable[[str], str]:
    def parse(text: str) -> str:
        if text not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return text
    return parse


def _list_items(text: str) -> list:
    text = text.strip()
    if not (text.startswith("[") and text.endswith("]")):
        raise ValueError("expected a bracketed list")
    body = text[1:-1].strip()
    return [item.strip() for item in body.split(",")] if body else []


def _floats(count: int) -> Callable[[str], Tuple[float, ...]]:
    def parse(text: str) -> Tuple[float, ...]:
        items = tuple(float(item) for item in _list_items(text))
        if len(items) != count:
            raise ValueError(f"expected {count} numbers")
        return items
    return parse


def _epsilon_list(text: str) -> Tuple[int, ...]:
    """``[1/4, 0.125]`` -> (4, 8); every entry must be the reciprocal of an integer."""
    denominators = []
    for item in _list_items(text):
        value = Fraction(item).limit_denominator(10 ** 6) if "/" in item else Fraction(float(item))
        if value <= 0 or value > 1:
            raise ValueError(f"epsilon {item} is outside (0, 1]")
        inverse = 1 / value
        n = round(float(inverse))
        if n < 1 or abs(float(inverse) - n) > 1e-9 * n:
            raise ValueError(f"epsilon {item} is not the reciprocal of an integer")
        denominators.append(n)
    if not denominators:
        raise ValueError("epsilon list is empty")
    return tuple(denominators)


def _voigt(text: str) -> Optional[Tuple[Tuple[float, float, float], ...]]:
    if text.strip().lower() == "none":
        return None
    rows = json.loads(text)
    if len(rows) != 3 or any(len(r) != 3 for r in rows):
        raise ValueError("expected a 3x3 nested list")
    return tuple(tuple(float(v) for v in r) for r in rows)


def _window(text: str) -> Optional[float]:
    return None if text.strip().lower() == "auto" else _positive(text)


def _vector_source(text: str) -> str:
    return text.strip()


def _format(value) -> str:
    if value is None:
        return "none"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple) and value and isinstance(value[0], tuple):
        return json.dumps([list(r) for r in value])
    if isinstance(value, tuple):
        return "[" + ", ".join(_format(v) for v in value) + "]"
    return str(value)


FIELD_CODECS: Dict[str, Dict[str, Callable[[str], object]]] = {
    "geometry": {
        "shape": _choice(*(s.value for s in InclusionShape)),
        "center": _floats(2),
        "size": _non_negative,
        "cell_res": _int_at_least(4),
        "fine_cell_res": _int_at_least(8),
        "domain": _floats(4),
    },
    "material": {
        "matrix_lambda": _float,
        "matrix_mu": _positive,
        "matrix_voigt": _voigt,
        "inclusion_lambda": _positive,
        "inclusion_mu_scale": _positive,
        "degenerate_scaling": _bool,
    },
    "solver": {
        "tol": _positive,
        "eig_tol": _positive,
        "maxiter": _int_at_least(0),
        "deterministic": _bool,
        "workers": _int_at_least(1),
        "inner_solver": _choice("minres", "direct"),
        "linear_solver": _choice("direct", "cg"),
        "bubble_samples": _int_at_least(0),
    },
    "experiment": {
        "alpha": _float,
        "f0": _vector_source,
        "f1": _vector_source,
        "frot": _vector_source,
        "epsilon": _epsilon_list,
        "window": _window,
        "k": _int_at_least(1),
        "k_slice": _int_at_least(1),
        "macro_res": _int_at_least(2),
        "seed": _int_at_least(0),
    },
}

SECTION_TYPES = {
    "geometry": GeometryConfig,
    "material": MaterialConfig,
    "solver": SolverConfig,
    "experiment": ExperimentConfig,
}


def _section_items(section_config):
    for f in fields(section_config):
        value = getattr(section_config, f.name)
        if f.name == "epsilon":
            yield f.name, "[" + ", ".join(f"1/{n}" for n in value) + "]"
        elif f.name == "window" and value is None:
            yield f.name, "auto"
        else:
            yield f.name, _format(value)


# ---------------- parsing ---------------- #
def _locations(text: str) -> Dict[Tuple[Optional[str], str], Tuple[int, int]]:
    """(section, key) -> (line, column of the value), both 1-based."""
    out: Dict[Tuple[Optional[str], str], Tuple[int, int]] = {}
    section = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_LINE.match(line)
        if header:
            section = header.group(1).strip()
            out[(section, "")] = (number, header.start(1) + 1)
            continue
        key = _KEY_LINE.match(line)
        if key:
            out[(section, key.group(1).strip())] = (number, key.end() + 1)
    return out


def _read_parser(text: str, source: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=None)
    parser.optionxform = str
    try:
        parser.read_string(text, source=source)
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("Key outside of any section", e.lineno, 1) from e
    except (configparser.DuplicateSectionError, configparser.DuplicateOptionError) as e:
        raise ParseError(e.message.splitlines()[0], e.lineno, 1) from e
    except configparser.ParsingError as e:
        line = e.errors[0][0] if e.errors else None
        raise ParseError(f"Malformed line in {source}", line, 1) from e
    return parser


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    defaults = _read_parser(DEFAULTS_PATH.read_text(encoding="utf-8"), str(DEFAULTS_PATH))
    user = _read_parser(text, source)
    where = _locations(text)
    for section in user.sections():
        if section not in FIELD_CODECS:
            line, column = where.get((section, ""), (None, None))
            raise UnknownKey(f"Unknown section [{section}]", line, column)
        for key in user[section]:
            if key not in FIELD_CODECS[section]:
                line, column = where.get((section, key), (None, None))
                raise UnknownKey(f"Unknown key {key!r} in [{section}]", line, column)
            defaults[section][key] = user[section][key]

    values = {}
    for section, codecs in FIELD_CODECS.items():
        parsed = {}
        for key, codec in codecs.items():
            raw = defaults[section][key]
            line, column = where.get((section, key), (None, None))
            try:
                parsed[key] = codec(raw)
            except (ValueError, TypeError, ZeroDivisionError) as e:
                raise InvalidValue(f"[{section}] {key} = {raw!r}: {e}", line, column) from e
        values[section] = SECTION_TYPES[section](**parsed)
    config = RunConfig(**values)
    _validate(config, where)
    return config


def _validate(config: RunConfig, where) -> None:
    exp = config.experiment
    checks = {
        "f0": lambda s: parse_vector(s, MACRO_VARIABLES),
        "f1": parse_expression,
        "frot": parse_vector,
    }
    for key, check in checks.items():
        try:
            check(getattr(exp, key))
        except ParseError as e:
            line, column = where.get(("experiment", key), (None, None))
            offset = column + (e.column or 1) - 1 if column and e.column else e.column
            raise ParseError(f"[experiment] {key}: {e.message}", line, offset) from e
    try:
        config.material.material_spec()
    except ConfigError as e:
        raise InvalidValue(f"[material] {e.message}") from e
    except ValueError as e:
        raise InvalidValue(f"[material] {e}") from e


def parse_config(path: Union[str, Path, None] = None) -> RunConfig:
    """Read a config file; ``None`` gives the defaults."""
    if path is None:
        return parse_config_text("", "<defaults>")
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as e:
        raise ReportIoError(f"Cannot read config {path}: {e}") from e
    config = parse_config_text(text, str(path))
    logger.info("loaded config %s", path)
    return config


def to_ini(config: RunConfig) -> str:
    lines = []
    for section in SECTIONS:
        lines.append(f"[{section}]")
        lines.extend(f"{key} = {value}" for key, value in _section_items(getattr(config, section)))
        lines.append("")
    return "\n".join(lines)


def defaults_text() -> str:
    return DEFAULTS_PATH.read_text(encoding="utf-8")
