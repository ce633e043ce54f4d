"""Experiment configuration: schema, validation, presets and field expressions."""
from __future__ import annotations

import ast
import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from importlib import resources
from typing import Any, Callable, Optional

import numpy as np

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "parse_config",
    "load_preset",
    "list_presets",
    "apply_overrides",
    "apply_scale",
    "compile_field",
    "config_hash",
]


class ConfigError(ValueError):
    """Invalid configuration; ``line`` points into the source text when known."""

    def __init__(self, message: str, line: Optional[int] = None, source: str = "<config>"):
        self.line = line
        self.source = source
        where = f"{source}:{line}: " if line else f"{source}: "
        super().__init__(where + message)


# -- field expressions -----------------------------------------------------------

_FUNCS: dict[str, Any] = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "sinh", "cosh", "tanh", "arctan", "log1p")
}
_CONSTS = {"pi": math.pi, "e": math.e}
_ALLOWED = (
    ast.Expression, ast.BinOp, ast.UnaryOp, ast.Call, ast.Name, ast.Load, ast.Constant,
    ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow, ast.USub, ast.UAdd, ast.Mod,
)


def compile_field(expr: str, variables: tuple[str, ...]) -> Callable[..., np.ndarray]:
    """Turn an arithmetic expression in the intrinsic coordinates into a function.

    Only numbers, the coordinate names, ``pi``, ``e`` and a few numpy
    ufuncs are allowed.
    """
    try:
        tree = ast.parse(str(expr), mode="eval")
    except SyntaxError as exc:
        raise ConfigError(f"cannot parse field expression {expr!r}: {exc.msg}") from None
    for node in ast.walk(tree):
        if not isinstance(node, _ALLOWED):
            raise ConfigError(f"disallowed syntax {type(node).__name__} in {expr!r}")
        if isinstance(node, ast.Name) and node.id not in _FUNCS and node.id not in _CONSTS and node.id not in variables:
            raise ConfigError(f"unknown name {node.id!r} in {expr!r}; coordinates are {', '.join(variables)}")
        if isinstance(node, ast.Call) and not (isinstance(node.func, ast.Name) and node.func.id in _FUNCS):
            raise ConfigError(f"only {sorted(_FUNCS)} may be called in {expr!r}")
    code = compile(tree, "<field>", "eval")

    def field(*coords):
        env = dict(_FUNCS, **_CONSTS)
        env.update(zip(variables, (np.asarray(c, dtype=float) for c in coords)))
        return np.asarray(eval(code, {"__builtins__": {}}, env), dtype=float)

    field.expr = expr
    return field


COORDS = {"flat_interval": ("x",), "semi_ellipse": ("a",), "semi_torus": ("a", "b")}


# -- schema ----------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    raw: dict

    @property
    def name(self) -> str:
        return self.raw.get("name", "custom")

    def __getattr__(self, key):
        raw = object.__getattribute__(self, "raw")
        if key in raw:
            return raw[key]
        raise AttributeError(key)

    def to_json(self) -> str:
        return json.dumps(self.raw, sort_keys=True, indent=2)


DEFAULTS: dict = {
    "description": "",
    "prior": {"kind": "boundary_aware", "m": 20, "k_nn": 2, "L": 0, "boundary_knn": 2, "normalization": "retained"},
    "kernel": {"k_closest": 51, "epsilon": None, "eps_grid": {"min": 1e-6, "max": 1e2, "num": 41}, "ghost_K": 10},
    "mcmc": {"burn_in": 0, "seed": 0, "thinning": 1, "init": "zero"},
    "noise_var": 0.01,
    "data_seed": 1,
    "t_star": None,
    "output_dir": None,
    "scaling": None,
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _line_of(text: Optional[str], key: str) -> Optional[int]:
    if not text:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _validate(cfg: dict, text: Optional[str], source: str) -> None:
    def fail(key, msg):
        raise ConfigError(msg, _line_of(text, key), source)

    def number(section, key, lo=None, hi=None, integer=False, lo_open=False, hi_open=False, allow_none=False):
        d = cfg if section is None else cfg.get(section, {})
        v = d.get(key)
        label = key if section is None else f"{section}.{key}"
        if v is None and allow_none:
            return
        if isinstance(v, bool) or not isinstance(v, (int, float)) or (integer and not float(v).is_integer()):
            fail(key, f"{label} must be {'an integer' if integer else 'a number'}, got {v!r}")
        if lo is not None and (v <= lo if lo_open else v < lo):
            fail(key, f"{label}={v} must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and (v >= hi if hi_open else v > hi):
            fail(key, f"{label}={v} must be {'<' if hi_open else '<='} {hi}")

    for section in ("geometry", "problem", "truth", "prior", "kernel", "mcmc"):
        if section not in cfg:
            fail(section, f"missing required section {section!r}")
    geo = cfg["geometry"]
    kind = geo.get("kind")
    if kind not in COORDS:
        fail("kind", f"geometry.kind must be one of {sorted(COORDS)}, got {kind!r}")
    if kind == "semi_torus":
        number("geometry", "n1", 3, integer=True)
        number("geometry", "n2", 3, integer=True)
    else:
        number("geometry", "n", 3, integer=True)
    if cfg["problem"] not in ("elliptic", "heat"):
        fail("problem", f"problem must be 'elliptic' or 'heat', got {cfg['problem']!r}")
    d = len(COORDS[kind])
    truth = cfg["truth"]
    needed = ("kappa", "u") if cfg["problem"] == "elliptic" else ("u0",)
    for key in needed:
        if key not in truth:
            fail("truth", f"truth.{key} is required for a {cfg['problem']} problem")
        try:
            compile_field(truth[key], COORDS[kind])
        except ConfigError as exc:
            fail(key, str(exc).split(": ", 1)[-1])
    prior = cfg["prior"]
    if prior.get("kind") not in ("boundary_aware", "boundary_blind"):
        fail("kind", f"prior.kind must be boundary_aware or boundary_blind, got {prior.get('kind')!r}")
    if prior.get("normalization") not in ("retained", "full"):
        fail("normalization", "prior.normalization must be 'retained' or 'full'")
    number("prior", "tau", 0, lo_open=True)
    number("prior", "s", d / 2, lo_open=True)
    number("prior", "m", 1, integer=True)
    number("prior", "k_nn", 1, integer=True)
    number("prior", "L", 0, integer=True)
    number("prior", "boundary_knn", 1, integer=True)
    if kind == "semi_torus" and prior.get("kind") == "boundary_aware" and prior["L"] < 1:
        fail("L", "prior.L must be >= 1 on a surface with boundary curves")
    number("kernel", "k_closest", 2, integer=True)
    number("kernel", "ghost_K", 1, integer=True)
    number("kernel", "epsilon", 0, lo_open=True, allow_none=True)
    grid = cfg["kernel"].get("eps_grid", {})
    if not (isinstance(grid, dict) and 0 < grid.get("min", 0) < grid.get("max", 0) and int(grid.get("num", 0)) >= 3):
        fail("eps_grid", "kernel.eps_grid needs 0 < min < max and num >= 3")
    number("mcmc", "zeta", 0, 1, lo_open=True, hi_open=True)
    number("mcmc", "iterations", 1, integer=True)
    number("mcmc", "burn_in", 0, integer=True)
    number("mcmc", "thinning", 1, integer=True)
    number("mcmc", "seed", 0, integer=True)
    if cfg["mcmc"]["burn_in"] >= cfg["mcmc"]["iterations"]:
        fail("burn_in", "mcmc.burn_in must be smaller than mcmc.iterations")
    if cfg["mcmc"].get("init") not in ("zero", "prior"):
        fail("init", "mcmc.init must be 'zero' or 'prior'")
    number(None, "noise_var", 0, lo_open=True)
    number(None, "data_seed", 0, integer=True)
    if cfg["problem"] == "heat":
        number(None, "t_star", 0, lo_open=True)


def parse_config(source: str | dict, name: str = "<config>") -> ExperimentConfig:
    """Parse JSON text (or an already-loaded mapping), fill defaults, validate."""
    text = None
    if isinstance(source, str):
        text = source
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(exc.msg, exc.lineno, name) from None
    else:
        raw = source
    if not isinstance(raw, dict):
        raise ConfigError("top level must be a JSON object", 1, name)
    cfg = _merge(DEFAULTS, raw)
    _validate(cfg, text, name)
    return ExperimentConfig(cfg)


def _preset_dir():
    return resources.files("gpdm_bayes") / "presets"


def list_presets() -> list[str]:
    return sorted(p.name[:-5] for p in _preset_dir().iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> ExperimentConfig:
    path = _preset_dir() / f"{name}.json"
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(list_presets())}")
    return parse_config(path.read_text(), f"preset:{name}")


def apply_overrides(config: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides; values are parsed as JSON when possible."""
    raw = copy.deepcopy(config.raw)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, value = item.split("=", 1)
        try:
            val = json.loads(value)
        except json.JSONDecodeError:
            val = value
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = val
    return parse_config(raw, f"{config.name}+overrides")


def apply_scale(config: ExperimentConfig, scale: float = 1.0, iterations: Optional[int] = None) -> ExperimentConfig:
    """Desk-scale variant: shrink the cloud and the chain together.

    Node count scales by ``scale`` (per grid side by ``sqrt(scale)`` on
    surfaces); iterations and burn-in scale by ``scale`` unless
    ``iterations`` is given, in which case burn-in keeps its fraction.
    The pCN step grows by ``1/sqrt(scale)`` because the posterior width
    in data-informed directions grows like the inverse square root of
    the number of observations. The rule is recorded under ``scaling``.
    """
    if not 0 < scale <= 1:
        raise ConfigError(f"scale must lie in (0, 1], got {scale}")
    if scale == 1 and iterations is None:
        return config
    raw = copy.deepcopy(config.raw)
    geo = raw["geometry"]
    if geo["kind"] == "semi_torus":
        side = math.sqrt(scale)
        geo["n1"] = max(3, int(round(geo["n1"] * side)))
        geo["n2"] = max(3, int(round(geo["n2"] * side)))
    else:
        geo["n"] = max(3, int(round(geo["n"] * scale)))
    mc = raw["mcmc"]
    frac = mc["burn_in"] / mc["iterations"]
    J = int(iterations) if iterations is not None else max(2, int(round(mc["iterations"] * scale)))
    mc["iterations"] = J
    mc["burn_in"] = int(round(J * frac))
    mc["zeta"] = min(0.5, mc["zeta"] / math.sqrt(scale))
    raw["scaling"] = {
        "scale": scale,
        "iterations": iterations,
        "rule": "N*scale (surfaces: each side*sqrt(scale)); J, burn-in *scale unless iterations given; zeta/sqrt(scale)",
    }
    return parse_config(raw, f"{config.name}@scale{scale}")


def config_hash(config: ExperimentConfig) -> str:
    return hashlib.sha256(json.dumps(config.raw, sort_keys=True).encode()).hexdigest()
