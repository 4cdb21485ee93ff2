"""Run configuration: a YAML tree validated against a fixed schema.

Every error carries the file and line of the offending node.  Unknown keys
are errors.  Numbers may be written in any form Python's ``float`` accepts
(``1e-4`` included, which plain YAML would read as a string).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fields import ANALYTIC_FIELDS

EXPERIMENTS = (
    "heat-check", "poisson-check", "gradient-check", "biot-savart-check", "fk-system-check",
    "fk-reversal-check", "girsanov-check", "tau-bound", "ns-solve", "convergence-study",
)


class ConfigError(ValueError):
    def __init__(self, message: str, source: str = "<config>", line: int | None = None):
        where = f"{source}:{line}" if line is not None else source
        super().__init__(f"{where}: {message}")
        self.line = line


_FIELD = "field"
_POINTS = "points"
_FLOATS = "floats"
_INTS = "ints"

SCHEMA = {
    "experiment": str,
    "seed": int,
    "output": str,
    "problem": {
        "nu": float, "alpha": float, "p": float, "T": float, "t": float,
        "velocity": _FIELD, "vorticity": _FIELD, "forcing": _FIELD, "initial": _FIELD,
        "density": _FIELD, "drift": _FLOATS,
    },
    "solver": {
        "task": str, "R": float, "h": float, "n_t": int, "ds": float, "n_samples": int,
        "bs_samples": int, "mode": str, "method": str, "points": _POINTS, "xs": _FLOATS,
        "stencil_h": float,
        "tolerance": float, "max_iters": int, "n_pairs": int, "slack": float, "workers": int,
        "quadrature": {"s_min": float, "s_max": float, "n_nodes": int},
    },
    "budget": {
        "L": float, "M": float, "C_tilde": float, "C_nu_p": float, "C_M": str, "tau": float,
        "eps0": float, "M_sweep": _FLOATS, "eps0_sweep": _FLOATS,
    },
    "sweep": {"ds": _FLOATS, "n_samples": _INTS, "ds_fixed": float, "n_fixed": int,
              "theta": float, "sigma": float, "k": float, "x": float, "T": float,
              "amplitude": float},
}

_FIELD_KEYS = {"name", "part"}


def _line(node) -> int:
    return node.start_mark.line + 1


class _Reader:
    def __init__(self, source: str):
        self.source = source
        self.lines: dict[str, int] = {}

    def fail(self, msg, node=None):
        raise ConfigError(msg, self.source, _line(node) if node is not None else None)

    def scalar(self, node, kind, path):
        if not isinstance(node, yaml.ScalarNode):
            self.fail(f"{path}: expected a {kind.__name__}", node)
        raw = node.value
        if kind is str:
            return raw
        if kind is int:
            try:
                v = float(raw)
            except ValueError:
                self.fail(f"{path}: expected an integer, got {raw!r}", node)
            if not v.is_integer():
                self.fail(f"{path}: expected an integer, got {raw!r}", node)
            return int(v)
        if kind is float:
            try:
                v = float(raw)
            except ValueError:
                self.fail(f"{path}: expected a number, got {raw!r}", node)
            if not math.isfinite(v):
                self.fail(f"{path}: number must be finite", node)
            return v
        raise AssertionError(kind)

    def generic(self, node, path):
        """Field parameters: numbers, strings or nested lists of them."""
        if isinstance(node, yaml.SequenceNode):
            return [self.generic(n, path) for n in node.value]
        if isinstance(node, yaml.MappingNode):
            self.fail(f"{path}: nested mappings are not allowed in field parameters", node)
        if node.tag.endswith(":null"):
            return None
        if node.tag.endswith(":int"):
            return int(node.value)
        try:
            return float(node.value)
        except ValueError:
            return node.value

    def value(self, node, spec, path):
        self.lines[path] = _line(node)
        if isinstance(spec, dict):
            return self.mapping(node, spec, path)
        if spec == _FIELD:
            if node.tag.endswith(":null"):
                return None
            if not isinstance(node, yaml.MappingNode):
                self.fail(f"{path}: expected a field mapping with a 'name'", node)
            out = {}
            for k, v in node.value:
                out[k.value] = self.generic(v, f"{path}.{k.value}") if k.value not in _FIELD_KEYS \
                    else self.scalar(v, str, f"{path}.{k.value}")
            if "name" not in out:
                self.fail(f"{path}: field needs a 'name'", node)
            known = set(ANALYTIC_FIELDS) | {"ball_indicator", "cosine"}
            if out["name"] not in known:
                self.fail(f"{path}: unknown field {out['name']!r}", node)
            if out.get("part", "value") not in ("value", "vorticity"):
                self.fail(f"{path}: part must be 'value' or 'vorticity'", node)
            return out
        if spec == _POINTS:
            if not isinstance(node, yaml.SequenceNode):
                self.fail(f"{path}: expected a list of 3-vectors", node)
            pts = []
            for item in node.value:
                if not isinstance(item, yaml.SequenceNode) or len(item.value) != 3:
                    self.fail(f"{path}: each point must be a list of three numbers", item)
                pts.append([self.scalar(v, float, path) for v in item.value])
            return pts
        if spec in (_FLOATS, _INTS):
            if not isinstance(node, yaml.SequenceNode):
                self.fail(f"{path}: expected a list", node)
            kind = float if spec == _FLOATS else int
            return [self.scalar(v, kind, path) for v in node.value]
        return self.scalar(node, spec, path)

    def mapping(self, node, schema, path):
        if not isinstance(node, yaml.MappingNode):
            self.fail(f"{path or 'document'}: expected a mapping", node)
        out = {}
        for k, v in node.value:
            key = k.value
            sub = f"{path}.{key}" if path else key
            if key not in schema:
                self.fail(f"unknown key {sub!r}", k)
            if key in out:
                self.fail(f"duplicate key {sub!r}", k)
            out[key] = self.value(v, schema[key], sub)
        return out


@dataclass
class RunConfig:
    experiment: str
    seed: int = 0
    output: str | None = None
    problem: dict = field(default_factory=dict)
    solver: dict = field(default_factory=dict)
    budget: dict = field(default_factory=dict)
    sweep: dict = field(default_factory=dict)
    source: str = "<config>"
    lines: dict = field(default_factory=dict)

    def error(self, msg: str, path: str | None = None) -> ConfigError:
        return ConfigError(msg, self.source, self.lines.get(path) if path else None)

    def need(self, section: str, key: str):
        d = getattr(self, section)
        if key not in d:
            raise self.error(f"missing required key '{section}.{key}'", section)
        return d[key]

    def get(self, section: str, key: str, default=None):
        return getattr(self, section).get(key, default)


def parse_config(text: str, source: str = "<config>", experiment: str | None = None) -> RunConfig:
    """Validate ``text``; ``experiment`` (the CLI subcommand) fills in or must match the ``experiment`` key."""
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        raise ConfigError(f"malformed YAML: {getattr(e, 'problem', e)}", source,
                          mark.line + 1 if mark else None) from None
    if node is None:
        raise ConfigError("empty configuration", source)
    r = _Reader(source)
    data = r.mapping(node, SCHEMA, "")
    if experiment is not None:
        if data.setdefault("experiment", experiment) != experiment:
            raise ConfigError(f"config is for {data['experiment']!r}, not {experiment!r}", source,
                              r.lines.get("experiment"))
    if "experiment" not in data:
        raise ConfigError("missing required key 'experiment'", source, _line(node))
    if data["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {data['experiment']!r}; known: {', '.join(EXPERIMENTS)}",
                          source, r.lines.get("experiment"))
    cfg = RunConfig(data["experiment"], data.get("seed", 0), data.get("output"),
                    data.get("problem", {}), data.get("solver", {}), data.get("budget", {}),
                    data.get("sweep", {}), source, r.lines)
    _check_ranges(cfg)
    return cfg


def _check_ranges(cfg: RunConfig):
    def positive(section, key):
        v = getattr(cfg, section).get(key)
        if v is not None and not v > 0:
            raise cfg.error(f"'{section}.{key}' must be positive", f"{section}.{key}")

    for key in ("nu", "T", "t"):
        positive("problem", key)
    for key in ("R", "h", "ds", "n_samples", "bs_samples", "stencil_h", "max_iters", "n_t", "n_pairs",
                "workers"):
        positive("solver", key)
    tol = cfg.solver.get("tolerance")
    if tol is not None and tol < 0:
        raise cfg.error("'solver.tolerance' must be nonnegative", "solver.tolerance")
    for key in ("L", "M", "tau"):
        positive("budget", key)
    a = cfg.problem.get("alpha")
    if a is not None and not 0 < a < 1:
        raise cfg.error("'problem.alpha' must lie in (0, 1)", "problem.alpha")
    p = cfg.problem.get("p")
    if p is not None and not 1 <= p < 1.5:
        raise cfg.error("'problem.p' must lie in [1, 3/2)", "problem.p")
    mode = cfg.solver.get("mode")
    if mode is not None and mode not in ("symmetric", "full"):
        raise cfg.error("'solver.mode' must be 'symmetric' or 'full'", "solver.mode")
    method = cfg.solver.get("method")
    if method is not None and method not in ("direct", "girsanov"):
        raise cfg.error("'solver.method' must be 'direct' or 'girsanov'", "solver.method")
    task = cfg.solver.get("task")
    if task is not None and task not in ("transport", "picard"):
        raise cfg.error("'solver.task' must be 'transport' or 'picard'", "solver.task")
    cm = cfg.budget.get("C_M")
    if cm is not None and cm not in ("sqrt_plus_linear", "full"):
        raise cfg.error("'budget.C_M' must be 'sqrt_plus_linear' or 'full'", "budget.C_M")
    if cfg.seed < 0 or cfg.seed >= 2**64:
        raise cfg.error("'seed' must be a 64-bit unsigned integer", "seed")


def load_config(path, experiment: str | None = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config: {e.strerror}", str(path)) from None
    return parse_config(text, str(path), experiment)
