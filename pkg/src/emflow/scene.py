"""Scene files: a TOML document naming a metric, a field, events and run settings.

Example::

    seed = 0

    [metric]
    name = "minkowski"
    dimension = 4

    [field]
    name = "uniform"
    E = 1.0

    [events]
    x0 = [0.0, 0.0, 0.0, 0.0]
    x1 = [2.0, 1.0, 0.0, 0.0]

    [run]
    qm = 1.0
    span = 1.0
"""

from __future__ import annotations

import inspect
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import jsonschema
import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import geometry as geo
from .dynamics import IntegratorConfig
from .errors import ConfigurationError

METRICS = {
    "minkowski": geo.Minkowski,
    "schwarzschild": geo.Schwarzschild,
    "constant": geo.ConstantMetric,
    "euclidean": geo.EuclideanSpace,
    "sphere": geo.RoundSphere,
}

FIELDS = {
    "zero": geo.ZeroField,
    "uniform": geo.UniformField,
    "constant_potential": geo.ConstantPotential,
    "constant": geo.ConstantField,
    "magnetic": geo.SpatialMagneticField,
    "monopole": geo.MonopoleField,
}

_VECTOR = {"type": "array", "items": {"type": "number"}, "minItems": 2}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["metric", "field"],
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "metric": {
            "type": "object",
            "required": ["name"],
            "properties": {"name": {"enum": sorted(METRICS)}},
        },
        "field": {
            "type": "object",
            "required": ["name"],
            "properties": {"name": {"enum": sorted(FIELDS)}},
        },
        "events": {"type": "object", "additionalProperties": _VECTOR},
        "initial": {
            "type": "object",
            "additionalProperties": False,
            "required": ["x", "v"],
            "properties": {"x": _VECTOR, "v": _VECTOR},
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "qm": {"type": "number"},
                "charge": {"type": "number"},
                "eps": {"enum": [-1, 1]},
                "span": {"type": "number", "exclusiveMinimum": 0},
                "method": {"enum": ["rk45", "dop853", "rk4"]},
                "rtol": {"type": "number", "exclusiveMinimum": 0},
                "atol": {"type": "number", "exclusiveMinimum": 0},
                "step": {"type": "number", "exclusiveMinimum": 0},
                "samples": {"type": "integer", "minimum": 2},
                "nodes": {"type": "integer", "minimum": 3},
                "dlambda": {"type": "number", "exclusiveMinimum": 0},
                "qm_grid": {"type": "string"},
                "bvp_tol": {"type": "number", "exclusiveMinimum": 0},
                "max_iter": {"type": "integer", "minimum": 1},
                "restarts": {"type": "integer", "minimum": 0},
            },
        },
    },
}


def _build(registry, kind, table):
    table = dict(table)
    name = table.pop("name")
    cls = registry[name]
    allowed = set(inspect.signature(cls.__init__).parameters) - {"self"}
    unknown = set(table) - allowed
    if unknown:
        raise ConfigurationError(
            f"{kind}.{sorted(unknown)[0]}: unknown parameter for {kind} '{name}' (allowed: {sorted(allowed)})"
        )
    try:
        return cls(**table)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{kind}: cannot build '{name}': {exc}") from exc


def _check_finite(obj, where):
    if isinstance(obj, dict):
        for k, v in obj.items():
            _check_finite(v, f"{where}.{k}" if where else k)
    elif isinstance(obj, list):
        for i, v in enumerate(obj):
            _check_finite(v, f"{where}[{i}]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise ConfigurationError(f"{where}: value must be finite")


def parse_grid(text):
    """``"a:b:n"`` -> ``n`` evenly spaced values from ``a`` to ``b`` inclusive."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ConfigurationError(f"grid '{text}': expected a:b:steps")
    try:
        a, b, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError as exc:
        raise ConfigurationError(f"grid '{text}': {exc}") from exc
    if n < 1 or not (math.isfinite(a) and math.isfinite(b)):
        raise ConfigurationError(f"grid '{text}': need finite ends and at least one step")
    return [a] if n == 1 else [float(v) for v in np.linspace(a, b, n)]


@dataclass
class SceneConfig:
    metric: object
    field: object
    events: dict = field(default_factory=dict)
    initial: tuple | None = None
    run: dict = field(default_factory=dict)
    seed: int = 0
    source: str = "<memory>"
    raw: dict = field(default_factory=dict)

    @property
    def dimension(self):
        return self.metric.dimension

    def event(self, name):
        if name not in self.events:
            raise ConfigurationError(f"events.{name}: not defined in {self.source}")
        return self.events[name]

    def integrator(self, **override):
        keys = ("method", "rtol", "atol", "step", "samples")
        opts = {k: self.run[k] for k in keys if k in self.run}
        opts.update({k: v for k, v in override.items() if v is not None})
        return IntegratorConfig(**opts)

    def sample_points(self):
        """Points at which the scene's invariants are validated."""
        pts = [np.asarray(e) for e in self.events.values()]
        if self.initial is not None:
            pts.append(self.initial[0])
        if not pts:
            base = np.zeros(self.dimension)
            if self.metric.name == "schwarzschild":
                base = np.array([0.0, 6.0, 1.0, 0.5])
            elif self.metric.name == "sphere":
                base = np.array([1.0, 0.5])
            pts = [base]
        rng = np.random.default_rng(self.seed)
        out = []
        for p in pts:
            out.append(p)
            q = p + 0.05 * rng.standard_normal(p.size)
            if self.metric.domain_margin(q) > 0:
                out.append(q)
        return out

    def validate(self):
        """Check metric and field invariants; raises :class:`ConfigurationError` on failure."""
        pts = self.sample_points()
        ok_m, worst_m = geo.validate_metric(self.metric, pts)
        if not ok_m:
            raise ConfigurationError(f"metric '{self.metric.name}' fails validation: {worst_m}")
        ok_f, worst_f = geo.validate_field(self.field, pts)
        if not ok_f:
            raise ConfigurationError(f"field '{self.field.name}' fails validation: {worst_f}")
        return {"metric": worst_m, "field": worst_f}


def scene_from_dict(data, source="<memory>"):
    try:
        jsonschema.validate(data, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigurationError(f"{source}: {where}: {exc.message}") from None
    _check_finite(data, "")
    metric = _build(METRICS, "metric", data["metric"])
    fld = _build(FIELDS, "field", data["field"])
    if fld.dimension != metric.dimension:
        raise ConfigurationError(
            f"{source}: field dimension {fld.dimension} does not match metric dimension {metric.dimension}"
        )
    events = {}
    for name, vec in data.get("events", {}).items():
        if len(vec) != metric.dimension:
            raise ConfigurationError(f"{source}: events.{name}: expected {metric.dimension} coordinates")
        events[name] = np.asarray(vec, dtype=float)
    initial = None
    if "initial" in data:
        x, v = (np.asarray(data["initial"][k], dtype=float) for k in ("x", "v"))
        if x.size != metric.dimension or v.size != metric.dimension:
            raise ConfigurationError(f"{source}: initial: expected {metric.dimension} coordinates")
        initial = (x, v)
    return SceneConfig(metric, fld, events, initial, dict(data.get("run", {})), int(data.get("seed", 0)), source, data)


def load_scene(path):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigurationError(f"{path}: {exc.strerror}") from None
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"{path}: {exc}") from None
    return scene_from_dict(data, str(path))
