"""Scenario configuration files (TOML).

A scenario has five tables::

    name = "oracle-circle"
    seed = 0

    [geometry]
    kind = "circle_scalar"      # circle_scalar | circle_system | flat_torus
    grid_size = 256
    spin_offset = [0.5]         # one entry per circle direction, 0 or 0.5
    fiber_rank = 1

    [weight]
    expression = "2 + sin(theta1)"   # or matrix = [["1", "0"], ["0", "1 + t"]]
    lambda1 = 1.0                    # or named = "crossing" (bounds optional)
    lambda2 = 3.0

    [flow]
    t_min = 0.0
    t_max = 1.0
    samples = 21

    [checks]
    enabled = ["oracle_spectrum", "arsinh_lipschitz"]   # omit for all applicable
    focus = [0, 3]                                      # branch/crossing index range
    random_weights = 0
    [checks.tolerances]
    arsinh_lipschitz = 1e-6

    [output]
    directory = "out"
    formats = ["csv", "json", "svg"]
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .expr import ExpressionSyntaxError
from .models import (NAMED_FAMILIES, EllipticityError, GeometryError, ModelGeometry,
                     WeightFamily, named_family)

CHECKS = ("oracle_spectrum", "hellmann_feynman", "slope_bound", "arsinh_lipschitz",
          "kernel_constancy", "enumeration_stability", "projector", "crossings",
          "weyl", "random_weights")

DEFAULT_TOLERANCES = {
    "oracle_spectrum": 1e-6,
    "hellmann_feynman": 1e-6,
    "arsinh_lipschitz": 1e-6,
    "projector": 1e-6,
    "weyl": 0.05,
}


class ScenarioError(ValueError):
    pass


@dataclass
class GeometrySpec:
    kind: str
    grid_size: int
    spin_offset: list[float] = field(default_factory=lambda: [0.5])
    fiber_rank: int = 1


@dataclass
class WeightSpec:
    expression: str | None = None
    matrix: list | None = None
    named: str | None = None
    lambda1: float | None = None
    lambda2: float | None = None


@dataclass
class FlowSpec:
    t_min: float = 0.0
    t_max: float = 1.0
    samples: int = 21


@dataclass
class ChecksSpec:
    enabled: list[str] | None = None
    tolerances: dict[str, float] = field(default_factory=dict)
    focus: list[int] | None = None
    random_weights: int = 0
    expect_crossings: int | None = None

    def tolerance(self, name: str) -> float:
        return float(self.tolerances.get(name, DEFAULT_TOLERANCES.get(name, 0.0)))


@dataclass
class OutputSpec:
    directory: str = "out"
    formats: list[str] = field(default_factory=lambda: ["csv", "json"])


@dataclass
class Scenario:
    name: str
    geometry: GeometrySpec
    weight: WeightSpec
    flow: FlowSpec = field(default_factory=FlowSpec)
    checks: ChecksSpec = field(default_factory=ChecksSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0

    def build_geometry(self) -> ModelGeometry:
        g = self.geometry
        return ModelGeometry(g.kind, g.grid_size, tuple(g.spin_offset), g.fiber_rank)

    def build_family(self) -> WeightFamily:
        w = self.weight
        interval = (self.flow.t_min, self.flow.t_max)
        if w.named is not None:
            return named_family(w.named, lambda1=w.lambda1, lambda2=w.lambda2, interval=interval)
        template = w.expression if w.expression is not None else w.matrix
        return WeightFamily.create(template, w.lambda1, w.lambda2, interval)

    def to_dict(self) -> dict[str, Any]:
        def prune(d):
            return {k: (prune(v) if isinstance(v, dict) else v)
                    for k, v in d.items() if v is not None}
        return prune(asdict(self))


def _table(raw, key, cls, required=False):
    data = raw.get(key)
    if data is None:
        if required:
            raise ScenarioError(f"missing table [{key}]")
        return cls()
    if not isinstance(data, dict):
        raise ScenarioError(f"[{key}] must be a table")
    known = cls.__dataclass_fields__
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ScenarioError(f"unknown field(s) in [{key}]: {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ScenarioError(f"[{key}]: {exc}") from None


def scenario_from_dict(raw: dict[str, Any], source: str = "<dict>") -> Scenario:
    """Validate a parsed configuration and build a Scenario."""
    try:
        geometry_raw = raw.get("geometry")
        if not isinstance(geometry_raw, dict):
            raise ScenarioError("missing table [geometry]")
        for req in ("kind", "grid_size"):
            if req not in geometry_raw:
                raise ScenarioError(f"geometry.{req} is required")
        scenario = Scenario(
            name=str(raw.get("name", Path(source).stem)),
            geometry=_table(raw, "geometry", GeometrySpec, required=True),
            weight=_table(raw, "weight", WeightSpec, required=True),
            flow=_table(raw, "flow", FlowSpec),
            checks=_table(raw, "checks", ChecksSpec),
            output=_table(raw, "output", OutputSpec),
            seed=int(raw.get("seed", 0)),
        )
        validate(scenario)
    except ScenarioError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    return scenario


def validate(scenario: Scenario) -> None:
    w, f, c = scenario.weight, scenario.flow, scenario.checks
    given = [k for k in ("expression", "matrix", "named") if getattr(w, k) is not None]
    if len(given) != 1:
        raise ScenarioError("weight needs exactly one of expression, matrix, named")
    if w.named is not None and w.named not in NAMED_FAMILIES:
        raise ScenarioError(f"weight.named: unknown family {w.named!r}; known: {sorted(NAMED_FAMILIES)}")
    if w.named is None:
        for bound in ("lambda1", "lambda2"):
            if getattr(w, bound) is None:
                raise ScenarioError(f"weight.{bound} is required")
    if not f.t_min < f.t_max:
        raise ScenarioError(f"flow.t_min ({f.t_min}) must be < flow.t_max ({f.t_max})")
    if f.samples < 2:
        raise ScenarioError("flow.samples must be >= 2")
    for name in (c.enabled or []):
        if name not in CHECKS:
            raise ScenarioError(f"checks.enabled: unknown check {name!r}")
    for name in c.tolerances:
        if name not in CHECKS:
            raise ScenarioError(f"checks.tolerances: unknown check {name!r}")
    if c.focus is not None and (len(c.focus) != 2 or c.focus[0] > c.focus[1]):
        raise ScenarioError("checks.focus must be [j_lo, j_hi] with j_lo <= j_hi")
    try:
        geom = scenario.build_geometry()
    except GeometryError as exc:
        raise ScenarioError(f"geometry: {exc}") from None
    if w.matrix is not None and len(w.matrix) != geom.fiber_rank:
        raise ScenarioError(f"weight.matrix has rank {len(w.matrix)} but geometry "
                            f"{geom.kind} has fiber rank {geom.fiber_rank}")
    try:
        family = scenario.build_family()
    except ExpressionSyntaxError as exc:
        raise ScenarioError(f"weight: {exc}") from None
    except (EllipticityError, ValueError) as exc:
        raise ScenarioError(f"weight: {exc}") from None
    if family.rank not in (1, geom.fiber_rank):
        raise ScenarioError(f"weight rank {family.rank} does not match fiber rank {geom.fiber_rank}")


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ScenarioError(f"{path}: no such file") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{path}: {exc}") from None
    return scenario_from_dict(raw, str(path))


def dump_scenario(scenario: Scenario) -> str:
    return tomli_w.dumps(scenario.to_dict())


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(scenario), encoding="utf-8")
