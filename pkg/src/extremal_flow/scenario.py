"""JSON scenario files: schema, parsing and the shipped benchmarks."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .control import ChatteringFeedback, ControlSystem, relax, to_multimap
from .expressions import ExpressionError, ExpressionVector
from .multimap import Box, FunctionMap, LipschitzMap, SeedSet, VertexCombination, VertexMultiMap, estimate_lipschitz


class ScenarioError(ValueError):
    """Malformed scenario; `line` points into the source text when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


_NUM_ARRAY = {"type": "array", "items": {"type": "number"}, "minItems": 1}
_EXPR = {"type": ["string", "number"]}
_BOX = {
    "type": "object", "additionalProperties": False, "required": ["min", "max"],
    "properties": {"min": _NUM_ARRAY, "max": _NUM_ARRAY},
}
_LIPSCHITZ = {
    "type": "array",
    "items": {"anyOf": [{"type": "number", "minimum": 0},
                        {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2}]},
}
_PARAMETERS = {
    "type": "object", "additionalProperties": False,
    "properties": {
        "eps0": {"type": "number", "exclusiveMinimum": 0},
        "levels": {"type": "integer", "minimum": 0},
        "paths": {"type": "integer", "minimum": 1},
        "h_paths": {"type": "integer", "minimum": 1},
        "grid": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "step": {"type": "number", "exclusiveMinimum": 0},
        "refine_eps": {"type": "number", "exclusiveMinimum": 0},
    },
}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["name", "kind", "dim", "horizon", "bound", "domain", "seed_set"],
    "properties": {
        "name": {"type": "string"},
        "description": {"type": "string"},
        "kind": {"enum": ["inclusion", "control"]},
        "dim": {"type": "integer", "minimum": 1, "maximum": 6},
        "horizon": {"type": "number", "exclusiveMinimum": 0},
        "bound": {"type": "number", "minimum": 0},
        "domain": _BOX,
        "seed_set": {"anyOf": [_BOX, {
            "type": "object", "additionalProperties": False, "required": ["points"],
            "properties": {"points": {"type": "array", "items": _NUM_ARRAY, "minItems": 1}}}]},
        "vertices": {"type": "array", "minItems": 1, "items": {"type": "array", "items": _EXPR, "minItems": 1}},
        "lipschitz": _LIPSCHITZ,
        "f0": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "weights": _NUM_ARRAY,
                "expression": {"type": "array", "items": _EXPR, "minItems": 1},
                "lipschitz": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2, "maxItems": 2},
            },
        },
        "control_dim": {"type": "integer", "minimum": 1},
        "dynamics": {"type": "array", "items": _EXPR, "minItems": 1},
        "controls": {"type": "array", "items": _NUM_ARRAY, "minItems": 1},
        "feedback": {
            "type": "object", "additionalProperties": False, "required": ["controls", "weights"],
            "properties": {
                "controls": {"type": "array", "items": {"type": ["integer", "string"]}, "minItems": 1},
                "weights": {"type": "array", "items": _EXPR, "minItems": 1},
            },
        },
        "parameters": _PARAMETERS,
    },
    "allOf": [
        {"if": {"properties": {"kind": {"const": "inclusion"}}},
         "then": {"required": ["vertices"], "not": {"anyOf": [{"required": ["dynamics"]}, {"required": ["feedback"]}]}}},
        {"if": {"properties": {"kind": {"const": "control"}}},
         "then": {"required": ["control_dim", "dynamics", "controls", "feedback"],
                  "not": {"anyOf": [{"required": ["vertices"]}, {"required": ["f0"]}]}}},
    ],
}

DEFAULTS = {"eps0": 0.1, "levels": 8, "paths": 50, "h_paths": 20, "grid": 5, "seed": 0, "refine_eps": 0.5}


@dataclass
class Scenario:
    name: str
    kind: str
    F: VertexMultiMap
    f0: LipschitzMap
    parameters: dict
    raw: dict
    system: ControlSystem | None = None
    feedback: ChatteringFeedback | None = None
    description: str = ""

    @property
    def dim(self) -> int:
        return self.F.dim

    def param(self, key):
        return self.parameters.get(key, DEFAULTS.get(key))


def _line_of(text: str, key) -> int | None:
    if text is None or key is None:
        return None
    m = re.search(r'"%s"\s*:' % re.escape(str(key)), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _schema_error(err: jsonschema.ValidationError, text: str | None) -> ScenarioError:
    where = "/".join(str(p) for p in err.absolute_path) or "<root>"
    key = None
    if err.validator == "additionalProperties":
        extra = re.findall(r"'([^']+)' was unexpected", err.message)
        key = extra[0] if extra else None
        msg = f"unknown field {key!r} in {where}" if key else err.message
    else:
        msg = f"{where}: {err.message}"
        key = next((p for p in reversed(list(err.absolute_path)) if isinstance(p, str)), None)
    return ScenarioError(msg, _line_of(text, key))


def _lipschitz(raw, count):
    if raw is None:
        return None
    if len(raw) != count:
        raise ScenarioError(f"lipschitz has {len(raw)} entries for {count} maps", None)
    return [tuple(v) if isinstance(v, list) else float(v) for v in raw]


def _boxes(data, dim):
    dom = Box(data["domain"]["min"], data["domain"]["max"])
    seed = data["seed_set"]
    D = SeedSet(points=seed["points"]) if "points" in seed else SeedSet(Box(seed["min"], seed["max"]))
    if dom.dim != dim or D.dim != dim:
        raise ScenarioError(f"domain and seed set must have dimension {dim}")
    return dom, D


def from_dict(data: dict, text: str | None = None) -> Scenario:
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(data), key=lambda e: (e.validator != "additionalProperties", len(list(e.absolute_path)), e.message))
    if errors:
        raise _schema_error(errors[0], text)
    n = data["dim"]
    params = dict(data.get("parameters", {}))
    try:
        dom, D = _boxes(data, n)
        if data["kind"] == "inclusion":
            maps = [ExpressionVector(v, n) for v in data["vertices"]]
            F = VertexMultiMap(maps, n, data["horizon"], dom, D, data["bound"],
                               lipschitz=_lipschitz(data.get("lipschitz"), len(maps)),
                               names=[str(v) for v in data["vertices"]], lipschitz_seed=params.get("seed", 0))
            f0 = _base_selection(data.get("f0", {}), F)
            return Scenario(data["name"], "inclusion", F, f0, params, data, description=data.get("description", ""))
        U = np.asarray(data["controls"], dtype=float)
        if U.shape[1] != data["control_dim"]:
            raise ScenarioError(f"controls must have {data['control_dim']} components", _line_of(text, "controls"))
        dyn = ExpressionVector(data["dynamics"], n, control_dim=data["control_dim"])
        sys = ControlSystem(dyn, n, U, data["horizon"], dom, D, data["bound"],
                            lipschitz=_lipschitz(data.get("lipschitz"), len(U)))
        fb_raw = data["feedback"]
        fb = ChatteringFeedback(fb_raw["controls"], fb_raw["weights"], n)
        F = to_multimap(sys, lipschitz_seed=params.get("seed", 0))
        f0 = relax(fb, sys, F)
        return Scenario(data["name"], "control", F, f0, params, data, system=sys, feedback=fb,
                        description=data.get("description", ""))
    except ExpressionError as exc:
        raise ScenarioError(str(exc), None) from None
    except ScenarioError:
        raise
    except ValueError as exc:
        raise ScenarioError(str(exc), None) from None


def _base_selection(spec: dict, F: VertexMultiMap) -> LipschitzMap:
    if "weights" in spec and "expression" in spec:
        raise ScenarioError("f0 takes either weights or an expression")
    if "expression" in spec:
        expr = ExpressionVector(spec["expression"], F.dim)
        if "lipschitz" in spec:
            lt, lx = spec["lipschitz"]
        else:
            lt, lx = estimate_lipschitz(expr, F.dim, F.horizon, F.domain)
        return FunctionMap(expr, F.dim, lt, lx, label=", ".join(expr.sources))
    w = np.asarray(spec.get("weights", np.full(F.m, 1.0 / F.m)), dtype=float)
    if w.size != F.m or np.any(w < -1e-12) or abs(w.sum() - 1.0) > 1e-9:
        raise ScenarioError("f0 weights must be a probability vector over the vertex maps")
    ids = [i for i in range(F.m) if w[i] > 0]
    return VertexCombination(F, ids, w[ids])


def loads(text: str) -> Scenario:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(exc.msg, exc.lineno) from None
    if not isinstance(data, dict):
        raise ScenarioError("a scenario is a JSON object", 1)
    return from_dict(data, text)


def load(path) -> Scenario:
    return loads(Path(path).read_text())


def benchmark_names() -> list[str]:
    base = resources.files("extremal_flow") / "scenarios"
    return sorted(p.name[:-5] for p in base.iterdir() if p.name.endswith(".json"))


def benchmark_path(name: str) -> Path:
    return Path(str(resources.files("extremal_flow") / "scenarios" / f"{name}.json"))


def benchmark(name: str) -> Scenario:
    return load(benchmark_path(name))
