"""Scenario files: versioned JSON/YAML schema, defaults and semantic validation."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import jsonschema
import yaml

from . import managing
from .injector import CATALOG, InjectionError, check_exclusive
from .lifecycle import ACTION_TYPES, AdaptationError, make_action
from .monitor import DEFAULT_SHARPNESS_MIN
from .pipeline import DEFAULT_TEMPERATURE, TOPICS

SCHEMA_VERSION = 1
NODES = ("camera", "depth", "enhancement", "fusion", "segmentation")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["schema_version"],
    "properties": {
        "schema_version": {"const": SCHEMA_VERSION},
        "name": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "duration": _pos,
        "controller": {"type": "string", "minLength": 1},
        "frame_rate": _pos,
        "injections": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["time", "uncertainty"],
                "properties": {"time": {"type": "number", "minimum": 0}, "uncertainty": {"type": "string", "pattern": "^U[0-9]{2}$"}},
            },
        },
        "scripted_adaptations": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["time_s", "target", "action"],
                "properties": {
                    "time_s": {"type": "number", "minimum": 0},
                    "target": {"enum": list(NODES)},
                    "action": {"enum": sorted(ACTION_TYPES)},
                    "args": {"type": "object"},
                },
            },
        },
        "thresholds": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"freq_min": _pos, "entropy_max": _pos, "sharpness_min": _pos},
        },
        "delays": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "restart": _pos,
                "redeploy": {"type": "object", "additionalProperties": _pos},
                "redeploy_default": _pos,
                "recalibration_cooldown": _pos,
            },
        },
        "magnitudes": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "color_shift": _num,
                "depth_noise": {"type": "number", "minimum": 0},
                "misalignment": {"type": "array", "items": {"type": "integer"}, "minItems": 2, "maxItems": 2},
                "blur_sigma": {"type": "number", "minimum": 0},
            },
        },
        "model": {"type": "object", "additionalProperties": False, "properties": {"temperature": _pos}},
        "scene": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "width": {"type": "integer", "minimum": 8},
                "height": {"type": "integer", "minimum": 8},
                "num_classes": {"type": "integer", "minimum": 2},
                "pixel_noise_sigma": {"type": "number", "minimum": 0},
            },
        },
        "monitor": {"type": "object", "additionalProperties": False, "properties": {"period": _pos, "window": _pos}},
        "latency": {"type": "object", "propertyNames": {"enum": list(TOPICS)}, "additionalProperties": {"type": "number", "minimum": 0}},
    },
}

DEFAULTS: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "name": "scenario",
    "seed": 0,
    "duration": 20.0,
    "controller": "none",
    "frame_rate": 10.0,
    "injections": [],
    "scripted_adaptations": [],
    "thresholds": {"freq_min": 1.0, "entropy_max": 0.06, "sharpness_min": DEFAULT_SHARPNESS_MIN},
    "delays": {"restart": 0.5, "redeploy": {"camera": 3.0, "depth": 3.0}, "redeploy_default": 1.0, "recalibration_cooldown": 2.0},
    "magnitudes": {"color_shift": 0.25, "depth_noise": 0.15, "misalignment": [2, 0], "blur_sigma": 2.0},
    "model": {"temperature": DEFAULT_TEMPERATURE},
    "scene": {"width": 64, "height": 64, "num_classes": 5, "pixel_noise_sigma": 0.02},
    "monitor": {"period": 0.5, "window": 2.0},
    "latency": {},
}


class ScenarioError(ValueError):
    def __init__(self, problems: list[str]):
        super().__init__("; ".join(problems))
        self.problems = problems


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class Scenario:
    data: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getattr__(self, name):
        try:
            return self.__dict__["data"][name]
        except KeyError:
            raise AttributeError(name) from None

    @property
    def injected(self) -> list[str]:
        return [i["uncertainty"] for i in self.data["injections"]]

    def with_overrides(self, **over) -> "Scenario":
        return Scenario(_merge(self.data, over))

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)


def validate_dict(raw: dict) -> Scenario:
    problems = [
        f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}"
        for e in sorted(jsonschema.Draft202012Validator(SCHEMA).iter_errors(raw), key=lambda e: list(map(str, e.path)))
    ]
    if problems:
        raise ScenarioError(problems)
    data = _merge(DEFAULTS, raw)
    if data["controller"] not in managing.controller_names():
        problems.append(f"controller: unknown controller {data['controller']!r}")
    for inj in data["injections"]:
        if inj["uncertainty"] not in CATALOG:
            problems.append(f"injections: unknown uncertainty {inj['uncertainty']!r}")
        if inj["time"] > data["duration"]:
            problems.append(f"injections: time {inj['time']} beyond duration")
    if not problems:
        try:
            check_exclusive(i["uncertainty"] for i in data["injections"])
        except InjectionError as exc:
            problems.append(f"injections: {exc}")
    for sa in data["scripted_adaptations"]:
        try:
            make_action(sa["action"], sa.get("args"))
        except (AdaptationError, TypeError) as exc:
            problems.append(f"scripted_adaptations: {sa['action']}: {exc}")
    d = data["delays"]
    for node in NODES:
        if d["redeploy"].get(node, d["redeploy_default"]) <= d["restart"]:
            problems.append(f"delays: redeploy of {node} must take longer than a restart")
    if data["scene"]["num_classes"] > 5:
        problems.append("scene: num_classes exceeds the 5 available prototypes")
    if data["scene"]["width"] % 2 or data["scene"]["height"] % 2:
        problems.append("scene: width and height must be even")
    if problems:
        raise ScenarioError(problems)
    return Scenario(data)


def load_raw(path) -> dict:
    p = Path(path)
    if not p.exists():
        raise ScenarioError([f"{p}: no such file"])
    text = p.read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ScenarioError([f"{p}: parse error: {exc}"]) from exc
    if not isinstance(raw, dict):
        raise ScenarioError([f"{p}: top level must be a mapping"])
    return raw


def load_scenario(path) -> Scenario:
    return validate_dict(load_raw(path))


def scenario(**over) -> Scenario:
    """Build a validated scenario from keyword overrides of the defaults."""
    raw = {"schema_version": SCHEMA_VERSION}
    raw.update(over)
    return validate_dict(raw)


def dump_scenario(sc: Scenario, path: Optional[str] = None) -> str:
    text = yaml.safe_dump(sc.to_dict(), sort_keys=False)
    if path:
        Path(path).write_text(text, encoding="utf-8")
    return text
