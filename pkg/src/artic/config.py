"""Experiment configuration: one JSON file plus dotted --set overrides."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import dataclass
from typing import Optional

from .baseline import PfParams
from .model import load_model
from .observation import SceneSpec
from .pmpnbp import InferenceParams, PriorSpec
from .potentials import PairwiseParams, UnaryParams

METHODS = ("pmpnbp", "pf", "both")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ValidateSettings:
    bins: int = 200
    grid_pad: float = 0.05  # meters beyond each node's reachable range
    iterations: Optional[int] = None
    tolerance_cells: int = 2
    tolerance_abs: float = 0.01  # meters
    pass_fraction: float = 0.8


@dataclass(frozen=True)
class ExperimentConfig:
    model_path: str
    scene: SceneSpec
    method: str = "both"
    inference: InferenceParams = None
    pf: PfParams = None
    runs: int = 10
    out_dir: str = "results"
    validate: ValidateSettings = ValidateSettings()

    def load_model(self):
        return load_model(self.model_path)


def parse_override(text):
    """'a.b.c=value' -> (['a','b','c'], parsed value); values parse as JSON
    with a bare-string fallback."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key=value")
    key, raw = text.split("=", 1)
    key = key.strip()
    if not key:
        raise ConfigError(f"override {text!r} has an empty key")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.split("."), value


def apply_overrides(doc, overrides):
    doc = copy.deepcopy(doc)
    for text in overrides or ():
        path, value = parse_override(text)
        node = doc
        for part in path[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {text!r} descends into a non-object")
        node[path[-1]] = value
    return doc


def _build(cls, doc, where, nested=()):
    known = set(cls.__dataclass_fields__)
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"{where}: unknown keys {sorted(extra)}")
    kwargs = dict(doc)
    for key, sub_cls in nested:
        if key in kwargs and isinstance(kwargs[key], dict):
            kwargs[key] = _build(sub_cls, kwargs[key], f"{where}.{key}")
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_doc(doc, base_dir="."):
    """Typed config from a parsed JSON document; paths resolve against the
    config file's directory."""
    if "model" not in doc:
        raise ConfigError("config needs a 'model' path")
    known = {"model", "scene", "method", "inference", "pf", "runs", "out_dir", "validate"}
    extra = set(doc) - known
    if extra:
        raise ConfigError(f"unknown top-level keys {sorted(extra)}")
    method = doc.get("method", "both")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {METHODS}, got {method!r}")
    runs = int(doc.get("runs", 10))
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    model_path = doc["model"]
    if not os.path.isabs(model_path):
        model_path = os.path.join(base_dir, model_path)
    inference = _build(
        InferenceParams, doc.get("inference", {}), "inference",
        nested=(("unary", UnaryParams), ("pairwise", PairwiseParams),
                ("prior", PriorSpec)),
    )
    pf_doc = dict(doc.get("pf", {}))
    pf_doc.setdefault("unary", doc.get("inference", {}).get("unary", {}))
    pf = _build(PfParams, pf_doc, "pf", nested=(("unary", UnaryParams),))
    try:
        scene = SceneSpec.from_json(doc.get("scene", {}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"scene: {exc}") from exc
    return ExperimentConfig(
        model_path=model_path,
        scene=scene,
        method=method,
        inference=inference,
        pf=pf,
        runs=runs,
        out_dir=doc.get("out_dir", "results"),
        validate=_build(ValidateSettings, doc.get("validate", {}), "validate"),
    )


def load_config(path, overrides=()):
    """Parsed config plus the resolved raw document (for provenance dumps)."""
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    doc = apply_overrides(doc, overrides)
    return config_from_doc(doc, base_dir=os.path.dirname(os.path.abspath(path))), doc
