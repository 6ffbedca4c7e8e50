"""Experiment configuration: JSON schema validation and model construction."""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Any, Dict

import jsonschema

from .asymptotics import Barrier, Growth, IncrementBarrier
from .distributions import DefaultTimeModel, LossAmountModel
from .exceptions import ConfigError
from .path_rate import MultiClassSpec

__all__ = ["load_schema", "validate_config", "load_config", "ExperimentConfig", "REQUIRED"]

REQUIRED = {
    "legendre": ("loss", "points"),
    "rate-path": ("loss", "default_times", "path"),
    "rate-multiclass": ("classes", "path"),
    "barrier": ("loss", "default_times", "barrier", "n"),
    "increment": ("loss", "default_times", "increment_barrier", "n"),
    "oracle-barrier": ("loss", "default_times", "barrier", "n"),
    "oracle-increment": ("loss", "default_times", "increment_barrier", "n"),
    "simulate": ("loss", "default_times", "n", "replications"),
    "hypothesis": ("loss", "default_times"),
}


def load_schema() -> dict:
    text = resources.files("lossrate").joinpath("schema/experiment.schema.json").read_text()
    return json.loads(text)


def validate_config(raw: Any) -> Dict[str, Any]:
    """Check ``raw`` against the published schema; unknown keys are rejected."""
    validator = jsonschema.Draft202012Validator(load_schema())
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        err = errors[0]
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at '{where}': {err.message}")
    return raw


def load_config(path) -> Dict[str, Any]:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return validate_config(raw)


def _loss(spec: dict, field: str) -> LossAmountModel:
    fam = spec["family"]
    try:
        if fam == "discrete":
            if len(spec["values"]) != len(spec["probs"]):
                raise ValueError("values and probs differ in length")
            return LossAmountModel.discrete(spec["values"], spec["probs"])
        if fam == "empirical":
            return LossAmountModel.empirical(spec["samples"])
        if fam == "poisson":
            return LossAmountModel.poisson_type(spec["u"], spec["lambda"])
        return LossAmountModel.exponential(spec["rate"])
    except ValueError as exc:
        raise ConfigError(f"invalid loss model at '{field}': {exc}") from exc


def _times(spec: dict, field: str) -> DefaultTimeModel:
    try:
        return DefaultTimeModel(tuple(spec["probabilities"]))
    except ValueError as exc:
        raise ConfigError(f"invalid default-time law at '{field}': {exc}") from exc


def _growth(spec) -> Growth:
    return Growth(spec["c0"], spec.get("kind", "log"))


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated configuration dictionary with typed accessors."""

    data: Dict[str, Any]

    def get(self, key, default=None):
        return self.data.get(key, default)

    def require(self, command: str):
        missing = [k for k in REQUIRED[command] if k not in self.data]
        if missing:
            raise ConfigError(f"command '{command}' needs config field(s) {', '.join(missing)}")

    def loss(self) -> LossAmountModel:
        return _loss(self.data["loss"], "loss")

    def default_times(self) -> DefaultTimeModel:
        return _times(self.data["default_times"], "default_times")

    def barrier(self) -> Barrier:
        spec = self.data.get("barrier")
        if spec is None:
            raise ConfigError("config field 'barrier' is required here")
        growth = _growth(spec["growth"]) if "growth" in spec else None
        return Barrier(tuple(spec["values"]), growth)

    def increment_barrier(self) -> IncrementBarrier:
        spec = self.data.get("increment_barrier")
        if spec is None:
            raise ConfigError("config field 'increment_barrier' is required here")
        entries = {}
        for i, e in enumerate(spec["entries"]):
            key = (e["s"], e["t"])
            if e["s"] >= e["t"]:
                raise ConfigError(f"increment_barrier/entries/{i}: needs s < t, got s={e['s']}, t={e['t']}")
            if key in entries:
                raise ConfigError(f"increment_barrier/entries/{i}: duplicate pair {key}")
            entries[key] = e["value"]
        growth = None
        if "growth_by_start" in spec:
            growth = {g["s"]: _growth(g) for g in spec["growth_by_start"]}
        elif "growth" in spec:
            growth = _growth(spec["growth"])
        return IncrementBarrier(entries, growth)

    def multiclass(self) -> MultiClassSpec:
        classes = []
        for i, c in enumerate(self.data["classes"]):
            classes.append((c["fraction"], _loss(c["loss"], f"classes/{i}/loss"),
                            _times(c["default_times"], f"classes/{i}/default_times")))
        try:
            return MultiClassSpec(tuple(classes))
        except ValueError as exc:
            raise ConfigError(f"invalid classes: {exc}") from exc
