"""JSON experiment configuration: schema, defaults and object builders."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Any, Optional

import jsonschema

from .bloch import (
    CouplingSpec,
    DetectorSetup,
    continuous_coupled_setup,
    pulsed_setup,
    single_beam_splitter_setup,
    two_beam_splitter_setup,
)
from .detstat import ChainConfig, SourceParams
from .distribution import BaseMeasure, PhaseDistribution
from .trajectory import ChainTrajectoryConfig, TrajectoryConfig

EXPERIMENTS = ("two_bs", "single_bs", "pulsed", "continuous", "energy_shift", "chain")

_positive = {"type": "number", "exclusiveMinimum": 0}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["experiment"],
    "properties": {
        "experiment": {"enum": list(EXPERIMENTS)},
        "source": {
            "type": "object",
            "additionalProperties": False,
            "properties": {"R": _positive, "Gamma": _positive, "T": _positive},
        },
        "xi": {"type": "number"},
        "coupling": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta": {"type": "number", "minimum": 0},
                "epsilon": {"type": "number"},
                "tau": {"type": "number", "minimum": 0},
            },
        },
        "chain": {
            "type": "object",
            "additionalProperties": False,
            "required": ["K", "topology", "xi"],
            "properties": {
                "K": {"type": "integer", "minimum": 2},
                "topology": {"enum": ["linear", "circular"]},
                "xi": {"type": "array", "items": {"type": "number"}},
            },
        },
        "base": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["ring", "uniform_sphere", "point"]},
                "theta0": {"type": "number", "minimum": 0, "maximum": math.pi},
                "phi0": {"type": "number"},
            },
        },
        "L": {"type": "integer", "minimum": 0},
        "constraint": {"enum": [None, "balanced"]},
        "n_traj": {"type": "integer", "minimum": 1},
        "policy": {"enum": ["sample", "most_probable"]},
        "time_law": {"enum": ["decay", "uniform"]},
        "n_detections": {"type": "integer", "minimum": 0},
        "seed": {"type": "integer", "minimum": 0, "maximum": 2 ** 64 - 1},
        "grid": {"type": "integer", "minimum": 8},
        "tol": _positive,
        "oracle": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "quick": {"type": "boolean"},
                "R_values": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0, "maximum": 3}},
                "n_pairs": {"type": "integer", "minimum": 1},
                "N_max": {"type": "integer", "minimum": 1},
                "history_L": {"type": "integer", "minimum": 0, "maximum": 6},
            },
        },
    },
}


class ConfigError(ValueError):
    pass


def validate(doc: dict) -> dict:
    try:
        jsonschema.validate(doc, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    return doc


def load(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return validate(doc)


def load_overrides(path) -> dict:
    """Read a partial configuration; it is validated after merging with defaults."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    return doc


@dataclass
class ExperimentConfig:
    """Validated configuration with defaults filled in."""

    doc: dict

    def get(self, key: str, default: Any = None) -> Any:
        return self.doc.get(key, default)

    @property
    def kind(self) -> str:
        return self.doc["experiment"]

    @property
    def coupling(self) -> CouplingSpec:
        c = self.doc.get("coupling", {})
        delta = c.get("delta", 1.0)
        eps = c.get("epsilon", 0.0)
        if self.kind == "pulsed":
            return CouplingSpec(delta, 0.0, "pulsed", c.get("tau", math.pi / 2 / delta if delta else 0.0))
        if self.kind in ("continuous", "energy_shift"):
            if self.kind == "continuous" and eps != 0.0:
                raise ConfigError("continuous coupling has no energy shift; use energy_shift")
            return CouplingSpec(delta, eps, "continuous")
        return CouplingSpec()

    @property
    def source(self) -> SourceParams:
        s = self.doc.get("source", {})
        T = s.get("T")
        if T is None:
            T = 1.0
            if self.kind in ("continuous", "energy_shift"):
                # one tunneling period 2 pi / delta
                delta = self.coupling.delta
                if delta <= 0:
                    raise ConfigError("source.T is required when delta is zero")
                T = 2.0 * math.pi / delta
        return SourceParams(s.get("R", 1.0), s.get("Gamma", 1.0), T)

    @property
    def base(self) -> BaseMeasure:
        b = self.doc.get("base", {"kind": "ring"})
        theta0 = b.get("theta0", math.pi / 2)
        if b["kind"] == "ring":
            return BaseMeasure.ring(theta0)
        if b["kind"] == "point":
            return BaseMeasure.point(theta0, b.get("phi0", 0.0))
        return BaseMeasure.uniform_sphere()

    @property
    def chain(self) -> ChainConfig:
        c = self.doc.get("chain")
        if c is None:
            raise ConfigError("chain experiments need a 'chain' section")
        try:
            return ChainConfig(c["K"], c["topology"], tuple(c["xi"]))
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def setup(self) -> DetectorSetup:
        k = self.kind
        xi = self.doc.get("xi", math.pi / 2 if k == "two_bs" else 0.0)
        if k == "two_bs":
            return two_beam_splitter_setup(xi)
        if k == "single_bs":
            return single_beam_splitter_setup(xi)
        if k == "pulsed":
            return pulsed_setup(self.coupling)
        if k in ("continuous", "energy_shift"):
            return continuous_coupled_setup(self.coupling)
        raise ConfigError("chain experiments have no two-mode detector setup")

    def initial(self) -> PhaseDistribution:
        return PhaseDistribution(self.base)

    def trajectory_config(self, seed: int):
        policy = self.doc.get("policy")
        time_law = self.doc.get("time_law")
        n_det = self.doc.get("n_detections")
        if self.kind in ("continuous", "energy_shift"):
            policy = policy or "most_probable"
            time_law = time_law or "uniform"
            if time_law == "uniform" and n_det is None:
                n_det = 10
        policy = policy or "sample"
        time_law = time_law or "decay"
        if time_law == "uniform" and n_det is None:
            raise ConfigError("time_law 'uniform' needs n_detections")
        if self.kind == "chain":
            return ChainTrajectoryConfig(self.chain, self.source, policy, seed, time_law, n_det)
        return TrajectoryConfig(
            source=self.source,
            setup=self.setup(),
            policy=policy,
            seed=seed,
            initial_base=self.base,
            coupling=self.coupling,
            time_law=time_law,
            n_detections=n_det,
        )


FIGURE_DEFAULTS = {
    "fig2": {"experiment": "two_bs", "xi": math.pi / 2, "L": 40, "constraint": "balanced"},
    "fig4": {"experiment": "continuous", "coupling": {"delta": 1.0, "epsilon": 0.0}, "n_traj": 10,
             "n_detections": 10, "policy": "most_probable", "time_law": "uniform"},
    "fig5": {"experiment": "energy_shift", "coupling": {"delta": 1.0, "epsilon": 0.25}, "n_traj": 10,
             "n_detections": 10, "policy": "most_probable", "time_law": "uniform"},
}


def figure_config(name: str, overrides: Optional[dict] = None) -> ExperimentConfig:
    doc = json.loads(json.dumps(FIGURE_DEFAULTS[name]))
    if overrides:
        doc.update(overrides)
    return ExperimentConfig(validate(doc))
