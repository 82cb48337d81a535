"""Simulation configuration: timing, kinematics, gating, and backend knobs."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .reasoning import DriverSet, OracleThresholds
from .world import FovParams


@dataclass(frozen=True)
class LatencyModel:
    """Per-role inference latency as (mean, spread) seconds of a normal
    truncated at zero."""

    describe_mean: float = 3.50
    describe_sd: float = 0.64
    plan_mean: float = 7.10
    plan_sd: float = 1.22
    validate_mean: float = 1.49
    validate_sd: float = 0.41

    def sample(self, role: str, rng) -> float:
        mean, sd = {
            "describe": (self.describe_mean, self.describe_sd),
            "plan": (self.plan_mean, self.plan_sd),
            "validate": (self.validate_mean, self.validate_sd),
        }[role]
        return max(0.0, float(rng.normal(mean, sd)))


@dataclass(frozen=True)
class HoldParams:
    """Normal hold-duration draw, clamped to the stated bounds."""

    mean: float = 1.5
    sd: float = 0.25
    minimum: float = 1.0
    maximum: float = 2.0


@dataclass(frozen=True)
class SimConfig:
    tick: float = 0.2
    turn_rate_deg: float = 36.0
    hold: HoldParams = field(default_factory=HoldParams)
    lookahead_s: float = 2.0
    ssim_threshold: float = 60.0
    fmm_recent: int = 10
    fmm_relevant: int = 10
    drivers: DriverSet = field(default_factory=DriverSet)
    oracle: OracleThresholds = field(default_factory=OracleThresholds)
    latency: LatencyModel = field(default_factory=LatencyModel)
    fov: FovParams = field(default_factory=FovParams)
    walk_speed: float = 1.3
    use_llm: bool = True
    use_res: bool = True

    def replace(self, **kwargs) -> "SimConfig":
        return dataclasses.replace(self, **kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "SimConfig":
        data = dict(data)
        nested = {
            "hold": HoldParams,
            "drivers": DriverSet,
            "oracle": OracleThresholds,
            "latency": LatencyModel,
            "fov": FovParams,
        }
        for key, cls in nested.items():
            if key in data and isinstance(data[key], dict):
                data[key] = cls(**data[key])
        known = {f.name for f in dataclasses.fields(SimConfig)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return SimConfig(**data)

    @staticmethod
    def load(path: str) -> "SimConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return SimConfig.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
