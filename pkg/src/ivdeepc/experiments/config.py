"""Scenario configuration and the preloaded figure-reproduction presets.

A scenario file is YAML (JSON is accepted too, being a subset). Every key is
optional; see ``configs/scenario.yaml`` in the repository for an annotated
file with all defaults.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from ..controller import VARIANTS, ControllerConfig

SWEEP_AXES = ("data_window", "noise_variance", "horizon", "none")
FIGURES = ("2", "4a", "4b", "4c")


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    controller: ControllerConfig = field(default_factory=ControllerConfig)
    variants: tuple = ("iv", "random_avg")
    noise_variance: float = 0.01
    amplitude: float = 50.0
    offset: float = 50.0
    period: int = 400
    excitation_length: int = 1200
    T_control: int = 800
    n_realizations: int = 20
    base_seed: int = 0
    sweep_axis: str = "none"
    sweep_values: tuple = ()
    # horizon sweeps: n_cols = n_cols_per_horizon * f when set
    n_cols_per_horizon: Optional[int] = None
    # nominal variant: lambda_g = nominal_lambda_scale * var (noisy data only)
    nominal_lambda_scale: float = 10.0
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.controller, dict):
            self.controller = controller_from_dict(self.controller)
        self.variants = tuple(self.variants)
        self.sweep_values = tuple(self.sweep_values)
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise ValueError(f"variants must be a non-empty subset of {VARIANTS}, got {self.variants}")
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(f"sweep_axis must be one of {SWEEP_AXES}")
        if self.sweep_axis != "none" and not self.sweep_values:
            raise ValueError("sweep_values must be non-empty for a sweep")
        if self.n_realizations < 1:
            raise ValueError("n_realizations must be >= 1")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        if self.T_control < 1:
            raise ValueError("T_control must be >= 1")

    @property
    def seeds(self) -> list:
        return [self.base_seed + j for j in range(self.n_realizations)]

    @property
    def points(self) -> list:
        """Sweep values, ``[None]`` when nothing is swept."""
        return [None] if self.sweep_axis == "none" else list(self.sweep_values)

    def resolve(self, sweep_value, variant: str):
        """Controller config and noise variance for one sweep point and variant."""
        ctrl = dataclasses.replace(self.controller, variant=variant)
        var = self.noise_variance
        if self.sweep_axis == "data_window":
            ctrl = dataclasses.replace(ctrl, n_cols=int(sweep_value))
        elif self.sweep_axis == "noise_variance":
            var = float(sweep_value)
        elif self.sweep_axis == "horizon":
            h = int(sweep_value)
            ctrl = dataclasses.replace(ctrl, p=h, f=h)
            if self.n_cols_per_horizon:
                ctrl = dataclasses.replace(ctrl, n_cols=self.n_cols_per_horizon * h)
        if variant == "nominal" and var > 0:
            ctrl = dataclasses.replace(ctrl, lambda_g=self.nominal_lambda_scale * var)
        return ctrl, var

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["controller"] = controller_to_dict(self.controller)
        d["variants"] = list(self.variants)
        d["sweep_values"] = list(self.sweep_values)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario keys: {sorted(unknown)}")
        data = _floats(data, _SCENARIO_FLOATS)
        if "sweep_values" in data:
            data["sweep_values"] = [float(v) if isinstance(v, str) else v for v in data["sweep_values"]]
        return cls(**data)


def controller_to_dict(cfg: ControllerConfig) -> dict:
    d = dataclasses.asdict(cfg)
    for key in ("Q", "R"):
        if d[key] is not None:
            d[key] = np.asarray(d[key]).tolist()
    return d


_CONTROLLER_FLOATS = ("q_weight", "r_weight", "lambda_g", "ridge", "u_max", "du_max", "qp_tol")
_SCENARIO_FLOATS = ("noise_variance", "amplitude", "offset", "nominal_lambda_scale")


def _floats(data: dict, keys) -> dict:
    # YAML 1.1 reads "1e-06" and "inf" as strings
    out = dict(data)
    for key in keys:
        if isinstance(out.get(key), str):
            out[key] = float(out[key])
    return out


def controller_from_dict(data: dict) -> ControllerConfig:
    known = {f.name for f in dataclasses.fields(ControllerConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown controller keys: {sorted(unknown)}")
    return ControllerConfig(**_floats(data, _CONTROLLER_FLOATS))


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    text = path.read_text()
    data = json.loads(text) if path.suffix == ".json" else (yaml.safe_load(text) or {})
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping at top level")
    return ScenarioConfig.from_dict(data)


def dump_config(cfg: ScenarioConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2)


def figure_config(figure: str, n_realizations: int = 20, base_seed: int = 0) -> ScenarioConfig:
    """Preset scenarios for the closed-loop comparisons of iv and random_avg."""
    common = dict(variants=("iv", "random_avg"), n_realizations=n_realizations, base_seed=base_seed)
    if figure == "2":
        return ScenarioConfig(name="fig2", noise_variance=0.1 ** 2,
                              controller=ControllerConfig(n_cols=500), **common)
    if figure == "4a":
        return ScenarioConfig(name="fig4a", noise_variance=0.5 ** 2, sweep_axis="data_window",
                              sweep_values=(60, 125, 250, 500), **common)
    if figure == "4b":
        return ScenarioConfig(name="fig4b", controller=ControllerConfig(n_cols=200),
                              sweep_axis="noise_variance",
                              sweep_values=tuple(round(s ** 2, 10) for s in (0.1, 0.2, 0.3, 0.4, 0.5)),
                              **common)
    if figure == "4c":
        return ScenarioConfig(name="fig4c", noise_variance=0.5 ** 2, sweep_axis="horizon",
                              sweep_values=(10, 20, 30, 40), n_cols_per_horizon=6, **common)
    raise ValueError(f"figure must be one of {FIGURES}")
