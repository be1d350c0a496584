"""Experiment configuration: YAML text validated by pydantic models.

Every experiment has a default configuration (its acceptance setting). A
user file is merged over those defaults and then validated; unknown keys
anywhere are errors.
"""
from __future__ import annotations

import copy
import hashlib
import json
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..exact_enum import default_budget
from ..potential import Bernoulli, ExponentialMean1, PointMass, PotentialSpec, TrapLimit
from ..walk_model import WalkConfig

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class WalkSection(_Strict):
    dimension_d: int = Field(ge=1)
    drift_h: float = Field(ge=0)

    def build(self) -> WalkConfig:
        return WalkConfig(self.dimension_d, self.drift_h)


class PotentialSection(_Strict):
    law: Literal["bernoulli", "exponential_mean1", "point_mass", "trap_limit"]
    prob_rho: float | None = None
    value_v: float | None = None
    trap_cost: float | None = None

    def build(self) -> PotentialSpec:
        if self.law == "bernoulli":
            return Bernoulli(_need(self.prob_rho, "prob_rho"), _need(self.value_v, "value_v"))
        if self.law == "exponential_mean1":
            return ExponentialMean1()
        if self.law == "point_mass":
            return PointMass(_need(self.value_v, "value_v"))
        return TrapLimit(_need(self.trap_cost, "trap_cost"))


def _need(v: float | None, name: str) -> float:
    if v is None:
        raise ValueError(f"potential needs {name}")
    return v


class SizesSection(_Strict):
    """Lengths, spans, replica counts and cut levels; each experiment reads its own."""

    d_grid: list[int] = []
    h_grid: list[float] = []
    N: int | None = Field(default=None, ge=0)
    N_grid: list[int] | None = None
    L_max: int | None = Field(default=None, ge=1)
    L_grid: list[int] | None = None
    p_grid: list[int] = [1]
    K: int | None = Field(default=None, ge=3)
    k_restrict: float | None = None
    cutoff: int | None = Field(default=None, ge=2)
    N_trunc: int = Field(default=80, ge=1)
    eps_trunc: float = Field(default=1e-9, ge=0)
    offset_dy: list[int] = []


class SamplesSection(_Strict):
    n_walks: int = Field(default=10**6, ge=2)
    n_paths: int = Field(default=500, ge=2)
    n_envs: int = Field(default=400, ge=2)
    n_pairs: int = Field(default=10**5, ge=2)
    n_chains: int = Field(default=40000, ge=1)
    max_steps: int = Field(default=20, ge=0)
    horizon: int = Field(default=2000, ge=1)


class TolerancesSection(_Strict):
    abs_tol: float = Field(default=5e-3, gt=0)
    n_sigma: float = Field(default=3.0, gt=0)
    slack_max: float = Field(default=1e-6, gt=0)
    rel_change: float = Field(default=0.05, gt=0)
    agree_tol: float = Field(default=0.02, gt=0)
    tail_tol: float = Field(default=1e-4, gt=0)
    max_rel_slack: float = Field(default=0.5, gt=0)


class RatioCurveSection(_Strict):
    """Second walk setting for the two-replica ratio curve."""

    walk: WalkSection
    beta: list[float]
    N_grid: list[int]
    n_pairs: int = Field(default=10**5, ge=2)
    n_boot: int = Field(default=2000, ge=10)


class ExperimentConfig(_Strict):
    experiment: str
    walk: WalkSection
    potential: PotentialSection
    beta: float | list[float]
    sizes: SizesSection = SizesSection()
    samples: SamplesSection = SamplesSection()
    tolerances: TolerancesSection = TolerancesSection()
    ratio_curve: RatioCurveSection | None = None
    seed: int = Field(default=20240601, ge=0, lt=2**64)
    output_dir: str = "runs"
    budget: int = Field(default_factory=default_budget, gt=0)

    @field_validator("experiment")
    @classmethod
    def _known(cls, v: str) -> str:
        from .experiments import EXPERIMENTS

        if v not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {v!r}")
        return v

    @property
    def betas(self) -> list[float]:
        return list(self.beta) if isinstance(self.beta, list) else [self.beta]

    def hash(self) -> str:
        """SHA-256 of every field except the output location."""
        data = self.model_dump(mode="json", exclude={"output_dir"})
        text = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


def deep_merge(base: Mapping[str, Any], over: Mapping[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(dict(base))
    for k, v in over.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def read_config_text(path: str | Path) -> dict[str, Any]:
    data = yaml.safe_load(Path(path).read_text())
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError("config file must hold a mapping")
    return data


def build_config(experiment: str | None, overrides: Mapping[str, Any] | None = None) -> ExperimentConfig:
    """Defaults for ``experiment`` (or the one named in ``overrides``) with overrides applied."""
    from .experiments import EXPERIMENTS

    overrides = dict(overrides or {})
    name = experiment or overrides.get("experiment")
    if name is None:
        raise ValueError("no experiment named")
    if name not in EXPERIMENTS:
        raise KeyError(name)
    merged = deep_merge(EXPERIMENTS[name].defaults, overrides)
    merged["experiment"] = name
    return ExperimentConfig.model_validate(merged)
