"""Declarative experiment configuration with a versioned schema.

One YAML file describes an end-to-end run: dataset, swarm layout, noise,
solver, fusion mode and outputs.  Unknown keys are rejected.  The same
models double as the request schemas of the HTTP service.
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .errors import ConfigError

SCHEMA_VERSION = 1

FusionMode = Literal["vo-only", "vo+inter", "vo+inter+anchor"]

MODE_COLORS = {
    # Plot colors: ground truth gray; modes follow the usual convention of
    # orange for odometry-only, green with inter-agent ranges, red with all
    # ranges.
    "truth": "#9e9e9e",
    "vo-only": "#ff7f0e",
    "vo+inter": "#2ca02c",
    "vo+inter+anchor": "#d62728",
}


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SyntheticSpec(StrictModel):
    keyframes: int = Field(80, ge=2)
    dt: float = Field(1.0, gt=0)
    radius: float = Field(60.0, gt=0)
    climb: float = 2.0
    laps: float = Field(1.0, gt=0)


class DatasetSpec(StrictModel):
    format: Literal["synthetic", "kitti-pose", "tum-trajectory"] = "synthetic"
    path: Optional[str] = None
    rate_hz: float = Field(10.0, gt=0)  # timestamp synthesis for kitti files
    stride: int = Field(1, ge=1)  # keyframe decimation
    synthetic: SyntheticSpec = Field(default_factory=SyntheticSpec)

    @field_validator("path")
    @classmethod
    def _path_nonempty(cls, v):
        if v is not None and not str(v).strip():
            raise ValueError("dataset path must be nonempty when given")
        return v


class SystematicBiasSpec(StrictModel):
    c0: float = 0.1
    c_cos1: float = -0.12
    c_cos1_sq: float = 0.06
    c_cos2: float = -0.12
    c_cos2_sq: float = 0.06
    c_d: float = 5.0e-4
    c_d_sq: float = -1.25e-6


class RangingNoiseSpec(StrictModel):
    sigma_eta: float = Field(0.1, ge=0)
    multipath_step_sigma: float = Field(0.01, ge=0)
    systematic_bias: Optional[SystematicBiasSpec] = None
    min_variance: float = Field(1e-10, gt=0)


class OdometryNoiseSpec(StrictModel):
    rot_std: float = Field(0.002, ge=0)
    trans_std_per_m: float = Field(0.02, ge=0)
    scale_drift_std: float = Field(0.004, ge=0)
    min_variance: float = Field(1e-10, gt=0)


class SolverSpec(StrictModel):
    init_damping: float = Field(1e-4, gt=0)
    damping_increase: float = Field(10.0, gt=1)
    damping_decrease: float = Field(10.0, gt=1)
    max_damping: float = Field(1e12, gt=0)
    max_iterations: int = Field(100, ge=1)
    rel_cost_tol: float = Field(1e-9, gt=0)
    update_norm_tol: float = Field(1e-10, gt=0)
    step_cap: float = Field(1.0, gt=0)


class PriorSpec(StrictModel):
    first_agent_sigma: float = Field(1e-4, gt=0)
    other_rot_sigma: float = Field(0.01, gt=0)
    other_trans_sigma: float = Field(0.1, gt=0)
    other_scale_sigma: float = Field(0.01, gt=0)


class BaselineSpec(StrictModel):
    ccm_slam_ub: float = Field(58400.0, gt=0)
    ccm_slam_lb: float = Field(14600.0, gt=0)
    dslam: float = Field(8192.0, gt=0)


class OutputSpec(StrictModel):
    directory: str = "out"
    plots: bool = True
    wire_dump: bool = True


class ExperimentConfig(StrictModel):
    """Everything one experiment needs; see README for a walkthrough."""

    schema_version: int = SCHEMA_VERSION
    dataset: DatasetSpec = Field(default_factory=DatasetSpec)
    agents: int = Field(4, ge=1)
    anchors: dict[int, tuple[float, float, float]] = Field(
        default_factory=lambda: {0: (-50.0, 150.0, 10.0)}
    )
    max_range_m: float = Field(200.0, gt=0)
    mode: FusionMode = "vo+inter+anchor"
    seeds: list[int] = Field(default_factory=lambda: [0])
    odometry_noise: OdometryNoiseSpec = Field(default_factory=OdometryNoiseSpec)
    ranging_noise: RangingNoiseSpec = Field(default_factory=RangingNoiseSpec)
    solver: SolverSpec = Field(default_factory=SolverSpec)
    priors: PriorSpec = Field(default_factory=PriorSpec)
    association_tol_s: float = Field(0.05, gt=0)
    map_points_per_keyframe: int = Field(0, ge=0)
    comm_baselines: BaselineSpec = Field(default_factory=BaselineSpec)
    output: OutputSpec = Field(default_factory=OutputSpec)

    @field_validator("schema_version")
    @classmethod
    def _version(cls, v):
        if v != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {v}, expected {SCHEMA_VERSION}")
        return v

    @field_validator("seeds")
    @classmethod
    def _seeds_nonempty(cls, v):
        if not v:
            raise ValueError("at least one seed is required")
        return v


def load_config(path) -> ExperimentConfig:
    """Parse and validate a YAML experiment config.

    Raises:
        ConfigError: unreadable file, bad YAML, or schema violation.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"invalid YAML in {path}: {e}") from e
    return parse_config(raw if raw is not None else {})


def parse_config(raw: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(str(e)) from e


def dump_config(cfg: ExperimentConfig, path: str | Path):
    """Write the fully resolved config; reloading it reproduces the run."""
    data = cfg.model_dump(mode="json")
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, sort_keys=True)
