"""
Run Configuration
=================
Validated configuration models for every pipeline stage.

CONFIG RULES:
- Every field has a documented default; a missing field takes its default
- Cross-field constraints are checked on construction
- Angles are stored in radians even where defaults are quoted in degrees
"""

import math
from typing import List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from geometry import CameraIntrinsics
from parameter_registry import (
    SWEEP_REGISTRY,
    TUKEY_C_M,
    TUKEY_C_S,
    EstimatorKind,
)


class _StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ============================================================================
# STAGE CONFIGS
# ============================================================================

class WindowConfig(_StrictModel):
    """Hybrid event clustering parameters."""
    n_target: int = Field(500, gt=0, description="Nominal events per cluster")
    n_min: int = Field(100, gt=0, description="Clusters below this are merged with the next window")
    n_max: int = Field(2000, gt=0, description="Clusters above this keep the n_max events closest to the center")
    dt_initial: float = Field(0.01, gt=0, description="Nominal half-width of a window (s)")
    dt_max: float = Field(0.08, gt=0, description="Maximum total span of a merged window (s)")

    @model_validator(mode="after")
    def _ordered(self):
        if not (self.n_min <= self.n_target <= self.n_max):
            raise ValueError("Expected n_min <= n_target <= n_max")
        if self.dt_initial > self.dt_max:
            raise ValueError("Expected dt_initial <= dt_max")
        return self

    @property
    def max_merges(self) -> int:
        return int(math.floor(math.log2(self.dt_max / self.dt_initial)))


class DetectionConfig(_StrictModel):
    """Space-time plane segmentation parameters."""
    time_scale: float = Field(1000.0, gt=0, description="Pixels per second along the time axis")
    plane_inlier_tol: float = Field(2.0, gt=0, description="Point-to-plane inlier distance (px)")
    min_plane_events: int = Field(30, gt=0, description="Minimum support of a plane")
    max_planes: int = Field(40, gt=0, description="Maximum number of planes extracted")
    denoise_radius: float = Field(3.0, gt=0, description="Neighbourhood radius for denoising (px)")
    denoise_min_neighbors: int = Field(3, ge=0, description="Points with fewer neighbours are dropped; 0 disables")
    sample_neighbors: int = Field(30, gt=2, description="Neighbourhood size for local 3-point sampling")
    max_hypotheses: int = Field(2000, gt=0, description="Cap on plane hypotheses per extracted plane")
    success_probability: float = Field(0.99, gt=0, lt=1)
    endpoint_percentiles: Tuple[float, float] = Field((2.0, 98.0))
    dedup_angle_deg: float = Field(2.0, gt=0)
    dedup_distance: float = Field(3.0, gt=0, description="Mutual midpoint distance for merging lines (px)")
    seed: int = 0


class BnbConfig(_StrictModel):
    """Branch-and-bound rotation search parameters."""
    epsilon_min: float = Field(math.radians(0.5), gt=0, description="Inlier threshold (rad)")
    min_branch_side: float = Field(math.radians(0.25), gt=0, description="Termination branch side (rad)")
    max_queue: int = Field(2_000_000, gt=0)
    residual_gate: float = Field(5.0, gt=0, description="Mean reprojection residual above which an initialization is low-confidence (px)")


class MatchConfig(_StrictModel):
    """Event-to-line assignment gates."""
    d_t: float = Field(8.0, gt=0, description="Line-distance gate (px)")
    d_m_factor: float = Field(0.5, gt=0, description="Midpoint gate as a fraction of projected line length")
    d_a: float = Field(4.0, gt=0, description="Ambiguity gate (px)")
    min_line_events: int = Field(10, ge=0, description="Lines with fewer assigned events are dropped")

    @model_validator(mode="after")
    def _ambiguity_inside_gate(self):
        if self.d_a > self.d_t:
            raise ValueError("Expected d_a <= d_t")
        return self


class OptConfig(_StrictModel):
    """Robust pose optimization parameters."""
    max_iterations: int = Field(50, gt=0)
    gradient_threshold: float = Field(1e-6, gt=0, description="Stop when |grad C| falls below this (px^2)")
    inner_iterations: int = Field(10, gt=0, description="Damped Gauss-Newton steps per reweighting")
    damping_initial: float = Field(1e-3, gt=0)
    damping_factor: float = Field(10.0, gt=1)
    damping_max: float = Field(1e10, gt=0)
    c_m: float = Field(TUKEY_C_M, gt=0)
    c_s: float = Field(TUKEY_C_S, gt=0)
    sigma_floor: float = Field(0.1, gt=0, description="Lower bound on the residual scale (px)")
    s_stage_iterations: int = Field(20, gt=0, description="Iterations of the S stage inside MM")
    min_assignments: int = Field(30, gt=0, description="Fewer assignments declares a window failed")
    max_condition: float = Field(1e10, gt=1, description="Normal-matrix condition above which a window fails")


# ============================================================================
# SYNTHETIC DATA
# ============================================================================

class SynthConfig(_StrictModel):
    """Synthetic scene and event generation."""
    n_lines: int = Field(25, ge=1)
    depth_range: Tuple[float, float] = Field((5.0, 10.0), description="Camera-frame depth range (m)")
    image: CameraIntrinsics = Field(default_factory=CameraIntrinsics)
    noise_sigma: float = Field(2.0, ge=0, description="Perpendicular Gaussian event noise (px)")
    outlier_rate: float = Field(0.02, ge=0, le=1)
    events_per_line: int = Field(40, gt=0)
    min_line_pixels: float = Field(40.0, gt=0, description="Minimum projected length of a generated line (px)")
    seed: int = 0

    @field_validator("depth_range")
    @classmethod
    def _positive_depths(cls, v):
        lo, hi = v
        if lo <= 0 or hi < lo:
            raise ValueError("depth_range must satisfy 0 < min <= max")
        return v


class TrajectoryConfig(_StrictModel):
    """Constant-twist ground-truth motion for synthetic tracking data."""
    angular_velocity: Tuple[float, float, float] = Field((0.1, 0.2, 0.2), description="rad/s")
    linear_velocity: Tuple[float, float, float] = Field((0.4, 0.3, 0.5), description="m/s")
    duration: float = Field(1.0, gt=0, description="Seconds")
    window_rate: float = Field(100.0, gt=0, description="Generated windows per second")


class RunConfig(_StrictModel):
    """Everything a CLI run needs; each section defaults independently."""
    window: WindowConfig = Field(default_factory=WindowConfig)
    detection: DetectionConfig = Field(default_factory=DetectionConfig)
    bnb: BnbConfig = Field(default_factory=BnbConfig)
    match: MatchConfig = Field(default_factory=MatchConfig)
    opt: OptConfig = Field(default_factory=OptConfig)
    synth: SynthConfig = Field(default_factory=SynthConfig)
    trajectory: TrajectoryConfig = Field(default_factory=TrajectoryConfig)
    seed: int = 0


# ============================================================================
# BENCHMARK SWEEPS
# ============================================================================

class SweepSpec(_StrictModel):
    """One benchmark panel: a SynthConfig field varied over a list of values."""
    name: str = "noise"
    parameter: str = "noise_sigma"
    values: List[float] = Field(default_factory=lambda: list(SWEEP_REGISTRY["noise"]["values"]))
    fixed: dict = Field(default_factory=dict, description="SynthConfig overrides shared by all points")
    trials: int = Field(200, gt=0)
    estimators: List[EstimatorKind] = Field(default_factory=lambda: list(EstimatorKind))
    outlier_mode: str = Field("correspondences", description="'correspondences' or 'events'")
    rotation_perturbation: float = Field(math.radians(5.0), ge=0, description="rad")
    translation_perturbation: float = Field(0.05, ge=0, description="Fraction of |T|")
    seed: int = 0

    @field_validator("parameter")
    @classmethod
    def _known_parameter(cls, v):
        if v not in SynthConfig.model_fields or v == "image":
            raise ValueError(f"Cannot sweep over '{v}'")
        return v

    @field_validator("outlier_mode")
    @classmethod
    def _known_mode(cls, v):
        if v not in ("correspondences", "events"):
            raise ValueError("outlier_mode must be 'correspondences' or 'events'")
        return v

    @classmethod
    def from_registry(cls, name: str, **overrides) -> "SweepSpec":
        """Build a sweep from SWEEP_REGISTRY, with optional field overrides."""
        if name not in SWEEP_REGISTRY:
            raise ValueError(
                f"Unknown sweep '{name}'. Supported: {', '.join(SWEEP_REGISTRY)}"
            )
        entry = SWEEP_REGISTRY[name]
        fields = {
            "name": name,
            "parameter": entry["parameter"],
            "values": list(entry["values"]),
            "fixed": dict(entry["fixed"]),
        }
        fields.update(overrides)
        return cls(**fields)

    def synth_for(self, value: float, base: Optional[SynthConfig] = None) -> SynthConfig:
        """SynthConfig for one sweep point."""
        base = base or SynthConfig()
        updates = dict(self.fixed)
        updates[self.parameter] = int(value) if self.parameter in ("n_lines", "events_per_line") else value
        return SynthConfig(**{**base.model_dump(), **updates})
