"""
Pydantic models: run configuration (one section per module), process settings
and the JSON reports written by the CLI.

Every configuration model forbids unknown keys so that a typo in a run
configuration file is a hard error.
"""

import math
from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from ..config_manager import (
    get_default_kernel_kind,
    get_default_rq_alpha,
    get_default_smooth_min_lambda,
)

BenchMethod = Literal["ours-rq", "ours-se", "ours-matern", "loggpis", "smoothmin", "fused"]
DEFAULT_BENCH_METHODS = ["ours-rq", "ours-se", "ours-matern", "loggpis", "smoothmin", "fused"]
CLOSE_RANGE = 0.05  # close/far split on true distance [m]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelConfig(StrictModel):
    kind: Literal["se", "rq", "matern"] = Field(default_factory=get_default_kernel_kind,
                                                description="Covariance kernel")
    lengthscale: float = Field(0.06, gt=0, description="Kernel lengthscale [m]")
    rq_alpha: float = Field(default_factory=get_default_rq_alpha, gt=0,
                            description="Rational-quadratic shape (RQ only)")


class FieldConfig(StrictModel):
    method: Literal["ours", "loggpis", "smoothmin", "fused"] = Field("ours", description="Distance field method")
    sigma_n: float = Field(1e-3, ge=0, description="Corrective noise term of the latent GP")
    smooth_min_lambda: float = Field(default_factory=get_default_smooth_min_lambda, lt=0,
                                     description="Smooth-minimum sharpness")
    fusion_center: Optional[float] = Field(None, gt=0, description="Blend centre [m], defaults to 2l")
    fusion_width: Optional[float] = Field(None, gt=0, description="Blend width [m], defaults to l/2")
    fusion_kernel: Optional[Literal["se", "rq", "matern"]] = Field(
        "matern", description="GP kernel of the fused field; None uses kernel.kind")


class BenchConfig(StrictModel):
    envs: int = Field(100, ge=1)
    queries: int = Field(40000, ge=4, description="Regular-grid queries per environment")
    methods: List[BenchMethod] = Field(default_factory=lambda: list(DEFAULT_BENCH_METHODS))
    workspace: float = Field(1.0, gt=0, description="Side of the square workspace [m]")
    gap: float = Field(0.04, gt=0, description="Typical gap between surface samples [m]")
    noise_sd: float = Field(0.005, ge=0, description="Positional noise of surface samples [m]")
    close_range: float = Field(CLOSE_RANGE, gt=0)
    oracle_spacing: float = Field(1e-4, gt=0, description="Ground-truth sample spacing [m]")
    scatter_samples: int = Field(2500, ge=0)
    n_terms: Tuple[int, int] = (3, 6)
    amplitude_range: Tuple[float, float] = (0.02, 0.15)
    frequency_range: Tuple[float, float] = (1.0, 12.0)
    sigma_n: Optional[float] = Field(None, ge=0, description="Fixed sigma_n; learned per kernel when unset")

    @field_validator("n_terms", "amplitude_range", "frequency_range")
    @classmethod
    def check_range(cls, v):
        if v[0] > v[1]:
            raise ValueError(f"range lower bound exceeds upper bound: {v}")
        return v


class CalibrationConfig(StrictModel):
    noise_sd: Optional[float] = Field(None, ge=0, description="Defaults to bench.noise_sd")
    point_gap: Optional[float] = Field(None, gt=0, description="Defaults to bench.gap")
    grid: int = Field(40, ge=4, description="Calibration grid points per side")
    band: float = Field(3.0, gt=0, description="Half-width of the calibration band, in lengthscales")
    spacing: float = Field(1.0, gt=0, description="Minimum spacing of the calibration points, in lengthscales")
    lower: float = Field(1e-6, gt=0)
    upper: float = Field(1.0, gt=0)
    scan_points: int = Field(13, ge=3, description="Log-spaced evaluations before the golden-section search")
    log_tolerance: float = Field(1e-3, gt=0, description="Search tolerance in log10(sigma_n)")
    full_covariance_limit: int = Field(2000, ge=1)


class PlateConfig(StrictModel):
    width: float = Field(0.6, gt=0)
    height: float = Field(0.45, gt=0)
    polygon: Optional[List[Tuple[float, float]]] = Field(
        None, description="Convex CCW boundary; overrides width/height")


class UgwConfig(StrictModel):
    sample_rate: float = Field(2e6, gt=0, description="[Hz]")
    duration: float = Field(1e-3, gt=0, description="[s]")
    center_freq: float = Field(1e5, gt=0, description="[Hz]")
    burst_cycles: int = Field(5, ge=1)
    group_velocity: float = Field(3000.0, gt=0, description="[m/s]")
    dispersion: Optional[List[float]] = Field(
        None, description="Polynomial coefficients of k(omega), lowest order first")
    snr_db: Optional[float] = Field(20.0, description="None for noiseless measurements")
    grid_rows: int = Field(9, ge=1)
    grid_cols: int = Field(12, ge=1)
    grid_margin: float = Field(0.05, ge=0)
    threshold: float = Field(0.4, ge=0, le=1)
    prominence: float = Field(0.1, ge=0, le=1)

    @model_validator(mode="after")
    def check_nyquist(self):
        if self.sample_rate < 4 * self.center_freq:
            raise ValueError(
                f"sample_rate {self.sample_rate} must be at least 4 x center_freq {self.center_freq}")
        return self


class FilterConfig(StrictModel):
    n_particles: int = Field(500, ge=1)
    beta: float = Field(5.0, gt=0)
    resample_interval: int = Field(5, ge=1)
    odom_noise_sd: float = Field(0.005, ge=0, description="[m]")
    estimate_quantile: float = Field(0.25, gt=0, le=1)
    distance_oracle: Literal["ours", "loggpis", "rect"] = "ours"
    trajectories: int = Field(100, ge=1)
    steps: int = Field(300, ge=1)
    burn_in: int = Field(50, ge=0)
    boundary_gap: float = Field(0.02, gt=0, description="Spacing of the boundary point cloud [m]")
    lengthscale: Optional[float] = Field(None, gt=0, description="Defaults to 1.5 x boundary_gap")
    sigma_n: float = Field(1e-3, ge=0)


class MapConfig(StrictModel):
    q: Optional[int] = Field(None, ge=2, description="Virtual observations; defaults to ceil(1.5 perimeter / l)")
    reg_alpha: float = Field(1e-3, ge=0)
    lengthscale: float = Field(0.13, gt=0)
    sigma_n: float = Field(1e-3, ge=0)
    init_margin: float = Field(0.05, ge=0)
    max_iterations: int = Field(200, ge=1)
    jacobian_step: float = Field(1e-5, gt=0)
    ftol: float = Field(1e-8, gt=0)
    xtol: float = Field(1e-9, gt=0)
    distance_method: Literal["ours", "loggpis"] = "ours"
    mode: Literal["two-stage", "envelope-only"] = "two-stage"
    field_grid: int = Field(100, ge=2)


class RunConfig(StrictModel):
    seed: int = Field(0, ge=0)
    kernel: KernelConfig = Field(default_factory=KernelConfig)
    field: FieldConfig = Field(default_factory=FieldConfig)
    bench: BenchConfig = Field(default_factory=BenchConfig)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    plate: PlateConfig = Field(default_factory=PlateConfig)
    ugw: UgwConfig = Field(default_factory=UgwConfig)
    filter: FilterConfig = Field(default_factory=FilterConfig)
    mapping: MapConfig = Field(default_factory=MapConfig)

    @model_validator(mode="after")
    def check_measurement_window(self):
        if self.plate.polygon:
            xs = [p[0] for p in self.plate.polygon]
            ys = [p[1] for p in self.plate.polygon]
            diagonal = math.hypot(max(xs) - min(xs), max(ys) - min(ys))
        else:
            diagonal = math.hypot(self.plate.width, self.plate.height)
        if self.ugw.duration < 2 * diagonal / self.ugw.group_velocity:
            raise ValueError(
                f"ugw.duration {self.ugw.duration} s does not cover the round trip over the "
                f"plate diagonal ({2 * diagonal / self.ugw.group_velocity:.3e} s)")
        return self


class RuntimeSettings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="REVERT_FIELD_", extra="ignore")

    threads: Optional[int] = Field(None, ge=1, description="Caps the worker count")
    log_file: str = "logs/revert_field.log"
    log_level: str = "INFO"


# Reports

class BenchMethodSummary(BaseModel):
    method: str
    close_rmse: Optional[float] = Field(None, description="Mean close-range RMSE [m]")
    far_rmse: Optional[float] = Field(None, description="Mean far-range RMSE [m]")
    rmse: Optional[float] = Field(None, description="Mean RMSE over all valid queries [m]")
    coverage: float = Field(..., description="Fraction of queries with a valid distance")


class BenchEnvironmentRow(BaseModel):
    env: int
    seed: int
    points: int
    method: str
    close_rmse: Optional[float] = None
    far_rmse: Optional[float] = None
    rmse: Optional[float] = None
    coverage: float


class ScatterSample(BaseModel):
    env: int
    method: str
    true_distance: float
    error: float


class BenchReport(BaseModel):
    methods: List[BenchMethodSummary]
    environments: List[BenchEnvironmentRow]
    sigma_n: Dict[str, float]
    fused_wins: Optional[int] = Field(None, description="Environments where fused RMSE <= min(GP, smooth-min)")
    fused_baseline: Optional[str] = Field(None, description="GP-only method the fused field is compared with")
    close_range: float
    envs: int
    queries: int
    scatter: List[ScatterSample] = Field(default_factory=list, exclude=True,
                                         description="Error-vs-distance samples, written as CSV")

    def summary(self, method: str) -> BenchMethodSummary:
        for entry in self.methods:
            if entry.method == method:
                return entry
        raise KeyError(method)


class MapStageReport(BaseModel):
    stage: str
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    reason: str
    fallback_residuals: int = 0


class MapReport(BaseModel):
    virtual_points: List[Tuple[float, float]]
    reg_alpha: float
    lengthscale: float
    sigma_n: float
    kernel: str
    distance_method: str
    mode: str
    stages: List[MapStageReport]
    interior_rmse: Optional[float] = None


class InputRecord(BaseModel):
    role: str
    path: str
    sha256: str


class RunManifest(BaseModel):
    command: str
    version: str
    master_seed: int
    config: RunConfig
    outputs: List[str] = Field(default_factory=list)
    inputs: List[InputRecord] = Field(default_factory=list, description="Files read by the run and their digests")
    walks: Optional[List[List[int]]] = Field(None, description="Given echolocation walks, as grid cell indices")
