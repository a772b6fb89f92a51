from datetime import datetime
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator


# -------------------------------------------------------------------------
# Run configuration
# -------------------------------------------------------------------------


class OmegaSpec(BaseModel):
    """Frekans matrisi Ω: explicit row-major matrix or a named preset"""
    model_config = ConfigDict(extra="forbid")

    matrix: Optional[List[List[float]]] = Field(None, description="Row-major M×n matrix")
    M: Optional[int] = Field(None, ge=1, description="Expected row count (torus dimension)")
    n: Optional[int] = Field(None, ge=1, description="Spatial dimension")
    preset: Optional[Literal["canonical", "identity", "twelvefold"]] = Field(
        None,
        description="canonical: [I_n; ω^T], identity: I_n, twelvefold: 4×2 quasipattern map"
    )
    omega: Optional[List[float]] = Field(None, description="Unit vector ω for the canonical preset")

    @model_validator(mode="after")
    def _check_shape(self) -> "OmegaSpec":
        if (self.matrix is None) == (self.preset is None):
            raise ValueError("exactly one of 'matrix' or 'preset' must be given")

        if self.matrix is not None:
            if not self.matrix or not self.matrix[0]:
                raise ValueError("matrix must be non-empty")
            cols = len(self.matrix[0])
            if any(len(row) != cols for row in self.matrix):
                raise ValueError("matrix rows must all have the same length")
            if self.n is not None and cols != self.n:
                raise ValueError(f"matrix has {cols} columns but n = {self.n}")
            if self.M is not None and len(self.matrix) != self.M:
                raise ValueError(f"matrix has {len(self.matrix)} rows but M = {self.M}")
            if len(self.matrix) < cols:
                raise ValueError(f"matrix has {len(self.matrix)} rows, fewer than its {cols} columns")
        elif self.preset == "canonical":
            if self.omega is None:
                raise ValueError("canonical preset needs 'omega'")
            if self.n is not None and len(self.omega) != self.n:
                raise ValueError(f"omega has {len(self.omega)} entries but n = {self.n}")
        elif self.preset == "identity":
            if self.n is None:
                raise ValueError("identity preset needs 'n'")
        return self


class ModeCoefficient(BaseModel):
    """One initial-data coefficient: mode index and one [re, im] pair per component"""
    model_config = ConfigDict(extra="forbid")

    mode: List[int]
    value: List[Tuple[float, float]]


class InitialDataSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    preset: Optional[Literal["shear", "taylor_green", "random_divfree", "quasipattern"]] = None
    modes: Optional[List[ModeCoefficient]] = None
    seed: int = 0
    amplitude: float = Field(0.1, description="Preset amplitude")
    sub_box: int = Field(2, ge=1, description="random_divfree draws modes with |m|_inf <= sub_box")
    target_norm: Optional[float] = Field(
        0.1, gt=0, description="random_divfree is rescaled to this ||.||_{0,s}"
    )
    leray_project: bool = Field(True, description="Project the initial field onto divergence-free fields")

    @model_validator(mode="after")
    def _check_source(self) -> "InitialDataSpec":
        if (self.preset is None) == (self.modes is None):
            raise ValueError("exactly one of 'preset' or 'modes' must be given")
        return self


class NormSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    l: int = Field(0, ge=0, description="Derivative weight")
    s: Optional[float] = Field(None, description="Torus Sobolev weight, defaults to M/2 + 1")


class SolverSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dt: float = Field(1e-3, gt=0)
    t_end: float = Field(1.0, ge=0)
    mode: Literal["eulerian", "lagrangian"] = "eulerian"
    grid: Optional[int] = Field(None, ge=2, description="Torus grid points per dimension")
    strict: bool = Field(True, description="Lagrangian: invert the flow map at every RK stage")
    energy_report_every: int = Field(1, ge=1, description="Diagnostics cadence in steps")


class OutputSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    directory: Optional[str] = None
    snapshot_every: int = Field(0, ge=0, description="Snapshot cadence in steps (0: final only)")
    trajectories: List[List[float]] = Field(default_factory=list, description="Particle seeds")
    trajectory_every: int = Field(1, ge=1)
    lagrangian_modes: List[List[int]] = Field(
        default_factory=list, description="Lagrangian runs: modes whose final û_m are read off by the exponential series"
    )


class TolerancesSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")

    div_tol: float = Field(1e-10, gt=0)
    newton_tol: float = Field(1e-12, gt=0)
    newton_max_iter: int = Field(50, ge=1)
    aliasing_threshold: float = Field(1e-6, gt=0)
    nonresonance_tol: float = Field(1e-9, gt=0)
    series_order: int = Field(12, ge=1, description="Truncation order of the e^z series in Lagrangian coefficient reports")
    series_tol: float = Field(1e-12, gt=0, description="Largest accepted tail bound of that series")


class RunConfig(BaseModel):
    """Tek bir çalıştırmanın tam konfigürasyonu"""
    model_config = ConfigDict(extra="forbid")

    omega: OmegaSpec
    K: int = Field(..., ge=1, description="Truncation radius |m|_inf <= K")
    norm: NormSpec = Field(default_factory=NormSpec)
    initial_data: InitialDataSpec
    solver: SolverSpec = Field(default_factory=SolverSpec)
    outputs: OutputSpec = Field(default_factory=OutputSpec)
    tolerances: TolerancesSpec = Field(default_factory=TolerancesSpec)
    allow_resonant: bool = Field(False, description="Run even if the non-resonance check fails")


# -------------------------------------------------------------------------
# Reports
# -------------------------------------------------------------------------


class NonresonanceReport(BaseModel):
    """Truncated (NC) check: necessary, not sufficient"""
    ok: bool
    tol: float
    modes_checked: int
    min_separation: float
    worst_pair: Optional[Tuple[List[int], List[int]]] = None


class ModeSetSummary(BaseModel):
    n: int
    M: int
    K: int
    size: int
    bullet_count: int
    max_lambda: float
    omega: List[List[float]]


class InitialDataReport(BaseModel):
    preset: Optional[str] = None
    projection_delta: float = Field(0.0, description="||u - P u||_0 removed by the Leray projection")
    support_size: int = 0


class RunManifest(BaseModel):
    config_text: str
    resolved_config: Dict[str, Any]
    versions: Dict[str, str]
    mode_set: ModeSetSummary
    nonresonance: NonresonanceReport
    initial_data: Optional[InitialDataReport] = None
    started_at: datetime = Field(default_factory=datetime.now)
    finished_at: Optional[datetime] = None
    status: str = "running"
    exit_code: Optional[int] = None
    message: Optional[str] = None
    artifacts: List[str] = Field(default_factory=list)
