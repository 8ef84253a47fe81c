"""Request/response models shared by the HTTP service and the CLI.

The same pydantic models validate JSON request bodies and TOML config
files, so a config file is simply the on-disk form of a request.
"""

from __future__ import annotations

import sys
from typing import Literal, Optional

from pydantic import BaseModel, Field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class GridSpec(BaseModel):
    nx: int = Field(ge=1)
    ny: int = Field(ge=1)
    nz: int = Field(ge=1)
    dx: float = Field(gt=0)
    dy: float = Field(gt=0)
    dz: float = Field(gt=0)
    dome_amplitude: float = Field(default=0.0, ge=0)
    dome_radius: Optional[float] = Field(default=None, gt=0)


class FieldSpec(BaseModel):
    kind: Literal["homogeneous", "synthetic", "raster"] = "homogeneous"
    kx: float = Field(default=1.73e-5, gt=0)
    ky: Optional[float] = Field(default=None, gt=0)
    kz: Optional[float] = Field(default=None, gt=0)
    seed: int = 0
    k_min: float = Field(default=3.0e-7, gt=0)
    k_max: float = Field(default=2.0, gt=0)
    mode: Literal["loguniform", "layered"] = "loguniform"
    path: Optional[str] = None
    align_with_surface: bool = False


class PropsSpec(BaseModel):
    gamma: float = Field(default=0.101, gt=0)
    alpha: float = Field(default=4.67e-5, ge=0)
    beta: float = Field(default=4.84e-5, ge=0)
    porosity: float = Field(default=0.2, gt=0, le=1)


class WellSpec(BaseModel):
    i: int = Field(ge=0)
    j: int = Field(ge=0)
    pressure: float


class BoundaryModel(BaseModel):
    pressure_planes: dict[str, float] = {}
    flux_planes: dict[str, float] = {}
    wells: list[WellSpec] = []


class ProblemSpec(BaseModel):
    grid: GridSpec
    field: FieldSpec = FieldSpec()
    props: PropsSpec = PropsSpec()
    bc: BoundaryModel = BoundaryModel()
    p_init: float = 140.0


class PrecondSpec(BaseModel):
    pattern: Literal["base", "static", "dynamic"] = "dynamic"
    prototype: Literal["A", "B", "C", "D", "E"] = "A"
    n_add: int = Field(default=1, ge=1)
    n_ent: int = Field(default=4, ge=0)
    it_max: Optional[int] = Field(default=None, ge=1)
    tau_filt: float = Field(default=0.0, ge=0)
    filtration: Literal["none", "pre", "post-schur", "post-product"] = "none"
    # partial fill-in by default: a zero tolerance means complete inner
    # factorizations, which only pays off on small grids
    face_drop_tol: float = Field(default=1e-3, ge=0)
    schur_drop_tol: float = Field(default=1e-3, ge=0)
    no_fill: bool = False
    workers: int = Field(default=1, ge=1)


class SolverSpec(BaseModel):
    tol: float = Field(default=1e-8, gt=0)
    max_it: int = Field(default=2000, ge=1)


class TimestepSpec(BaseModel):
    dt0: float = Field(default=0.1, gt=0)
    dt_max: float = Field(default=5.0, gt=0)
    dt_mult: float = Field(default=1.1, ge=1)
    dp_target: float = Field(default=5.0, gt=0)
    n_step: int = Field(default=10, ge=1)


class SteadyRequest(BaseModel):
    problem: ProblemSpec
    precond: PrecondSpec = PrecondSpec()
    solver: SolverSpec = SolverSpec()
    include_solution: bool = False


class TransientRequest(BaseModel):
    problem: ProblemSpec
    precond: PrecondSpec = PrecondSpec()
    solver: SolverSpec = SolverSpec()
    timestep: TimestepSpec = TimestepSpec()
    include_snapshots: bool = False


class SweepRequest(BaseModel):
    problem: ProblemSpec
    precond: PrecondSpec = PrecondSpec()
    solver: SolverSpec = SolverSpec()
    mode: Literal["dynamic", "filtration"] = "dynamic"
    n_add_values: list[int] = [1, 2, 4]
    n_ent_values: list[int] = [0, 2, 4, 8]
    tau_filt_values: list[float] = [1e-4, 1e-3, 1e-2]


class ExportRequest(BaseModel):
    problem: ProblemSpec
    dt: Optional[float] = Field(default=None, gt=0)  # None: steady form


class ReportModel(BaseModel):
    n_it: int
    converged: bool
    breakdown: bool = False
    final_relres: float
    density: Optional[float] = None
    t_stage1: float = 0.0
    t_stage2: float = 0.0
    t_solve: float = 0.0
    t_total: float = 0.0
    relres_history: list[float] = []


class SteadyResponse(BaseModel):
    report: ReportModel
    n_unknowns: int
    pressure: Optional[list[float]] = None
    face_pressure: Optional[list[float]] = None


class StepModel(BaseModel):
    step: int
    dt: float
    n_it: int
    relres: float
    cfl_max: float
    t_stage2: float
    t_solve: float


class TransientSummary(BaseModel):
    n_step: int
    total_iterations: int
    t_stage1: float
    total_t_stage2: float
    total_t_solve: float
    mean_cfl_max: float
    density: float
    final_time: float


class TransientResponse(BaseModel):
    steps: list[StepModel]
    summary: TransientSummary
    snapshots: Optional[list[list[float]]] = None


class SweepRow(BaseModel):
    n_add: Optional[int] = None
    n_ent: Optional[int] = None
    tau_filt: Optional[float] = None
    n_it: int
    converged: bool
    density: float
    t_stage1: float
    t_total: float


class SweepResponse(BaseModel):
    mode: str
    rows: list[SweepRow]

    def to_csv(self) -> str:
        cols = ["n_add", "n_ent", "tau_filt", "n_it", "converged",
                "density", "t_stage1", "t_total"]
        lines = [",".join(cols)]
        for row in self.rows:
            vals = [getattr(row, c) for c in cols]
            lines.append(",".join("" if v is None else str(v) for v in vals))
        return "\n".join(lines) + "\n"


class ExportResponse(BaseModel):
    names: list[str]
    matrices: dict[str, str]   # Matrix Market text per block / rhs


def load_toml(path) -> dict:
    """Read a TOML config file into a plain dict."""
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def steady_request(cfg: dict) -> SteadyRequest:
    return SteadyRequest.model_validate(
        {k: cfg[k] for k in ("problem", "precond", "solver") if k in cfg})


def transient_request(cfg: dict) -> TransientRequest:
    keys = ("problem", "precond", "solver", "timestep")
    return TransientRequest.model_validate(
        {k: cfg[k] for k in keys if k in cfg})


def sweep_request(cfg: dict) -> SweepRequest:
    body = {k: cfg[k] for k in ("problem", "precond", "solver") if k in cfg}
    body.update(cfg.get("sweep", {}))
    return SweepRequest.model_validate(body)


def export_request(cfg: dict, dt=None) -> ExportRequest:
    return ExportRequest(problem=ProblemSpec.model_validate(cfg["problem"]), dt=dt)
