"""Steady, transient and sweep drivers plus timestep/CFL bookkeeping.

A transient run builds stage 1 of the preconditioner once, then per step
updates the storage term, rebuilds stage 2, solves with Bi-CGStab,
recovers fluxes for the CFL statistics and adapts the step size to the
observed pressure change.
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass

import numpy as np

from . import config as cfgm
from .assembly import (assemble, element_outflows, recover_face_fluxes,
                       update_accumulation)
from .errors import ConvergenceError
from .grid import (BoundarySpec, ConductivityField, FluidRockProps,
                   build_structured, deform_dome, load_raster_field,
                   rotate_tensor_field, synth_heterogeneous_field)
from .krylov import bicgstab
from .precond import (BlockLDUPreconditioner, DynamicConfig, build_stage1,
                      compute_density, patterns_for)


@dataclass
class TimestepController:
    """Pressure-change driven step-size control.

    The next step is dt * min(dt_mult, dp_target / dp_max) capped at
    dt_max; a quiescent step (dp_max = 0) grows by the full multiplier.
    """

    dt: float
    dt_max: float
    dt_mult: float
    dp_target: float
    dp_max: float = 0.0

    def advance(self, dp_max: float) -> float:
        self.dp_max = float(dp_max)
        self.dt = next_dt(self)
        return self.dt


def next_dt(ctrl: TimestepController) -> float:
    ratio = ctrl.dt_mult if ctrl.dp_max <= 0 else min(
        ctrl.dt_mult, ctrl.dp_target / ctrl.dp_max)
    return min(ctrl.dt * ratio, ctrl.dt_max)


@dataclass
class CflStats:
    """Per-element throughput numbers for one time step."""

    chi: np.ndarray

    @property
    def chi_max(self) -> float:
        return float(self.chi.max()) if self.chi.size else 0.0


def cfl(grid, q_faces: np.ndarray, porosity: np.ndarray, dt: float) -> CflStats:
    """chi = (element outflow rate) * dt / pore volume, per element."""
    out = element_outflows(grid, q_faces)
    rate = np.where(out > 0, out, 0.0).sum(axis=1)
    return CflStats(rate * dt / (grid.elem_volume * porosity))


def build_problem(spec: cfgm.ProblemSpec):
    """Instantiate grid, conductivity field, properties and boundaries."""
    g = spec.grid
    grid = build_structured(g.nx, g.ny, g.nz, g.dx, g.dy, g.dz)
    if g.dome_amplitude > 0:
        radius = g.dome_radius
        if radius is None:
            radius = 0.5 * min(g.nx * g.dx, g.ny * g.dy)
        grid = deform_dome(grid, g.dome_amplitude, radius)

    f = spec.field
    if f.kind == "homogeneous":
        field = ConductivityField.homogeneous(grid.n_elems, f.kx, f.ky, f.kz)
    elif f.kind == "synthetic":
        field = synth_heterogeneous_field(grid, f.seed, (f.k_min, f.k_max),
                                          mode=f.mode)
    else:
        if f.path is None:
            raise ValueError("raster field needs a path")
        field = load_raster_field(f.path, grid)
    if f.align_with_surface:
        field = rotate_tensor_field(field, grid)

    props = FluidRockProps.uniform(grid.n_elems, gamma=spec.props.gamma,
                                   alpha=spec.props.alpha, beta=spec.props.beta,
                                   porosity=spec.props.porosity)
    bc = BoundarySpec(well_columns=[(w.i, w.j, w.pressure) for w in spec.bc.wells])
    for tag, p in spec.bc.pressure_planes.items():
        bc.add_plane(grid, tag, pressure=p)
    for tag, v in spec.bc.flux_planes.items():
        bc.add_plane(grid, tag, flux=v)
    return grid, field, props, bc


def make_preconditioner(system, spec: cfgm.PrecondSpec):
    """Build both stages with separate wall-clock timings."""
    t0 = time.perf_counter()
    if spec.pattern == "dynamic":
        dyn = DynamicConfig(n_add=spec.n_add, n_ent=spec.n_ent,
                            it_max=spec.it_max, tau_filt=spec.tau_filt,
                            filtration=spec.filtration)
        stage1 = build_stage1(system, dynamic=dyn,
                              face_drop_tol=spec.face_drop_tol,
                              no_fill=spec.no_fill, n_workers=spec.workers)
    else:
        pats = patterns_for(system, spec.pattern, spec.prototype)
        stage1 = build_stage1(system, patterns=pats, tau_filt=spec.tau_filt,
                              filtration=spec.filtration,
                              face_drop_tol=spec.face_drop_tol,
                              no_fill=spec.no_fill, n_workers=spec.workers)
    t_stage1 = time.perf_counter() - t0
    pre = BlockLDUPreconditioner(system, stage1, settings=dict(
        tau_filt=spec.tau_filt, filtration=spec.filtration,
        schur_drop_tol=spec.schur_drop_tol, no_fill=spec.no_fill))
    t0 = time.perf_counter()
    pre.refresh(system)
    t_stage2 = time.perf_counter() - t0
    return pre, t_stage1, t_stage2


def _solve(system, pre, solver: cfgm.SolverSpec):
    A = system.full_matrix()
    b = system.rhs()
    t0 = time.perf_counter()
    x, report = bicgstab(lambda v: A @ v, pre.apply, b,
                         tol=solver.tol, max_it=solver.max_it)
    report.t_solve = time.perf_counter() - t0
    report.density = compute_density(pre, system)
    return x, report


def _report_model(report) -> cfgm.ReportModel:
    return cfgm.ReportModel(
        n_it=report.n_it, converged=report.converged, breakdown=report.breakdown,
        final_relres=float(report.final_relres), density=report.density,
        t_stage1=report.t_stage1, t_stage2=report.t_stage2,
        t_solve=report.t_solve, t_total=report.t_total,
        relres_history=[float(r) for r in report.relres_history])


def run_steady(req: cfgm.SteadyRequest) -> cfgm.SteadyResponse:
    grid, field, props, bc = build_problem(req.problem)
    system = assemble(grid, field, props, bc, dt=math.inf)
    pre, t1, t2 = make_preconditioner(system, req.precond)
    x, report = _solve(system, pre, req.solver)
    report.t_stage1, report.t_stage2 = t1, t2
    pi, p = system.split(x)
    resp = cfgm.SteadyResponse(report=_report_model(report),
                               n_unknowns=system.n_unknowns)
    if req.include_solution:
        resp.pressure = p.tolist()
        resp.face_pressure = system.face_pressures(pi).tolist()
    return resp


def run_transient(req: cfgm.TransientRequest) -> cfgm.TransientResponse:
    grid, field, props, bc = build_problem(req.problem)
    ts = req.timestep
    p = np.full(grid.n_elems, req.problem.p_init)
    base = assemble(grid, field, props, bc, dt=ts.dt0, p_prev=p)

    pre, t_stage1, _ = make_preconditioner(base, req.precond)
    ctrl = TimestepController(dt=ts.dt0, dt_max=ts.dt_max,
                              dt_mult=ts.dt_mult, dp_target=ts.dp_target)
    steps = []
    snapshots = [] if req.include_snapshots else None
    chi_maxima = []
    t_sim = 0.0
    for step in range(1, ts.n_step + 1):
        system = update_accumulation(base, ctrl.dt, p)
        t0 = time.perf_counter()
        pre.refresh(system)
        t_stage2 = time.perf_counter() - t0
        x, report = _solve(system, pre, req.solver)
        if not report.converged:
            raise ConvergenceError(
                f"time step {step} (dt={ctrl.dt:g}) did not converge within "
                f"{req.solver.max_it} iterations", report)
        pi, p_new = system.split(x)
        q = recover_face_fluxes(system, pi, p_new)
        stats = cfl(grid, q, props.porosity, ctrl.dt)
        chi_maxima.append(stats.chi_max)
        t_sim += ctrl.dt
        steps.append(cfgm.StepModel(
            step=step, dt=ctrl.dt, n_it=report.n_it,
            relres=float(report.relres_history[-1]), cfl_max=stats.chi_max,
            t_stage2=t_stage2, t_solve=report.t_solve))
        if snapshots is not None:
            snapshots.append(p_new.tolist())
        dp_max = float(np.abs(p_new - p).max())
        ctrl.advance(dp_max)
        p = p_new

    summary = cfgm.TransientSummary(
        n_step=ts.n_step,
        total_iterations=sum(s.n_it for s in steps),
        t_stage1=t_stage1,
        total_t_stage2=sum(s.t_stage2 for s in steps),
        total_t_solve=sum(s.t_solve for s in steps),
        mean_cfl_max=float(np.mean(chi_maxima)),
        density=compute_density(pre, base),
        final_time=t_sim)
    return cfgm.TransientResponse(steps=steps, summary=summary,
                                  snapshots=snapshots)


def run_sweep(req: cfgm.SweepRequest) -> cfgm.SweepResponse:
    grid, field, props, bc = build_problem(req.problem)
    system = assemble(grid, field, props, bc, dt=math.inf)
    rows = []

    def one(spec: cfgm.PrecondSpec, **tags):
        pre, t1, t2 = make_preconditioner(system, spec)
        _, report = _solve(system, pre, req.solver)
        rows.append(cfgm.SweepRow(
            n_it=report.n_it, converged=report.converged,
            density=report.density, t_stage1=t1,
            t_total=t2 + report.t_solve, **tags))

    if req.mode == "dynamic":
        for n_add in req.n_add_values:
            for n_ent in req.n_ent_values:
                spec = req.precond.model_copy(update=dict(
                    pattern="dynamic", n_add=n_add, n_ent=n_ent))
                one(spec, n_add=n_add, n_ent=n_ent)
    else:
        filtration = req.precond.filtration
        if filtration == "none":
            filtration = "post-product"
        for tau in req.tau_filt_values:
            spec = req.precond.model_copy(update=dict(
                tau_filt=tau, filtration=filtration))
            one(spec, tau_filt=tau)
    return cfgm.SweepResponse(mode=req.mode, rows=rows)


def export_system(req: cfgm.ExportRequest) -> cfgm.ExportResponse:
    grid, field, props, bc = build_problem(req.problem)
    dt = math.inf if req.dt is None else req.dt
    p0 = np.full(grid.n_elems, req.problem.p_init)
    system = assemble(grid, field, props, bc, dt=dt,
                      p_prev=None if req.dt is None else p0)
    parts = {"A_ff": (system.A_ff, True), "A_fc": (system.A_fc, False),
             "A_cf": (system.A_cf, False), "A_cc": (system.A_cc, False),
             "rhs_f": (system.rhs_f, False), "rhs_c": (system.rhs_c, False)}
    out = {}
    for name, (obj, symmetric) in parts.items():
        buf = io.BytesIO()
        _mm_write_buf(buf, obj, symmetric)
        out[name] = buf.getvalue().decode()
    return cfgm.ExportResponse(names=list(out), matrices=out)


def _mm_write_buf(buf, obj, symmetric):
    import scipy.io

    if isinstance(obj, np.ndarray):
        scipy.io.mmwrite(buf, obj.reshape(-1, 1), precision=17)
    else:
        scipy.io.mmwrite(buf, obj, precision=17,
                         symmetry="symmetric" if symmetric else "general")
