"""HTTP service exposing the solver drivers.

Endpoints accept the same models the TOML config files parse into, so a
request body is a config file in JSON form.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .config import (ExportRequest, ExportResponse, SteadyRequest,
                     SteadyResponse, SweepRequest, SweepResponse,
                     TransientRequest, TransientResponse)
from .driver import export_system, run_steady, run_sweep, run_transient
from .errors import AssemblyError, ConvergenceError, GeometryError

app = FastAPI(title="hexflow", description="MHFE-FV Darcy flow solver service")


def _run(fn, req):
    try:
        return fn(req)
    except ConvergenceError as exc:
        raise HTTPException(status_code=422, detail=str(exc)) from exc
    except (AssemblyError, GeometryError, ValueError) as exc:
        raise HTTPException(status_code=400, detail=str(exc)) from exc


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/steady", response_model=SteadyResponse)
def steady(req: SteadyRequest):
    return _run(run_steady, req)


@app.post("/transient", response_model=TransientResponse)
def transient(req: TransientRequest):
    return _run(run_transient, req)


@app.post("/sweep", response_model=SweepResponse)
def sweep(req: SweepRequest):
    return _run(run_sweep, req)


@app.post("/export-system", response_model=ExportResponse)
def export(req: ExportRequest):
    return _run(export_system, req)
