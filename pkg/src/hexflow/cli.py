"""Command line client for the solver service.

Every subcommand reads a TOML config, posts the request to the service
and writes the response to files.  Without ``--server`` the service app
runs in-process over an ASGI transport, so no server is needed for local
use; with ``--server URL`` the same requests go to a remote instance.
"""

from __future__ import annotations

import json
import pathlib

import click
import httpx

from . import config as cfgm


def _client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    # no server given: run the service app in-process
    from fastapi.testclient import TestClient

    from .service import app
    return TestClient(app)


def _post(server, path, payload):
    with _client(server) as client:
        resp = client.post(path, json=payload)
        if resp.status_code != 200:
            raise click.ClickException(f"{path} failed ({resp.status_code}): "
                                       f"{resp.text}")
        return resp.json()


config_option = click.option("-c", "--config", "config_path", required=True,
                             type=click.Path(exists=True, dir_okay=False),
                             help="TOML config file")
server_option = click.option("--server", default=None,
                             help="service URL (default: run in-process)")


@click.group()
def main():
    """MHFE-FV Darcy flow solver with a block-LDU preconditioned Bi-CGStab."""


@main.command()
@config_option
@server_option
@click.option("--report-json", type=click.Path(dir_okay=False),
              help="write the solve report as JSON")
@click.option("--solution-csv", type=click.Path(dir_okay=False),
              help="write cell pressures as CSV")
@click.option("--history-csv", type=click.Path(dir_okay=False),
              help="write the residual history as CSV (iteration, relres)")
def steady(config_path, server, report_json, solution_csv, history_csv):
    """Solve the steady-state system once."""
    cfg = cfgm.load_toml(config_path)
    req = cfgm.steady_request(cfg)
    req.include_solution = solution_csv is not None
    data = _post(server, "/steady", req.model_dump())
    rep = data["report"]
    click.echo(f"steady: n_it={rep['n_it']} converged={rep['converged']} "
               f"relres={rep['final_relres']:.3e} density={rep['density']:.3f} "
               f"t_stage1={rep['t_stage1']:.3f}s t_total={rep['t_total']:.3f}s")
    if report_json:
        pathlib.Path(report_json).write_text(json.dumps(rep, indent=2) + "\n")
    if solution_csv:
        lines = ["cell,pressure"]
        lines += [f"{i},{v:.17g}" for i, v in enumerate(data["pressure"])]
        pathlib.Path(solution_csv).write_text("\n".join(lines) + "\n")
    if history_csv:
        lines = ["iteration,relres"]
        lines += [f"{k},{r:.6e}" for k, r in enumerate(rep["relres_history"])]
        pathlib.Path(history_csv).write_text("\n".join(lines) + "\n")


@main.command()
@config_option
@server_option
@click.option("--metrics-csv", type=click.Path(dir_okay=False),
              help="write per-step metrics as CSV")
@click.option("--summary-json", type=click.Path(dir_okay=False),
              help="write the run summary as JSON")
@click.option("--snapshots-vtk", type=click.Path(file_okay=False),
              help="write per-step pressure snapshots as VTK files")
def transient(config_path, server, metrics_csv, summary_json, snapshots_vtk):
    """Run a transient simulation with adaptive time stepping."""
    cfg = cfgm.load_toml(config_path)
    req = cfgm.transient_request(cfg)
    req.include_snapshots = snapshots_vtk is not None
    data = _post(server, "/transient", req.model_dump())
    s = data["summary"]
    click.echo(f"transient: steps={s['n_step']} iterations="
               f"{s['total_iterations']} mean_cfl_max={s['mean_cfl_max']:.3f} "
               f"density={s['density']:.3f} t_stage1={s['t_stage1']:.3f}s")
    if metrics_csv:
        lines = ["step,dt,n_it,relres,cfl_max,t_stage2,t_solve"]
        for row in data["steps"]:
            lines.append(f"{row['step']},{row['dt']:.10g},{row['n_it']},"
                         f"{row['relres']:.6e},{row['cfl_max']:.6e},"
                         f"{row['t_stage2']:.6f},{row['t_solve']:.6f}")
        pathlib.Path(metrics_csv).write_text("\n".join(lines) + "\n")
    if summary_json:
        pathlib.Path(summary_json).write_text(json.dumps(s, indent=2) + "\n")
    if snapshots_vtk:
        from .driver import build_problem
        from .vtkio import write_vtk
        outdir = pathlib.Path(snapshots_vtk)
        outdir.mkdir(parents=True, exist_ok=True)
        grid, _, _, _ = build_problem(req.problem)
        for row, snap in zip(data["steps"], data["snapshots"]):
            write_vtk(grid, {"pressure": snap},
                      outdir / f"step_{row['step']:04d}.vtk")
        click.echo(f"wrote {len(data['snapshots'])} snapshots to {outdir}")


@main.command()
@config_option
@server_option
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              help="write the sweep table as CSV")
def sweep(config_path, server, csv_path):
    """Sweep preconditioner settings on the steady problem."""
    cfg = cfgm.load_toml(config_path)
    req = cfgm.sweep_request(cfg)
    data = _post(server, "/sweep", req.model_dump())
    resp = cfgm.SweepResponse.model_validate(data)
    click.echo(resp.to_csv().rstrip("\n"))
    if csv_path:
        pathlib.Path(csv_path).write_text(resp.to_csv())


@main.command("export-system")
@config_option
@server_option
@click.option("--dt", type=float, default=None,
              help="time step size (omit for the steady form)")
@click.option("--out-dir", required=True, type=click.Path(file_okay=False),
              help="directory for the Matrix Market files")
def export_system_cmd(config_path, server, dt, out_dir):
    """Write the assembled blocks and right-hand side in Matrix Market form."""
    cfg = cfgm.load_toml(config_path)
    req = cfgm.export_request(cfg, dt=dt)
    data = _post(server, "/export-system", req.model_dump())
    outdir = pathlib.Path(out_dir)
    outdir.mkdir(parents=True, exist_ok=True)
    for name in data["names"]:
        (outdir / f"{name}.mtx").write_text(data["matrices"][name])
    click.echo(f"wrote {', '.join(data['names'])} to {outdir}")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    from .service import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
