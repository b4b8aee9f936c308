"""Thin command-line client for the stress-analytics service.

Every subcommand builds a request and sends it to the HTTP API. With
--server it talks to a running instance; otherwise the service app is
mounted in-process, so batch runs need no separate server.

Exit codes: 0 success, 2 validation error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path

import click
import httpx

SERVER_ENV = "STRESSNET_SERVER"
OUTPUT_DIR_ENV = "STRESSNET_OUTPUT_DIR"

_KIND_EXIT = {"validation": 2, "data": 3, "numerical": 4}


def _post(server: str | None, path: str, body: dict) -> dict:
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            resp = client.post(path, json=body)
    else:
        from .service.app import create_app

        async def _call():
            transport = httpx.ASGITransport(app=create_app())
            async with httpx.AsyncClient(
                transport=transport, base_url="http://stressnet.local", timeout=None
            ) as client:
                return await client.post(path, json=body)

        resp = asyncio.run(_call())
    if resp.status_code >= 400:
        try:
            payload = resp.json()
        except ValueError:
            payload = {"error": resp.text}
        message = payload.get("error") or payload.get("detail") or resp.text
        exit_code = payload.get("exit_code", _KIND_EXIT.get(payload.get("kind", ""), 2))
        click.echo(f"error: {message}", err=True)
        sys.exit(int(exit_code))
    return resp.json()


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        click.echo(f"error: config file not found: {path}", err=True)
        sys.exit(2)
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        click.echo(f"error: config file is not valid JSON: {exc}", err=True)
        sys.exit(2)


def _common_options(fn):
    fn = click.option("--server", envvar=SERVER_ENV, default=None,
                      help="Service URL; omitted = run in-process.")(fn)
    fn = click.option("--config", "config_path", default=None,
                      help="JSON config file; flags override its fields.")(fn)
    fn = click.option("--prices", "prices_path", default=None, help="Price CSV path.")(fn)
    fn = click.option("--sectors", "sectors_path", default=None, help="Sector CSV path.")(fn)
    fn = click.option("--synth", "synth_path", default=None,
                      help="Synthetic-data config JSON path.")(fn)
    fn = click.option("--output-dir", envvar=OUTPUT_DIR_ENV, default=None)(fn)
    fn = click.option("--seed", type=int, default=None, help="Master seed.")(fn)
    fn = click.option("--gain", type=click.Choice(["raw", "absolute", "squared"]),
                      default=None)(fn)
    fn = click.option("--centrality", "centrality_kind",
                      type=click.Choice(["degree", "eigenvector", "betweenness"]),
                      default=None)(fn)
    fn = click.option("--ridge", type=float, default=None)(fn)
    fn = click.option("--price-format", type=click.Choice(["wide", "long"]), default=None)(fn)
    fn = click.option("--group-n", type=int, default=None, help="Group-search size.")(fn)
    fn = click.option("--group-restarts", type=int, default=None)(fn)
    fn = click.option("--profile-trials", type=int, default=None)(fn)
    fn = click.option("--icc-states", type=int, default=None, help="Number of market states.")(fn)
    fn = click.option("--icc-gamma", type=float, default=None, help="State-switch penalty.")(fn)
    fn = click.option("--icc-restarts", type=int, default=None)(fn)
    fn = click.option("--per-state/--no-per-state", "per_state", default=None)(fn)
    fn = click.option("--sectors-required", is_flag=True, default=False)(fn)
    return fn


def _build_body(config_path, synth_path, **flags) -> dict:
    body = _load_config_file(config_path)
    if synth_path:
        synth_doc = _load_config_file(synth_path)
        if not synth_doc:
            click.echo("error: empty synth config", err=True)
            sys.exit(2)
        body["synth"] = synth_doc
    for key, value in flags.items():
        if value is None:
            continue
        if key == "sectors_required" and value is False:
            continue  # plain is_flag: absent, not an explicit override
        body[key] = value
    return body


def _report_run(result: dict):
    click.echo(f"status: {result['status']}")
    click.echo(f"output: {result['output_dir']}")
    click.echo(f"config hash: {result['config_hash']}  seed: {result['seed']}")
    for rel in sorted(result["artifacts"]):
        click.echo(f"  {rel}  {result['artifacts'][rel][:12]}")


def _stage_command(name: str, help_text: str):
    @_common_options
    def cmd(server, config_path, synth_path, **flags):
        body = _build_body(config_path, synth_path, **flags)
        result = _post(server, f"/stages/{name}", body)
        _report_run(result)

    cmd.__name__ = name.replace("-", "_")
    return main.command(name=name, help=help_text)(cmd)


@click.group()
def main():
    """Market stress analytics: filtered networks, shocks and market states."""


@main.command(help="Run the full batch pipeline.")
@_common_options
@click.option("--stages", default=None,
              help="Comma-separated stage subset (default: all).")
def pipeline(server, config_path, synth_path, stages, **flags):
    body = _build_body(config_path, synth_path, **flags)
    if stages:
        body["stages"] = [s.strip() for s in stages.split(",") if s.strip()]
    result = _post(server, "/pipeline", body)
    _report_run(result)


_stage_command("ingest", "Load, validate and summarize the input data.")
_stage_command("network", "Build the filtered network and fit the sparse model.")
_stage_command("states", "Segment the sample into market states.")
_stage_command("stress", "Emit node/group/sector impact-response profiles.")
_stage_command("regress", "Run the sector impact/response regressions.")


@main.command(name="group-search",
              help="Find the most impactful stock group (per state too unless "
                   "--no-per-state).")
@_common_options
@click.option("-n", "--n", "group_n_flag", type=int, default=None,
              help="Group size (same as --group-n).")
def group_search(server, config_path, synth_path, group_n_flag, **flags):
    if group_n_flag is not None:
        flags["group_n"] = group_n_flag
    body = _build_body(config_path, synth_path, **flags)
    stages = ["group-search"]
    if body.get("per_state", True):
        stages.insert(0, "states")
    body["stages"] = stages
    result = _post(server, "/pipeline", body)
    _report_run(result)


@main.command(help="Start the HTTP service.")
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8000)
def serve(host, port):
    import uvicorn

    from .service.app import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
