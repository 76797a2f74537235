"""Command line client for the benchmark service.

Every subcommand talks to the HTTP API: against a remote server when
``--server`` is given, otherwise against an in-process instance of the
application (no separately started server required).  Failures print a
single machine-readable JSON line on stderr and exit nonzero.
"""

from __future__ import annotations

import asyncio
import base64
import json
import sys
from pathlib import Path

import click
import httpx


class CliFailure(Exception):
    def __init__(self, error: str, detail: str = ""):
        super().__init__(error)
        self.error = error
        self.detail = detail


def _fail(error: str, detail: str = "") -> None:
    sys.stderr.write(json.dumps({"error": error, "detail": detail}) + "\n")
    sys.exit(1)


async def _asgi_request(method: str, path: str, payload: dict | None) -> httpx.Response:
    from .service.app import app

    transport = httpx.ASGITransport(app=app)
    async with httpx.AsyncClient(
        transport=transport, base_url="http://rblkit.internal", timeout=None
    ) as client:
        return await client.request(method, path, json=payload)


def _request(server: str | None, method: str, path: str, payload: dict | None) -> dict:
    try:
        if server:
            with httpx.Client(base_url=server, timeout=None) as client:
                response = client.request(method, path, json=payload)
        else:
            response = asyncio.run(_asgi_request(method, path, payload))
    except httpx.HTTPError as exc:
        raise CliFailure("request failed", str(exc)) from exc
    if response.status_code != 200:
        raise CliFailure(
            f"server returned status {response.status_code}", response.text
        )
    return response.json()


def _load_scenario_payload(path: str | None) -> dict | None:
    if path is None:
        return None
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise CliFailure(f"cannot read scenario file {path}", str(exc)) from exc
    except json.JSONDecodeError as exc:
        raise CliFailure(f"scenario file {path} is not valid JSON", str(exc)) from exc


def _csv_floats(text: str, flag: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise CliFailure(f"invalid value for {flag}", text) from exc


_server_option = click.option(
    "--server",
    default=None,
    metavar="URL",
    help="Base URL of a running service; defaults to an in-process instance.",
)


@click.group()
def main() -> None:
    """Rigid-body localization benchmark client."""


@main.command()
@click.option("--scenario", type=click.Path(), default=None, help="Scenario JSON file.")
@click.option("--sigma", default=None, help="Comma-separated range-noise levels in meters.")
@click.option("--trials", default=100, show_default=True, help="Monte-Carlo trials per noise level.")
@click.option("--seed", default=0, show_default=True, help="Root random seed.")
@click.option(
    "--estimators",
    default="double-gabp,stage-a-gabp,ls-procrustes,genie",
    show_default=True,
    help="Comma-separated estimator names.",
)
@click.option(
    "--norm-source",
    type=click.Choice(["true", "estimated"]),
    default="estimated",
    show_default=True,
    help="Source of the squared-norm values fed into the parameter system.",
)
@click.option("--rho", default=0.5, show_default=True, help="Message damping factor in [0, 1).")
@click.option("--lambda-max", default=100, show_default=True, help="Iteration cap per stage.")
@click.option(
    "--noise-mode",
    type=click.Choice(["per-row", "scalar"]),
    default="per-row",
    show_default=True,
    help="Composite-noise variance handling.",
)
@click.option(
    "--gabp-mode",
    type=click.Choice(["stacked", "per-sensor"]),
    default="stacked",
    show_default=True,
    help="Run message passing on the stacked system or per sensor.",
)
@click.option("--out", type=click.Path(), default="out", show_default=True, help="Output directory.")
@_server_option
def run(scenario, sigma, trials, seed, estimators, norm_source, rho, lambda_max,
        noise_mode, gabp_mode, out, server) -> None:
    """Run a Monte-Carlo sweep and write rmse.csv plus a plot script."""
    try:
        payload = {
            "scenario": _load_scenario_payload(scenario),
            "sigma": _csv_floats(sigma, "--sigma") if sigma else None,
            "trials": trials,
            "seed": seed,
            "estimators": [e.strip() for e in estimators.split(",") if e.strip()],
            "norm_source": norm_source,
            "rho": rho,
            "lambda_max": lambda_max,
            "noise_mode": noise_mode,
            "gabp_mode": gabp_mode,
        }
        result = _request(server, "POST", "/run", payload)
        out_dir = Path(out)
        out_dir.mkdir(parents=True, exist_ok=True)
        csv_path = out_dir / "rmse.csv"
        script_path = out_dir / "plot_rmse.py"
        csv_path.write_bytes(result["csv"].encode("utf-8"))
        script_path.write_bytes(result["plot_script"].encode("utf-8"))
    except CliFailure as exc:
        _fail(exc.error, exc.detail)
    except OSError as exc:
        _fail("cannot write output files", str(exc))
        return
    for row in result["rows"]:
        click.echo(
            f"{row['estimator']:>14s} {row['block']:>11s} sigma={row['sigma']:<8g} "
            f"rmse={row['rmse']:.6g} trials={row['trials']} failures={row['failures']}"
        )
    click.echo(f"wrote {csv_path} and {script_path}")


@main.command()
@click.option("--scenario", type=click.Path(), default=None, help="Scenario JSON file.")
@_server_option
def validate(scenario, server) -> None:
    """Run the invariant suite on a scenario (default scenario if omitted)."""
    try:
        payload = {"scenario": _load_scenario_payload(scenario)}
        result = _request(server, "POST", "/validate", payload)
    except CliFailure as exc:
        _fail(exc.error, exc.detail)
        return
    for check in result["checks"]:
        status = "PASS" if check["passed"] else "FAIL"
        click.echo(f"{status} {check['name']}: {check['detail']}")
    if not result["all_passed"]:
        failed = [c["name"] for c in result["checks"] if not c["passed"]]
        _fail("validation failed", ", ".join(failed))


@main.command()
@click.option("--csv", "csv_path", type=click.Path(), required=True, help="RMSE CSV to render.")
@click.option("--out", type=click.Path(), default=None, help="Output directory (default: CSV directory).")
@_server_option
def report(csv_path, out, server) -> None:
    """Re-render the log-log RMSE figures from an existing CSV."""
    try:
        text = Path(csv_path).read_text()
    except OSError as exc:
        _fail(f"cannot read CSV {csv_path}", str(exc))
        return
    try:
        result = _request(server, "POST", "/report", {"csv": text})
        out_dir = Path(out) if out else Path(csv_path).resolve().parent
        out_dir.mkdir(parents=True, exist_ok=True)
        written = []
        for block, payload in sorted(result["images"].items()):
            target = out_dir / f"rmse_{block}.png"
            target.write_bytes(base64.b64decode(payload))
            written.append(str(target))
    except CliFailure as exc:
        _fail(exc.error, exc.detail)
        return
    except OSError as exc:
        _fail("cannot write figures", str(exc))
        return
    click.echo("wrote " + ", ".join(written))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port) -> None:
    """Start the HTTP service."""
    import uvicorn

    from .service.app import app

    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
