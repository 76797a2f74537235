"""FastAPI application exposing runs, validation, and report rendering."""

from __future__ import annotations

import base64

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import RblError
from ..montecarlo import (
    plot_script_text,
    render_plot_images,
    report_from_csv,
    report_to_csv,
    run_monte_carlo,
)
from ..scenario import default_scenario
from ..validation import run_validation
from .models import (
    CheckModel,
    HealthResponse,
    ReportRequest,
    ReportResponse,
    RunRequest,
    RunResponse,
    ValidateRequest,
    ValidateResponse,
)


def create_app() -> FastAPI:
    app = FastAPI(
        title="rblkit",
        version=__version__,
        description=(
            "Rigid-body localization benchmark service: Monte-Carlo RMSE runs, "
            "invariant validation, and plot rendering."
        ),
    )

    def _scenario_or_default(model):
        if model is None:
            return default_scenario()
        try:
            return model.to_scenario()
        except RblError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/run", response_model=RunResponse)
    def run(request: RunRequest) -> RunResponse:
        scenario = _scenario_or_default(request.scenario)
        try:
            report = run_monte_carlo(request.to_config(scenario))
        except RblError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return RunResponse.from_report(
            report, csv=report_to_csv(report), plot_script=plot_script_text()
        )

    @app.post("/validate", response_model=ValidateResponse)
    def validate(request: ValidateRequest) -> ValidateResponse:
        scenario = _scenario_or_default(request.scenario)
        checks = run_validation(scenario)
        return ValidateResponse(
            checks=[CheckModel(name=c.name, passed=c.passed, detail=c.detail) for c in checks],
            all_passed=all(c.passed for c in checks),
        )

    @app.post("/report", response_model=ReportResponse)
    def report(request: ReportRequest) -> ReportResponse:
        try:
            parsed = report_from_csv(request.csv)
            images = render_plot_images(parsed)
        except RblError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc
        return ReportResponse(
            images={
                block: base64.b64encode(payload).decode("ascii")
                for block, payload in images.items()
            }
        )

    return app


app = create_app()
