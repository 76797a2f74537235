"""Pydantic request/response models for the HTTP service.

The scenario model mirrors the JSON scenario file schema one to one, so a
scenario file body can be posted as-is.
"""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field, field_validator

from ..montecarlo import ESTIMATORS, ExperimentConfig, RmseReport, RmseRow
from ..scenario import Scenario, scenario_from_dict, scenario_to_dict


class ScenarioModel(BaseModel):
    n_sensors: int = Field(ge=1)
    m_anchors: int = Field(ge=4)
    conformation: list[float]
    anchors: list[float]
    phi_theta_deg2: float = Field(gt=0)
    phi_t_m2: float = Field(gt=0)
    sigma_w: list[float]
    generator_mode: Literal["exact-rotation", "small-angle-rotation"] = "exact-rotation"

    def to_scenario(self) -> Scenario:
        return scenario_from_dict(self.model_dump())

    @classmethod
    def from_scenario(cls, scenario: Scenario) -> "ScenarioModel":
        return cls(**scenario_to_dict(scenario))


class RunRequest(BaseModel):
    """Experiment request; omitted fields fall back to the default scenario."""

    scenario: ScenarioModel | None = None
    sigma: list[float] | None = None
    trials: int = Field(default=100, ge=1)
    seed: int = 0
    estimators: list[str] = Field(default_factory=lambda: list(ESTIMATORS))
    norm_source: Literal["true", "estimated"] = "estimated"
    rho: float = Field(default=0.5, ge=0.0, lt=1.0)
    lambda_max: int = Field(default=100, ge=1)
    noise_mode: Literal["per-row", "scalar"] = "per-row"
    convergence_tol: float = Field(default=1e-8, gt=0.0)
    gabp_mode: Literal["stacked", "per-sensor"] = "stacked"

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, value: list[str]) -> list[str]:
        unknown = set(value) - set(ESTIMATORS)
        if unknown or not value:
            raise ValueError(f"estimators must be a non-empty subset of {ESTIMATORS}")
        return value

    def to_config(self, scenario: Scenario) -> ExperimentConfig:
        return ExperimentConfig(
            scenario=scenario,
            sigma=tuple(self.sigma) if self.sigma is not None else None,
            trials=self.trials,
            seed=self.seed,
            estimators=tuple(self.estimators),
            norm_source=self.norm_source,
            rho=self.rho,
            lambda_max=self.lambda_max,
            noise_mode=self.noise_mode,
            convergence_tol=self.convergence_tol,
            gabp_mode=self.gabp_mode,
        )


class RmseRowModel(BaseModel):
    estimator: str
    block: str
    sigma: float
    rmse: float
    trials: int
    failures: int
    mean_iters: float
    converged_frac: float

    @classmethod
    def from_row(cls, row: RmseRow) -> "RmseRowModel":
        return cls(
            estimator=row.estimator,
            block=row.block,
            sigma=row.sigma,
            rmse=row.rmse,
            trials=row.trials,
            failures=row.failures,
            mean_iters=row.mean_iters,
            converged_frac=row.converged_frac,
        )


class RunResponse(BaseModel):
    rows: list[RmseRowModel]
    csv: str
    plot_script: str

    @classmethod
    def from_report(cls, report: RmseReport, csv: str, plot_script: str) -> "RunResponse":
        return cls(
            rows=[RmseRowModel.from_row(r) for r in report.rows],
            csv=csv,
            plot_script=plot_script,
        )


class ValidateRequest(BaseModel):
    scenario: ScenarioModel | None = None


class CheckModel(BaseModel):
    name: str
    passed: bool
    detail: str


class ValidateResponse(BaseModel):
    checks: list[CheckModel]
    all_passed: bool


class ReportRequest(BaseModel):
    csv: str


class ReportResponse(BaseModel):
    images: dict[str, str]  # block name -> base64-encoded PNG


class HealthResponse(BaseModel):
    status: str
    version: str
