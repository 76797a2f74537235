"""Simulation scenarios: body/anchor geometry, priors, and range synthesis.

A scenario bundles the body conformation (sensor coordinates in the body
frame), the anchor positions (global frame), Gaussian priors on the
transformation parameters, the noise sweep, and the ground-truth generator
mode.  Scenarios round-trip through a JSON file whose schema is documented
in the README.

All randomness flows through injected ``numpy.random.Generator`` streams;
equal seeds give bit-identical scenarios.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ScenarioFormatError
from .geometry import (
    EulerAngles,
    TranslationVector,
    apply_rigid_transform,
    rotation_matrix_exact,
    rotation_matrix_small_angle,
)

GENERATOR_MODES = ("exact-rotation", "small-angle-rotation")

# +-1 vertex sign pattern shared by the body and anchor cubes.
_CUBE_SIGNS = np.array(
    [
        [-1, 1, 1, -1, -1, 1, -1, 1],
        [-1, -1, 1, 1, -1, -1, 1, 1],
        [-1, -1, -1, -1, 1, 1, 1, 1],
    ],
    dtype=float,
)


@dataclass(frozen=True)
class TransformPrior:
    """Zero-mean Gaussian priors on the transformation parameters.

    ``phi_theta_deg2`` is the variance of each rotation angle in squared
    degrees; ``phi_t_m2`` the variance of each translation component in
    squared meters.
    """

    phi_theta_deg2: float = 10.0
    phi_t_m2: float = 5.0

    def __post_init__(self) -> None:
        if self.phi_theta_deg2 <= 0 or self.phi_t_m2 <= 0:
            raise ScenarioFormatError("prior variances must be strictly positive")

    @property
    def phi_theta_rad2(self) -> float:
        """Angle prior variance converted to squared radians."""
        return self.phi_theta_deg2 * (np.pi / 180.0) ** 2


@dataclass(frozen=True)
class GroundTruth:
    """A sampled transformation and the sensor positions it produces."""

    angles: EulerAngles
    translation: TranslationVector
    positions: np.ndarray  # (3, N) transformed sensor coordinates
    generator_mode: str


@dataclass(frozen=True)
class RangeMeasurements:
    """Noisy anchor-to-sensor ranges, shape (M, N), in meters."""

    d_tilde: np.ndarray
    sigma_w: float


def unit_cube_conformation() -> np.ndarray:
    """Body sensors at the vertices of a unit cube centered at the origin."""
    return 0.5 * _CUBE_SIGNS.copy()


def cube_anchors(half_side: float) -> np.ndarray:
    """Anchors at the vertices of a cube with the given half side length."""
    if half_side <= 0:
        raise ScenarioFormatError(f"half_side must be positive, got {half_side}")
    return half_side * _CUBE_SIGNS.copy()


def validate_anchor_set(anchors: np.ndarray) -> None:
    """Reject anchor sets that cannot support 3D multilateration."""
    anchors = np.asarray(anchors)
    if anchors.ndim != 2 or anchors.shape[0] != 3:
        raise ScenarioFormatError(f"anchors must be 3xM, got shape {anchors.shape}")
    if anchors.shape[1] < 4:
        raise ScenarioFormatError("at least 4 anchors are required")
    if not np.all(np.isfinite(anchors)):
        raise ScenarioFormatError("anchor coordinates must be finite")
    centered = anchors - anchors.mean(axis=1, keepdims=True)
    if np.linalg.matrix_rank(centered) < 3:
        raise ScenarioFormatError("anchors are coplanar; geometry is degenerate")


def validate_conformation(conformation: np.ndarray) -> None:
    conformation = np.asarray(conformation)
    if conformation.ndim != 2 or conformation.shape[0] != 3 or conformation.shape[1] < 1:
        raise ScenarioFormatError(
            f"conformation must be 3xN with N >= 1, got shape {conformation.shape}"
        )
    if not np.all(np.isfinite(conformation)):
        raise ScenarioFormatError("conformation coordinates must be finite")


@dataclass(frozen=True)
class Scenario:
    """Complete simulation setup for one experiment family."""

    conformation: np.ndarray  # (3, N)
    anchors: np.ndarray  # (3, M)
    prior: TransformPrior = field(default_factory=TransformPrior)
    sigma_list: tuple[float, ...] = (0.001, 0.01, 0.05, 0.1, 0.5, 1.0)
    generator_mode: str = "exact-rotation"

    def __post_init__(self) -> None:
        validate_conformation(self.conformation)
        validate_anchor_set(self.anchors)
        if self.generator_mode not in GENERATOR_MODES:
            raise ScenarioFormatError(
                f"generator_mode must be one of {GENERATOR_MODES}, got {self.generator_mode!r}"
            )
        if any(s < 0 for s in self.sigma_list) or not self.sigma_list:
            raise ScenarioFormatError("sigma_w list must be non-empty and non-negative")

    @property
    def n_sensors(self) -> int:
        return self.conformation.shape[1]

    @property
    def m_anchors(self) -> int:
        return self.anchors.shape[1]


def default_scenario() -> Scenario:
    """Unit-cube body inside a 20 m anchor cube with the default priors."""
    return Scenario(conformation=unit_cube_conformation(), anchors=cube_anchors(10.0))


def sample_transform(
    prior: TransformPrior, rng: np.random.Generator
) -> tuple[EulerAngles, TranslationVector]:
    """Draw a transformation from the prior.

    Angles are drawn as N(0, phi_theta) in degrees and converted to
    radians for storage; translation components are N(0, phi_t) meters.
    """
    angles_deg = rng.normal(0.0, np.sqrt(prior.phi_theta_deg2), size=3)
    t = rng.normal(0.0, np.sqrt(prior.phi_t_m2), size=3)
    return (
        EulerAngles.from_degrees(*angles_deg),
        TranslationVector.from_array(t),
    )


def make_ground_truth(scenario: Scenario, rng: np.random.Generator) -> GroundTruth:
    """Sample a transformation and apply it under the scenario's generator mode."""
    angles, t = sample_transform(scenario.prior, rng)
    if scenario.generator_mode == "exact-rotation":
        Q = rotation_matrix_exact(angles)
    else:
        Q = rotation_matrix_small_angle(angles)
    positions = apply_rigid_transform(Q, t, scenario.conformation)
    return GroundTruth(
        angles=angles,
        translation=t,
        positions=positions,
        generator_mode=scenario.generator_mode,
    )


def simulate_ranges(
    positions: np.ndarray,
    anchors: np.ndarray,
    sigma_w: float,
    rng: np.random.Generator,
) -> RangeMeasurements:
    """Noisy ranges d[m, n] = ||a_m - s_n|| + w, w ~ N(0, sigma_w^2) i.i.d.

    Negative noisy ranges are possible at large sigma_w and are passed
    through unclamped; clamping would silently bias the squared-range
    statistics downstream.
    """
    if sigma_w < 0:
        raise ScenarioFormatError(f"sigma_w must be non-negative, got {sigma_w}")
    positions = np.asarray(positions, dtype=float)
    anchors = np.asarray(anchors, dtype=float)
    d = np.linalg.norm(anchors[:, :, None] - positions[:, None, :], axis=0)
    if sigma_w > 0:
        d = d + rng.normal(0.0, sigma_w, size=d.shape)
    return RangeMeasurements(d_tilde=d, sigma_w=float(sigma_w))


# --- scenario file I/O ------------------------------------------------------


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "n_sensors": scenario.n_sensors,
        "m_anchors": scenario.m_anchors,
        "conformation": [float(x) for x in scenario.conformation.ravel(order="C")],
        "anchors": [float(x) for x in scenario.anchors.ravel(order="C")],
        "phi_theta_deg2": scenario.prior.phi_theta_deg2,
        "phi_t_m2": scenario.prior.phi_t_m2,
        "sigma_w": list(scenario.sigma_list),
        "generator_mode": scenario.generator_mode,
    }


def scenario_from_dict(data: dict) -> Scenario:
    required = {
        "n_sensors",
        "m_anchors",
        "conformation",
        "anchors",
        "phi_theta_deg2",
        "phi_t_m2",
        "sigma_w",
        "generator_mode",
    }
    missing = required - set(data)
    if missing:
        raise ScenarioFormatError(f"scenario is missing fields: {sorted(missing)}")
    n = int(data["n_sensors"])
    m = int(data["m_anchors"])
    conformation = np.asarray(data["conformation"], dtype=float)
    anchors = np.asarray(data["anchors"], dtype=float)
    if conformation.size != 3 * n:
        raise ScenarioFormatError(
            f"conformation has {conformation.size} values, expected {3 * n} for n_sensors={n}"
        )
    if anchors.size != 3 * m:
        raise ScenarioFormatError(
            f"anchors has {anchors.size} values, expected {3 * m} for m_anchors={m}"
        )
    return Scenario(
        conformation=conformation.reshape(3, n),
        anchors=anchors.reshape(3, m),
        prior=TransformPrior(
            phi_theta_deg2=float(data["phi_theta_deg2"]),
            phi_t_m2=float(data["phi_t_m2"]),
        ),
        sigma_list=tuple(float(s) for s in data["sigma_w"]),
        generator_mode=str(data["generator_mode"]),
    )


def load_scenario(path: str | Path) -> Scenario:
    """Load a scenario from a JSON file; raises ScenarioFormatError on schema errors."""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except OSError as exc:
        raise ScenarioFormatError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(f"scenario file {path} is not valid JSON: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path: str | Path) -> None:
    Path(path).write_text(json.dumps(scenario_to_dict(scenario), indent=2) + "\n")
