"""Per-sensor absolute position pre-estimation from squared ranges.

A generic two-stage scheme: weighted least squares on the position-explicit
system, followed by a correction in the squared domain that enforces the
quadratic relation between the coordinate estimate and the squared-norm
component.  It supplies the (s_hat, ||s_hat||^2) pairs consumed by the
parameter estimators and the alignment baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .linsys import CompositeNoiseStats, PositionSystem, build_position_system
from .scenario import RangeMeasurements

# Guards against zero row weights (sigma_w = 0) and singular squared-domain
# covariances when a coordinate estimate sits near zero.
_VAR_FLOOR = 1e-12

_SQUARE_MAP = np.array(
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]
)


@dataclass(frozen=True)
class PositionEstimate:
    """Position estimate with a norm value consistent with the coordinates.

    ``refined`` is False when the squared-domain correction produced a
    negative squared coordinate and the stage-1 estimate was kept instead;
    ``s_norm_sq_hat`` then equals ||s_hat||^2 of the fallback.
    """

    s_hat: np.ndarray  # (3,)
    s_norm_sq_hat: float
    residual_norm: float
    refined: bool


def estimate_position_two_stage(
    sys: PositionSystem,
    noise: CompositeNoiseStats,
    unit_weights: bool = False,
) -> PositionEstimate:
    """Two-stage WLS position estimate for one sensor.

    Stage 1 solves the position-explicit system with row weights
    1/row_var (or unit weights for ablation).  Stage 2 re-estimates the
    squared coordinates from (s_hat^2, norm_sq_hat) with weights from
    first-order error propagation, which ties the norm component to the
    coordinates exactly.

    Raises:
        DegenerateGeometryError: if the system matrix is rank deficient.
    """
    G, y = sys.G, sys.y
    if G.shape[0] < 4:
        raise DegenerateGeometryError("at least 4 anchors are required")
    if unit_weights:
        weights = np.ones(G.shape[0])
    else:
        weights = 1.0 / np.maximum(noise.row_var, _VAR_FLOOR)
    gram = G.T @ (G * weights[:, None])
    if np.linalg.matrix_rank(gram) < 4:
        raise DegenerateGeometryError("anchor geometry is rank deficient")
    cov1 = np.linalg.inv(gram)
    x = cov1 @ (G.T @ (y * weights))
    residual = float(np.linalg.norm(y - G @ x))

    # Stage 2: squared-domain correction.  h collects the squares of the
    # coordinate estimates plus the raw norm estimate; the unknown is the
    # vector of true squared coordinates.
    h = np.array([x[0] ** 2, x[1] ** 2, x[2] ** 2, x[3]])
    B = np.diag([2.0 * x[0], 2.0 * x[1], 2.0 * x[2], 1.0])
    cov_h = B @ cov1 @ B.T
    cov_h = cov_h + np.eye(4) * max(_VAR_FLOOR, 1e-9 * float(np.trace(cov_h)) / 4.0)
    w2 = np.linalg.inv(cov_h)
    gram2 = _SQUARE_MAP.T @ w2 @ _SQUARE_MAP
    u = np.linalg.solve(gram2, _SQUARE_MAP.T @ w2 @ h)

    if np.any(u < 0):
        s1 = x[:3].copy()
        return PositionEstimate(
            s_hat=s1,
            s_norm_sq_hat=float(s1 @ s1),
            residual_norm=residual,
            refined=False,
        )
    s_hat = np.sign(x[:3]) * np.sqrt(u)
    return PositionEstimate(
        s_hat=s_hat,
        s_norm_sq_hat=float(u.sum()),
        residual_norm=residual,
        refined=True,
    )


def estimate_all_positions(
    ranges: RangeMeasurements,
    anchors: np.ndarray,
    unit_weights: bool = False,
) -> tuple[np.ndarray, np.ndarray, list[PositionEstimate]]:
    """Estimate every sensor in a range matrix.

    Returns ``(S_hat, s_norm_sq, estimates)`` with S_hat of shape (3, N).
    """
    n_sensors = ranges.d_tilde.shape[1]
    s_hat = np.empty((3, n_sensors))
    norms = np.empty(n_sensors)
    estimates = []
    for n in range(n_sensors):
        noise = CompositeNoiseStats.from_ranges(ranges.d_tilde[:, n], ranges.sigma_w)
        est = estimate_position_two_stage(
            build_position_system(ranges, anchors, n), noise, unit_weights=unit_weights
        )
        s_hat[:, n] = est.s_hat
        norms[n] = est.s_norm_sq_hat
        estimates.append(est)
    return s_hat, norms, estimates
