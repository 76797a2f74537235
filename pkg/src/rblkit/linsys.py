"""Linear systems derived from squared range measurements.

Squaring a noisy range gives ``d~^2 = ||a - s||^2 + 2 d w + w^2``; dropping
the second-order term leaves the composite noise ``xi ~ 2 d w`` with
variance ``4 d^2 sigma_w^2``.  Two systems follow:

* the position-explicit system per sensor, linear in (s_n, ||s_n||^2),
  used by the position pre-estimator, and
* the parameter-explicit system, linear in the rotation angles and the
  translation via the small-angle vectorization, stacked over all sensors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RblError
from .geometry import TranslationVector, linearization_constants
from .scenario import RangeMeasurements

_CONSTANTS = linearization_constants()


@dataclass(frozen=True)
class CompositeNoiseStats:
    """Per-row variances of the squared-range composite noise (m^4)."""

    row_var: np.ndarray
    n0: float  # scalar fallback: mean of the per-row variances

    @classmethod
    def from_ranges(cls, d_hat: np.ndarray, sigma_w: float) -> "CompositeNoiseStats":
        row_var = composite_noise_variance(np.asarray(d_hat, dtype=float), sigma_w)
        row_var = np.atleast_1d(row_var)
        return cls(row_var=row_var, n0=float(row_var.mean()))


def composite_noise_variance(d_hat, sigma_w: float):
    """Variance 4 d^2 sigma_w^2 of the linearized squared-range noise."""
    return 4.0 * np.square(d_hat) * sigma_w**2


@dataclass(frozen=True)
class PositionSystem:
    """Linear system y = G @ (s_n, ||s_n||^2) + xi for one sensor.

    Row m is ``d~[m,n]^2 - ||a_m||^2 = -2 a_m . s_n + ||s_n||^2 + xi``.
    ``sensor_index`` is the 0-based column n of the range matrix.
    """

    y: np.ndarray  # (M,)
    G: np.ndarray  # (M, 4)
    sensor_index: int


@dataclass(frozen=True)
class ParamSystem:
    """Stacked system z = H_theta @ theta + H_t @ t + xi over all sensors.

    Rows are ordered sensor-major: all M anchor rows of sensor 0, then
    sensor 1, and so on.  ``row_sensor``/``row_anchor`` map each row back
    to its (n, m) pair.  The inputs used to build the system (anchors,
    conformation, ranges, squared-norm estimates) are kept for provenance.
    """

    z: np.ndarray  # (M*N,)
    h_theta: np.ndarray  # (M*N, 3)
    h_t: np.ndarray  # (M*N, 3)
    row_noise_var: np.ndarray  # (M*N,)
    row_sensor: np.ndarray  # (M*N,) int
    row_anchor: np.ndarray  # (M*N,) int
    anchors: np.ndarray  # (3, M)
    conformation: np.ndarray  # (3, N)
    ranges: np.ndarray  # (M, N) measured ranges
    s_norm_sq: np.ndarray  # (N,) squared-norm values used in z
    sigma_w: float

    @property
    def n_rows(self) -> int:
        return self.z.shape[0]


@dataclass(frozen=True)
class ReducedSystem:
    """Translation-cancelled system z' = H_theta @ theta + xi."""

    z: np.ndarray
    h_theta: np.ndarray
    row_noise_var: np.ndarray


def build_position_system(
    ranges: RangeMeasurements, anchors: np.ndarray, sensor_index: int
) -> PositionSystem:
    """Assemble the position-explicit system for one sensor column."""
    anchors = np.asarray(anchors, dtype=float)
    n_sensors = ranges.d_tilde.shape[1]
    if not 0 <= sensor_index < n_sensors:
        raise RblError(f"sensor_index {sensor_index} out of range [0, {n_sensors})")
    if anchors.shape[1] != ranges.d_tilde.shape[0]:
        raise RblError(
            f"anchor count {anchors.shape[1]} does not match range rows {ranges.d_tilde.shape[0]}"
        )
    d_col = ranges.d_tilde[:, sensor_index]
    y = d_col**2 - np.sum(anchors**2, axis=0)
    G = np.hstack([-2.0 * anchors.T, np.ones((anchors.shape[1], 1))])
    return PositionSystem(y=y, G=G, sensor_index=sensor_index)


def build_param_system(
    ranges: RangeMeasurements,
    anchors: np.ndarray,
    conformation: np.ndarray,
    s_norm_sq: np.ndarray,
) -> ParamSystem:
    """Assemble the stacked parameter-explicit system.

    ``s_norm_sq`` supplies the squared-norm value ||s_n||^2 used in each
    sensor's observation rows; it is an explicit input so the caller
    controls whether ground-truth or pre-estimated norms flow in.
    """
    anchors = np.asarray(anchors, dtype=float)
    conformation = np.asarray(conformation, dtype=float)
    s_norm_sq = np.asarray(s_norm_sq, dtype=float)
    m_anchors = anchors.shape[1]
    n_sensors = conformation.shape[1]
    if ranges.d_tilde.shape != (m_anchors, n_sensors):
        raise RblError(
            f"range matrix shape {ranges.d_tilde.shape} does not match "
            f"{m_anchors} anchors x {n_sensors} sensors"
        )
    if s_norm_sq.shape != (n_sensors,):
        raise RblError(
            f"s_norm_sq must have one entry per sensor ({n_sensors}), got {s_norm_sq.shape}"
        )

    gamma, L = _CONSTANTS.gamma, _CONSTANTS.L
    anchor_norm_sq = np.sum(anchors**2, axis=0)
    rows = m_anchors * n_sensors
    z = np.empty(rows)
    h_theta = np.empty((rows, 3))
    h_t = np.empty((rows, 3))
    row_sensor = np.repeat(np.arange(n_sensors), m_anchors)
    row_anchor = np.tile(np.arange(m_anchors), n_sensors)
    r = 0
    for n in range(n_sensors):
        c = conformation[:, n]
        for m in range(m_anchors):
            a = anchors[:, m]
            kron_row = np.kron(c, a)  # (c^T kron a^T) as a 9-vector
            z[r] = (
                ranges.d_tilde[m, n] ** 2
                - anchor_norm_sq[m]
                - s_norm_sq[n]
                + 2.0 * kron_row @ gamma
            )
            h_theta[r] = -2.0 * kron_row @ L
            h_t[r] = -2.0 * a
            r += 1

    row_var = composite_noise_variance(ranges.d_tilde.T.ravel(), ranges.sigma_w)
    return ParamSystem(
        z=z,
        h_theta=h_theta,
        h_t=h_t,
        row_noise_var=row_var,
        row_sensor=row_sensor,
        row_anchor=row_anchor,
        anchors=anchors,
        conformation=conformation,
        ranges=ranges.d_tilde.copy(),
        s_norm_sq=s_norm_sq.copy(),
        sigma_w=ranges.sigma_w,
    )


def cancel_translation(sys: ParamSystem, t_hat: TranslationVector) -> ReducedSystem:
    """Subtract the translation contribution: z' = z - H_t @ t_hat.

    The angle channel matrix and the row noise statistics are carried
    over unchanged.
    """
    t = t_hat.as_array
    if sys.h_t.shape[1] != t.shape[0]:
        raise RblError("translation estimate has the wrong dimension")
    return ReducedSystem(
        z=sys.z - sys.h_t @ t,
        h_theta=sys.h_theta,
        row_noise_var=sys.row_noise_var,
    )
