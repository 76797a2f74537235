"""Rotation/translation extraction from estimated positions.

The comparison baseline: orthogonal Procrustes alignment of the known body
conformation to pre-estimated sensor positions, with the usual reflection
guard, reported as "LS+Procrustes" in benchmark output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError
from .geometry import EulerAngles, TranslationVector, euler_from_rotation


@dataclass(frozen=True)
class PoseEstimate:
    """Rigid-transform estimate aligned to estimated positions."""

    Q_hat: np.ndarray  # (3, 3), orthogonal with det +1
    t_hat: TranslationVector
    angles_hat: EulerAngles
    residual: float  # RMS alignment residual in meters
    gimbal_locked: bool


def procrustes_extract(s_hat: np.ndarray, conformation: np.ndarray) -> PoseEstimate:
    """Best-fit rotation and translation mapping the conformation onto s_hat.

    Minimizes sum_n ||s_hat_n - Q c_n - t||^2 over rotations.  A
    reflection in the raw SVD solution is corrected by flipping the
    smallest singular direction, so det(Q_hat) = +1 always.

    Raises:
        DegenerateGeometryError: fewer than 3 sensors, or the centered
            conformation has rank < 2 (rotation unrecoverable).
    """
    s_hat = np.asarray(s_hat, dtype=float)
    conformation = np.asarray(conformation, dtype=float)
    if s_hat.shape != conformation.shape or s_hat.shape[0] != 3:
        raise DegenerateGeometryError(
            f"position and conformation shapes differ: {s_hat.shape} vs {conformation.shape}"
        )
    n = conformation.shape[1]
    if n < 3:
        raise DegenerateGeometryError("at least 3 sensors are required")
    centroid_s = s_hat.mean(axis=1, keepdims=True)
    centroid_c = conformation.mean(axis=1, keepdims=True)
    centered_c = conformation - centroid_c
    if np.linalg.matrix_rank(centered_c) < 2:
        raise DegenerateGeometryError("conformation is degenerate (collinear sensors)")

    cross = (s_hat - centroid_s) @ centered_c.T
    u, _, vt = np.linalg.svd(cross)
    flip = np.diag([1.0, 1.0, float(np.sign(np.linalg.det(u @ vt)))])
    Q = u @ flip @ vt
    t = (centroid_s - Q @ centroid_c).ravel()
    residual = float(
        np.sqrt(np.mean(np.sum((s_hat - Q @ conformation - t[:, None]) ** 2, axis=0)))
    )
    angles, locked = euler_from_rotation(Q, orthogonality_tol=1e-6)
    return PoseEstimate(
        Q_hat=Q,
        t_hat=TranslationVector.from_array(t),
        angles_hat=angles,
        residual=residual,
        gimbal_locked=locked,
    )
