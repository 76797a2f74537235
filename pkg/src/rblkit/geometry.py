"""3D rotation algebra for rigid-body localization.

Rotations follow the ZYX (yaw-pitch-roll) convention: Q = Qz @ Qy @ Qx,
with each factor an active right-handed rotation about a coordinate axis.
Angles are stored in radians internally; degrees appear only at external
interfaces (config files, CLI, reports).

Two rotation constructors are provided: the exact trigonometric product
and its first-order (small-angle) linearization Q = I + skew(theta), which
turns the rotation into a system affine in the angle vector via
``vec(Q) = gamma + L @ theta`` (column-major vectorization).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometryError

# |sin(pitch)| above this is treated as gimbal lock.
_GIMBAL_TOL = 1e-9


@dataclass(frozen=True)
class EulerAngles:
    """Rotation angles about the x, y, z axes, stored in radians."""

    theta_x: float
    theta_y: float
    theta_z: float

    @classmethod
    def from_degrees(cls, x: float, y: float, z: float) -> "EulerAngles":
        return cls(np.deg2rad(x), np.deg2rad(y), np.deg2rad(z))

    @classmethod
    def from_array(cls, theta: np.ndarray) -> "EulerAngles":
        theta = np.asarray(theta, dtype=float)
        return cls(float(theta[0]), float(theta[1]), float(theta[2]))

    @property
    def as_array(self) -> np.ndarray:
        """Angles as a length-3 float array in radians."""
        return np.array([self.theta_x, self.theta_y, self.theta_z])

    @property
    def as_degrees(self) -> np.ndarray:
        return np.rad2deg(self.as_array)

    def normalized(self) -> "EulerAngles":
        """Wrap each angle into [-pi, pi]."""
        wrapped = np.arctan2(np.sin(self.as_array), np.cos(self.as_array))
        return EulerAngles.from_array(wrapped)


@dataclass(frozen=True)
class TranslationVector:
    """Translation distances along x, y, z in meters."""

    t_x: float
    t_y: float
    t_z: float

    @classmethod
    def from_array(cls, t: np.ndarray) -> "TranslationVector":
        t = np.asarray(t, dtype=float)
        return cls(float(t[0]), float(t[1]), float(t[2]))

    @property
    def as_array(self) -> np.ndarray:
        return np.array([self.t_x, self.t_y, self.t_z])


@dataclass(frozen=True)
class LinearizationConstants:
    """Constants of the affine map vec(Q_small_angle(theta)) = gamma + L @ theta."""

    gamma: np.ndarray  # (9,)
    L: np.ndarray  # (9, 3)


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix: skew(v) @ u == cross(v, u)."""
    return np.array(
        [
            [0.0, -v[2], v[1]],
            [v[2], 0.0, -v[0]],
            [-v[1], v[0], 0.0],
        ]
    )


def rotation_matrix_exact(angles: EulerAngles) -> np.ndarray:
    """Exact rotation matrix Qz @ Qy @ Qx for the given Euler angles.

    The result is orthogonal with determinant +1 to floating-point
    precision for any finite input.
    """
    cx, sx = np.cos(angles.theta_x), np.sin(angles.theta_x)
    cy, sy = np.cos(angles.theta_y), np.sin(angles.theta_y)
    cz, sz = np.cos(angles.theta_z), np.sin(angles.theta_z)
    qz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    qy = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    qx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return qz @ qy @ qx


def rotation_matrix_small_angle(angles: EulerAngles) -> np.ndarray:
    """First-order linearization I + skew(theta) of the exact rotation.

    Valid for small angles (cos ~ 1, sin ~ theta); the caller is
    responsible for staying in that regime.  The diagonal is exactly 1 and
    the off-diagonal part is antisymmetric.
    """
    return np.eye(3) + skew(angles.as_array)


def linearization_constants() -> LinearizationConstants:
    """Constants (gamma, L) with vec(Q_sa(theta)) = gamma + L @ theta exactly.

    Column-major vectorization.  gamma is vec(I); column k of L is the
    vectorized cross-product generator for axis k, so L has exactly six
    nonzero entries, all +-1.
    """
    gamma = np.eye(3).flatten(order="F")
    L = np.zeros((9, 3))
    for k in range(3):
        basis = np.zeros(3)
        basis[k] = 1.0
        L[:, k] = skew(basis).flatten(order="F")
    return LinearizationConstants(gamma=gamma, L=L)


def apply_rigid_transform(
    Q: np.ndarray, t: TranslationVector, conformation: np.ndarray
) -> np.ndarray:
    """Transform body-frame points: column n of the result is Q @ c_n + t."""
    conformation = np.asarray(conformation, dtype=float)
    if Q.shape != (3, 3) or conformation.shape[0] != 3:
        raise ValueError(
            f"expected 3x3 rotation and 3xN points, got {Q.shape} and {conformation.shape}"
        )
    return Q @ conformation + t.as_array[:, None]


def euler_from_rotation(
    Q: np.ndarray, orthogonality_tol: float = 1e-6
) -> tuple[EulerAngles, bool]:
    """Recover ZYX Euler angles from a rotation matrix.

    Returns ``(angles, gimbal_locked)``.  Away from the pitch singularity
    the forward map reproduces Q to high precision.  At gimbal lock
    (|sin(pitch)| ~ 1) only the combination of roll and yaw is observable;
    the convention roll := 0 is returned and the flag is set.

    Raises:
        DegenerateGeometryError: if Q is not orthogonal with determinant
            +1 within ``orthogonality_tol``.
    """
    Q = np.asarray(Q, dtype=float)
    if Q.shape != (3, 3):
        raise DegenerateGeometryError(f"expected a 3x3 matrix, got shape {Q.shape}")
    ortho_err = np.linalg.norm(Q.T @ Q - np.eye(3))
    det_err = abs(np.linalg.det(Q) - 1.0)
    if ortho_err > orthogonality_tol or det_err > orthogonality_tol:
        raise DegenerateGeometryError(
            f"matrix is not a rotation: ||Q'Q - I||={ortho_err:.3e}, |det-1|={det_err:.3e}"
        )
    sin_pitch = np.clip(-Q[2, 0], -1.0, 1.0)
    theta_y = float(np.arcsin(sin_pitch))
    if abs(sin_pitch) > 1.0 - _GIMBAL_TOL:
        # Roll and yaw are degenerate; pin roll to zero.
        theta_x = 0.0
        theta_z = float(np.arctan2(-Q[0, 1], Q[1, 1]))
        return EulerAngles(theta_x, theta_y, theta_z), True
    theta_x = float(np.arctan2(Q[2, 1], Q[2, 2]))
    theta_z = float(np.arctan2(Q[1, 0], Q[0, 0]))
    return EulerAngles(theta_x, theta_y, theta_z), False
