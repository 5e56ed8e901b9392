"""Rotation and rigid-body primitives: skew/vex/wedge operators, the
anti-symmetric projection, distance on SO(3), the Rodrigues exponential,
and drift-safe pose integration.

All functions accept array-likes and return float64 ndarrays. Inputs are
never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "Pose",
    "Twist",
    "skew",
    "vex",
    "wedge",
    "antisym_project",
    "upsilon",
    "attitude_distance",
    "se3_inverse",
    "exp_so3",
    "integrate_pose",
    "reorthonormalize",
    "pose_matrix",
    "rotation_ok",
]

# Numerical policy. Values are part of the public contract: callers relying
# on an operation rejecting malformed input get these exact thresholds.
SKEW_TOL = 1e-9          # relative antisymmetry tolerance accepted by vex
ROTATION_TOL = 1e-9      # orthonormality/determinant tolerance for rotations
SMALL_ANGLE = 1e-6       # below this |phi| the exponential uses its series
POLAR_MAX_DRIFT = 0.1    # Frobenius distance to SO(3) reorthonormalize accepts
POLAR_RESTORE_TOL = 1e-12  # orthonormality restored to at least this


def _as_vector3(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,):
        raise ValueError(f"{name} must have shape (3,), got {v.shape}")
    return v


def _as_matrix3(m, name: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (3, 3):
        raise ValueError(f"{name} must have shape (3, 3), got {m.shape}")
    return m


def rotation_ok(r: np.ndarray, tol: float = ROTATION_TOL) -> bool:
    """True if ``r`` is orthonormal with determinant +1 within ``tol``."""
    r = np.asarray(r, dtype=float)
    if r.shape != (3, 3):
        return False
    if np.linalg.norm(r.T @ r - np.eye(3)) > tol:
        return False
    return abs(np.linalg.det(r) - 1.0) <= tol


def _check_rotation(r: np.ndarray, name: str, tol: float = ROTATION_TOL) -> np.ndarray:
    r = _as_matrix3(r, name)
    if np.linalg.norm(r.T @ r - np.eye(3)) > tol:
        raise ValueError(f"{name} is not orthonormal within {tol}")
    if abs(np.linalg.det(r) - 1.0) > tol:
        raise ValueError(f"{name} determinant is not +1 within {tol}")
    return r


@dataclass(frozen=True)
class Pose:
    """Rigid-body pose: a rotation matrix and a position vector.

    The rotation is validated on construction (orthonormal, det +1,
    tolerance ``ROTATION_TOL``).
    """

    rotation: np.ndarray
    position: np.ndarray

    def __post_init__(self):
        r = _check_rotation(self.rotation, "rotation")
        p = _as_vector3(self.position, "position")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "position", p)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class Twist:
    """Group velocity: angular (rad/s) and translational (m/s) parts."""

    angular: np.ndarray
    translational: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "angular", _as_vector3(self.angular, "angular"))
        object.__setattr__(
            self, "translational", _as_vector3(self.translational, "translational")
        )

    def stacked(self) -> np.ndarray:
        """6-vector [angular; translational]."""
        return np.concatenate([self.angular, self.translational])


def skew(h) -> np.ndarray:
    """Map a 3-vector to the antisymmetric matrix with skew(h) @ y = h x y."""
    h = _as_vector3(h, "h")
    return np.array(
        [
            [0.0, -h[2], h[1]],
            [h[2], 0.0, -h[0]],
            [-h[1], h[0], 0.0],
        ]
    )


def vex(s) -> np.ndarray:
    """Inverse of ``skew``. Rejects input that is not antisymmetric.

    The tolerance is relative: ``norm(S + S.T) <= SKEW_TOL * (1 + norm(S))``.
    Use ``upsilon`` for the forgiving path on general matrices.
    """
    s = _as_matrix3(s, "s")
    defect = np.linalg.norm(s + s.T)
    if defect > SKEW_TOL * (1.0 + np.linalg.norm(s)):
        raise ValueError(
            f"matrix is not antisymmetric (defect {defect:.3e}); "
            "vex only accepts algebra elements"
        )
    return np.array([s[2, 1], s[0, 2], s[1, 0]])


def wedge(u: Twist) -> np.ndarray:
    """Embed a twist as a 4x4 algebra element: [[skew(w), v], [0, 0]]."""
    if not isinstance(u, Twist):
        raise ValueError("wedge expects a Twist")
    out = np.zeros((4, 4))
    out[:3, :3] = skew(u.angular)
    out[:3, 3] = u.translational
    return out


def antisym_project(h) -> np.ndarray:
    """Antisymmetric part (H - H^T)/2 of a square matrix."""
    h = _as_matrix3(h, "h")
    return 0.5 * (h - h.T)


def upsilon(h) -> np.ndarray:
    """vex of the antisymmetric part; defined for any 3x3 matrix."""
    h = _as_matrix3(h, "h")
    a = 0.5 * (h - h.T)
    return np.array([a[2, 1], a[0, 2], a[1, 0]])


def attitude_distance(r) -> float:
    """Normalized distance of a rotation from identity: tr(I - R)/4 in [0, 1]."""
    r = _check_rotation(r, "r")
    return 0.25 * (3.0 - np.trace(r))


def se3_inverse(t: Pose) -> Pose:
    """Inverse pose: rotation R^T, position -R^T p."""
    if not isinstance(t, Pose):
        raise ValueError("se3_inverse expects a Pose")
    rt = t.rotation.T
    return Pose(rt.copy(), -(rt @ t.position))


def pose_matrix(t: Pose) -> np.ndarray:
    """Embed a pose as the 4x4 homogeneous transform."""
    out = np.eye(4)
    out[:3, :3] = t.rotation
    out[:3, 3] = t.position
    return out


def exp_so3(phi) -> np.ndarray:
    """Rotation matrix for a rotation vector, by the closed-form exponential.

    Below ``SMALL_ANGLE`` the sin/versine coefficients switch to their
    series to avoid 0/0.
    """
    phi = _as_vector3(phi, "phi")
    angle = np.linalg.norm(phi)
    s = skew(phi)
    if angle < SMALL_ANGLE:
        a = 1.0 - angle**2 / 6.0
        b = 0.5 - angle**2 / 24.0
    else:
        a = np.sin(angle) / angle
        b = (1.0 - np.cos(angle)) / angle**2
    return np.eye(3) + a * s + b * (s @ s)


def integrate_pose(t: Pose, u: Twist, dt: float) -> Pose:
    """Advance a pose by a constant twist over dt.

    Rotation moves along the group (R exp(w dt)), position along the
    body-frame translational velocity (P + R v dt).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    r = t.rotation @ exp_so3(u.angular * dt)
    p = t.position + t.rotation @ (u.translational * dt)
    return Pose(r, p)


def reorthonormalize(r) -> np.ndarray:
    """Nearest rotation matrix (polar decomposition via SVD).

    Accepts drift up to Frobenius distance ``POLAR_MAX_DRIFT`` from SO(3);
    anything farther means the integrator blew up and is rejected, as is
    any input on the reflection side (det < 0).
    """
    r = _as_matrix3(r, "r")
    u, sing, vt = np.linalg.svd(r)
    nearest = u @ vt
    if np.linalg.det(nearest) < 0.0:
        raise ValueError("input is nearest to a reflection (det < 0), not a rotation")
    drift = np.linalg.norm(sing - 1.0)
    if drift > POLAR_MAX_DRIFT:
        raise ValueError(
            f"matrix is {drift:.3e} from SO(3), beyond {POLAR_MAX_DRIFT}; "
            "refusing to mask an integrator failure"
        )
    return nearest
