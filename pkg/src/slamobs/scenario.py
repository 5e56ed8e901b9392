"""Ground-truth world and sensor corruption.

A scenario is a rigid body moving through a field of fixed landmarks with a
set of known inertial reference directions. This module propagates the true
state and produces the three measurement families the filters consume:
body-frame velocity (biased, noisy), body-frame landmark positions, and
body-frame direction vectors paired with their inertial references.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .manifold import Pose, Twist, integrate_pose

__all__ = [
    "TrueState",
    "NoiseSpec",
    "InertialReferences",
    "MeasurementFrame",
    "DegenerateGeometryError",
    "propagate_truth",
    "measure_velocity",
    "measure_landmarks",
    "measure_imu_vectors",
    "normalize_and_augment",
    "make_frame",
]

UNIT_NORM_TOL = 1e-9     # direction vectors in a frame must be unit to this
COLLINEAR_TOL = 1e-6     # cross-product norm below this is rank deficiency
MIN_MEAS_NORM = 1e-9     # measured direction vectors shorter than this fail


class DegenerateGeometryError(RuntimeError):
    """Reference/measurement geometry cannot span 3D (rank deficiency)."""


def _as_vectors(a, name: str, cols: int = 3) -> np.ndarray:
    a = np.atleast_2d(np.asarray(a, dtype=float))
    if a.ndim != 2 or a.shape[1] != cols:
        raise ValueError(f"{name} must have shape (k, {cols}), got {a.shape}")
    return a


@dataclass(frozen=True)
class TrueState:
    """True pose plus the fixed landmark field (inertial frame)."""

    pose: Pose
    landmarks: np.ndarray

    def __post_init__(self):
        lm = _as_vectors(self.landmarks, "landmarks")
        if lm.shape[0] < 3:
            raise ValueError(f"at least 3 landmarks required, got {lm.shape[0]}")
        object.__setattr__(self, "landmarks", lm)


@dataclass(frozen=True)
class NoiseSpec:
    """Constant biases and per-axis Gaussian noise levels for every sensor.

    Velocity noise is drawn per sample (the harness pre-scales the stds by
    1/sqrt(dt) when its SDE-consistent mode is enabled, so this type never
    needs to know the step size). Landmark and IMU noise terms exist in the
    measurement models and default to zero. ``seed`` names the run's
    generator; one generator serves all draws of a run.
    """

    bias_angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_translational: np.ndarray = field(default_factory=lambda: np.zeros(3))
    std_angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    std_translational: np.ndarray = field(default_factory=lambda: np.zeros(3))
    landmark_bias: np.ndarray = 0.0
    landmark_std: np.ndarray = 0.0
    imu_bias: np.ndarray = 0.0
    imu_std: np.ndarray = 0.0
    seed: int = 0

    def __post_init__(self):
        for name in ("bias_angular", "bias_translational", "std_angular",
                     "std_translational"):
            v = np.asarray(getattr(self, name), dtype=float)
            if v.shape != (3,):
                raise ValueError(f"{name} must have shape (3,), got {v.shape}")
            object.__setattr__(self, name, v)
        for name in ("landmark_bias", "landmark_std", "imu_bias", "imu_std"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        for name in ("std_angular", "std_translational", "landmark_std", "imu_std"):
            if np.any(np.asarray(getattr(self, name)) < 0.0):
                raise ValueError(f"{name} entries must be >= 0")

    def make_rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)


@dataclass(frozen=True)
class InertialReferences:
    """Known inertial direction vectors and their confidence weights."""

    vectors: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        v = _as_vectors(self.vectors, "vectors")
        w = np.asarray(self.weights, dtype=float)
        if v.shape[0] < 2:
            raise ValueError("at least two reference vectors required")
        if w.shape != (v.shape[0],):
            raise ValueError(
                f"weights must have shape ({v.shape[0]},), got {w.shape}"
            )
        if np.any(w < 0.0) or w.sum() <= 0.0:
            raise ValueError("weights must be >= 0 with positive sum")
        norms = np.linalg.norm(v, axis=1)
        if np.any(norms <= MIN_MEAS_NORM):
            raise ValueError("reference vectors must be non-zero")
        # The first two must span a plane; a fully collinear set can never
        # be repaired by augmentation.
        unit = v / norms[:, None]
        if v.shape[0] == 2 and np.linalg.norm(np.cross(unit[0], unit[1])) < COLLINEAR_TOL:
            raise DegenerateGeometryError("reference vectors are collinear")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "weights", w)


@dataclass(frozen=True)
class MeasurementFrame:
    """Everything the filters see at one time stamp.

    ``imu_ref_dirs``/``imu_body_dirs`` are the paired unit vectors after
    normalization and (for two-vector setups) cross-product augmentation;
    ``imu_weights`` are the matching rescaled confidence weights.
    """

    t: float
    velocity_meas: Twist
    landmark_ids: tuple
    landmark_meas: np.ndarray
    imu_ref_dirs: np.ndarray
    imu_body_dirs: np.ndarray
    imu_weights: np.ndarray

    def __post_init__(self):
        lm = _as_vectors(self.landmark_meas, "landmark_meas")
        ids = tuple(int(i) for i in self.landmark_ids)
        if len(ids) != lm.shape[0]:
            raise ValueError("landmark_ids and landmark_meas lengths differ")
        ref = _as_vectors(self.imu_ref_dirs, "imu_ref_dirs")
        body = _as_vectors(self.imu_body_dirs, "imu_body_dirs")
        w = np.asarray(self.imu_weights, dtype=float)
        if ref.shape != body.shape or w.shape != (ref.shape[0],):
            raise ValueError("imu pair/weight shapes are inconsistent")
        for name, dirs in (("imu_ref_dirs", ref), ("imu_body_dirs", body)):
            err = np.abs(np.einsum("ij,ij->i", dirs, dirs) - 1.0)
            if np.any(err > 2.0 * UNIT_NORM_TOL):
                raise ValueError(f"{name} entries must be unit vectors")
        object.__setattr__(self, "landmark_ids", ids)
        object.__setattr__(self, "landmark_meas", lm)
        object.__setattr__(self, "imu_ref_dirs", ref)
        object.__setattr__(self, "imu_body_dirs", body)
        object.__setattr__(self, "imu_weights", w)

    @property
    def imu_pairs(self):
        """List of (inertial unit vector, body unit vector) tuples."""
        return list(zip(self.imu_ref_dirs, self.imu_body_dirs))


def propagate_truth(state: TrueState, omega, v, dt: float) -> TrueState:
    """Advance the true pose by constant body-frame velocities over dt.

    Landmarks are fixed; the returned state shares the landmark array.
    """
    pose = integrate_pose(state.pose, Twist(omega, v), dt)
    return TrueState(pose, state.landmarks)


def measure_velocity(omega, v, spec: NoiseSpec, rng: np.random.Generator) -> Twist:
    """Velocity measurement: truth plus constant bias plus per-axis noise.

    Draws are taken even at zero std so a run's random stream does not
    depend on the noise configuration.
    """
    omega = np.asarray(omega, dtype=float)
    v = np.asarray(v, dtype=float)
    n_w = rng.standard_normal(3) * spec.std_angular
    n_v = rng.standard_normal(3) * spec.std_translational
    return Twist(omega + spec.bias_angular + n_w, v + spec.bias_translational + n_v)


def measure_landmarks(
    pose: Pose, landmarks, spec: NoiseSpec, rng: np.random.Generator
) -> np.ndarray:
    """Body-frame landmark positions: R^T (p_i - P) plus bias plus noise."""
    landmarks = _as_vectors(landmarks, "landmarks")
    clean = (landmarks - pose.position) @ pose.rotation
    noise = rng.standard_normal(clean.shape) * spec.landmark_std
    return clean + spec.landmark_bias + noise


def measure_imu_vectors(
    rotation: np.ndarray,
    refs: InertialReferences,
    spec: NoiseSpec,
    rng: np.random.Generator,
) -> np.ndarray:
    """Raw (unnormalized) body-frame direction measurements: R^T r_j + noise."""
    rotation = np.asarray(rotation, dtype=float)
    clean = refs.vectors @ rotation
    noise = rng.standard_normal(clean.shape) * spec.imu_std
    return clean + spec.imu_bias + noise


def normalize_and_augment(refs: InertialReferences, meas) -> tuple:
    """Unit-normalize reference/measurement pairs; complete a two-vector set.

    Returns (ref_dirs, body_dirs, weights). For exactly two pairs the third
    direction is synthesized as the normalized cross product on each side
    (its weight is the mean of the input weights). Weights are rescaled to
    sum to 3 so the direction-weighted outer-product sum has unit-mean
    eigenvalues regardless of the pair count.
    """
    meas = _as_vectors(meas, "meas")
    if meas.shape != refs.vectors.shape:
        raise ValueError(
            f"measurement shape {meas.shape} does not match references "
            f"{refs.vectors.shape}"
        )
    meas_norms = np.linalg.norm(meas, axis=1)
    if np.any(meas_norms <= MIN_MEAS_NORM):
        raise DegenerateGeometryError("near-zero measured direction vector")
    ref_dirs = refs.vectors / np.linalg.norm(refs.vectors, axis=1)[:, None]
    body_dirs = meas / meas_norms[:, None]
    weights = refs.weights.astype(float)

    if ref_dirs.shape[0] == 2:
        ref_cross = np.cross(ref_dirs[0], ref_dirs[1])
        body_cross = np.cross(body_dirs[0], body_dirs[1])
        ref_cn = np.linalg.norm(ref_cross)
        body_cn = np.linalg.norm(body_cross)
        if ref_cn < COLLINEAR_TOL or body_cn < COLLINEAR_TOL:
            raise DegenerateGeometryError(
                "collinear direction pair; cannot span 3D"
            )
        ref_dirs = np.vstack([ref_dirs, ref_cross / ref_cn])
        body_dirs = np.vstack([body_dirs, body_cross / body_cn])
        weights = np.append(weights, weights.mean())

    weights = weights * (3.0 / weights.sum())
    return ref_dirs, body_dirs, weights


def make_frame(
    t: float,
    state: TrueState,
    omega,
    v,
    refs: InertialReferences,
    spec: NoiseSpec,
    rng: np.random.Generator,
) -> MeasurementFrame:
    """Sample one complete measurement frame from the current truth.

    Draw order is fixed (velocity, landmarks, IMU vectors) so seeded runs
    are bit-reproducible.
    """
    vel = measure_velocity(omega, v, spec, rng)
    y = measure_landmarks(state.pose, state.landmarks, spec, rng)
    raw = measure_imu_vectors(state.pose.rotation, refs, spec, rng)
    ref_dirs, body_dirs, weights = normalize_and_augment(refs, raw)
    return MeasurementFrame(
        t=t,
        velocity_meas=vel,
        landmark_ids=tuple(range(y.shape[0])),
        landmark_meas=y,
        imu_ref_dirs=ref_dirs,
        imu_body_dirs=body_dirs,
        imu_weights=weights,
    )
