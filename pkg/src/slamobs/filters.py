"""The two pose-and-landmark estimators.

Both filters advance an estimated pose, landmark set, and velocity-bias
vector one measurement frame at a time. The landmark-only filter uses
linear innovation feedback and needs no direction measurements. The
direction-aided filter adds an attitude innovation built from weighted
IMU/reference vector pairs, cubic landmark feedback, and an adaptive
estimate of the velocity-noise covariance bound.

Continuous-time laws are discretized by forward Euler with the rotation
advanced along the group (exponential retraction). Because the cubic
feedback terms make the closed loop arbitrarily stiff for large errors,
each measurement interval is integrated in one or more Euler substeps
with the measurement held constant; the substep length is chosen from an
explicit bound on the instantaneous closed-loop rates, and collapses to
a single plain Euler step whenever the dynamics are slow.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .manifold import Pose, Twist, exp_so3
from .scenario import MeasurementFrame

__all__ = [
    "FilterState",
    "Gains",
    "InnovationBundle",
    "UnstableSetError",
    "DivergenceError",
    "landmark_innovation",
    "attitude_innovation",
    "innovation_bundle",
    "det_step",
    "stoch_correction",
    "stoch_adaptation",
    "stoch_step",
]

MIN_GAIN_K2 = 9.0 / 4.0   # stability floor on the cubic landmark gain
TAU_W_FLOOR = 1e-6        # smallest usable attitude-innovation divisor
CONDITION_LIMIT = 1e8     # direction-matrix conditioning guard
STEP_TRUST = 0.25         # max (local rate x substep length) tolerated
MAX_SUBSTEPS = 200_000    # above this the step is declared divergent


class UnstableSetError(RuntimeError):
    """Attitude error is at or near the repulsive set where the
    attitude innovation loses meaning (trace near -1 / singular
    direction matrix)."""


class DivergenceError(RuntimeError):
    """State left the numerically integrable regime."""


def _vec(v, name, length=3):
    v = np.asarray(v, dtype=float)
    if v.shape != (length,):
        raise ValueError(f"{name} must have shape ({length},), got {v.shape}")
    return v


@dataclass(frozen=True)
class FilterState:
    """Estimated pose, landmark positions, velocity bias, and noise bound.

    ``bias_est`` stacks the angular (first three) and translational (last
    three) bias estimates. ``sigma_est`` is only advanced by the
    direction-aided filter and rides along untouched otherwise.
    """

    pose_est: Pose
    landmark_est: np.ndarray
    bias_est: np.ndarray
    sigma_est: np.ndarray

    def __post_init__(self):
        lm = np.atleast_2d(np.asarray(self.landmark_est, dtype=float))
        if lm.ndim != 2 or lm.shape[1] != 3:
            raise ValueError(f"landmark_est must have shape (n, 3), got {lm.shape}")
        b = _vec(self.bias_est, "bias_est", 6)
        s = _vec(self.sigma_est, "sigma_est", 3)
        if not (np.isfinite(lm).all() and np.isfinite(b).all() and np.isfinite(s).all()):
            raise ValueError("filter state entries must be finite")
        object.__setattr__(self, "landmark_est", lm)
        object.__setattr__(self, "bias_est", b)
        object.__setattr__(self, "sigma_est", s)


@dataclass(frozen=True)
class Gains:
    """All design constants for both filters.

    ``gamma1``/``gamma2`` are the diagonal adaptation-rate blocks (scalar,
    3-vector, or full diagonal 3x3 accepted; stored as the diagonal).
    ``alpha`` holds one positive scale per landmark. ``k_w``, ``k_p``,
    ``gamma_det`` drive the landmark-only filter and are unused by the
    direction-aided one.
    """

    k1: float
    k2: float
    k3: float
    k_b: float
    k_sigma: float
    gamma1: np.ndarray
    gamma2: np.ndarray
    gamma_sigma: float
    alpha: np.ndarray
    varrho: float
    k_w: float
    k_p: float
    gamma_det: float

    def __post_init__(self):
        for name in ("k1", "k2", "k3", "k_b", "k_sigma",
                     "varrho", "k_w", "k_p", "gamma_det"):
            val = float(getattr(self, name))
            if not np.isfinite(val) or val <= 0.0:
                raise ValueError(f"{name} must be a positive finite scalar")
            object.__setattr__(self, name, val)
        gs = float(self.gamma_sigma)
        # zero is allowed and freezes the noise-bound adaptation entirely
        if not np.isfinite(gs) or gs < 0.0:
            raise ValueError("gamma_sigma must be a non-negative finite scalar")
        object.__setattr__(self, "gamma_sigma", gs)
        if self.k2 <= MIN_GAIN_K2:
            raise ValueError(
                f"k2 must exceed {MIN_GAIN_K2} for the cubic landmark "
                f"feedback to dominate its own drift term, got {self.k2}"
            )
        for name in ("gamma1", "gamma2"):
            object.__setattr__(self, name, _as_diagonal(getattr(self, name), name))
        alpha = np.atleast_1d(np.asarray(self.alpha, dtype=float))
        if alpha.ndim != 1 or alpha.size == 0 or np.any(alpha <= 0.0):
            raise ValueError("alpha must be a non-empty vector of positive scalars")
        object.__setattr__(self, "alpha", alpha)


def _as_diagonal(g, name) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    if g.ndim == 0:
        g = np.full(3, float(g))
    elif g.shape == (3, 3):
        if np.any(g != np.diag(np.diag(g))):
            raise ValueError(f"{name} must be diagonal")
        g = np.diag(g).copy()
    elif g.shape != (3,):
        raise ValueError(f"{name} must be a scalar, 3-vector, or diagonal 3x3")
    if np.any(g <= 0.0):
        raise ValueError(f"{name} diagonal entries must be positive")
    return g


@dataclass(frozen=True)
class InnovationBundle:
    """Per-frame innovation quantities shared by correction and adaptation.

    ``e`` holds the landmark innovations (one row per landmark), ``ups``
    the attitude innovation vector, ``e_att`` the weighted attitude error
    in [0, ~1], ``pi`` the direction-consistency trace, ``lambda_min`` the
    smallest eigenvalue of the complementary direction-weight matrix, and
    the ``tau_*`` scalars the derived adaptation tempos. ``tau_w`` is the
    raw (unfloored) value; consumers apply the floor.
    """

    e: np.ndarray
    ups: np.ndarray
    e_att: float
    pi: float
    lambda_min: float
    tau_b: float
    tau_sigma: float
    tau_w: float


def landmark_innovation(state: FilterState, y_i, i: int) -> np.ndarray:
    """Innovation of landmark ``i``: estimate minus re-projected measurement."""
    n = state.landmark_est.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"landmark index {i} out of range for {n} landmarks")
    y_i = _vec(y_i, "y_i")
    pose = state.pose_est
    return state.landmark_est[i] - pose.rotation @ y_i - pose.position


def _innovations(rot: np.ndarray, pos: np.ndarray, lm_est: np.ndarray,
                 y: np.ndarray) -> np.ndarray:
    # rows: p_est_i - R y_i - P
    return lm_est - y @ rot.T - pos


def _attitude_terms(rot, ref_dirs, body_dirs, weights, lambda_min=None):
    """Core attitude-innovation computation on plain arrays.

    Returns (ups, e_att, pi, lambda_min). ``lambda_min`` may be passed in
    when the reference set is constant across calls.
    """
    est_dirs = ref_dirs @ rot            # rows: R^T ref_j
    if lambda_min is None:
        m = (weights[:, None] * ref_dirs).T @ ref_dirs
        m_comp = np.trace(m) * np.eye(3) - m
        lambda_min = float(np.linalg.eigvalsh(m_comp)[0])
    cross = np.cross(est_dirs, body_dirs)
    ups = rot @ (0.5 * (weights @ cross))
    dots = np.einsum("ij,ij->i", est_dirs, body_dirs)
    # weighting each term keeps the sum equal to the trace-form error for
    # any number of pairs, and keeps it non-negative
    e_att = max(0.25 * float(weights @ (1.0 - dots)), 0.0)
    meas_outer = (weights[:, None] * body_dirs).T @ ref_dirs
    est_outer = (weights[:, None] * est_dirs).T @ ref_dirs
    if np.linalg.cond(est_outer) > CONDITION_LIMIT:
        raise UnstableSetError(
            "direction matrix is numerically singular; attitude error is "
            "too close to the repulsive set"
        )
    pi = float(np.trace(np.linalg.solve(est_outer.T, meas_outer.T)))
    return ups, e_att, pi, lambda_min


def attitude_innovation(rotation_est, pairs, weights):
    """Attitude innovation from weighted (inertial, body) unit-vector pairs.

    ``pairs`` is a sequence of (inertial, body) pairs, or equivalently an
    array of shape (k, 2, 3). Returns (ups, e_att, pi, lambda_min).
    """
    rot = np.asarray(rotation_est, dtype=float)
    if rot.shape != (3, 3):
        raise ValueError(f"rotation must have shape (3, 3), got {rot.shape}")
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 3 or arr.shape[1:] != (2, 3) or arr.shape[0] < 3:
        raise ValueError(
            "pairs must be (k >= 3) entries of ((3,) inertial, (3,) body)"
        )
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (arr.shape[0],):
        raise ValueError("weights length must match the number of pairs")
    return _attitude_terms(rot, arr[:, 0], arr[:, 1], weights)


def _bundle_from_arrays(rot, pos, lm_est, frame, lambda_min=None):
    e = _innovations(rot, pos, lm_est, frame.landmark_meas)
    ups, e_att, pi, lambda_min = _attitude_terms(
        rot, frame.imu_ref_dirs, frame.imu_body_dirs, frame.imu_weights,
        lambda_min,
    )
    exp_e = float(np.exp(e_att))
    return InnovationBundle(
        e=e,
        ups=ups,
        e_att=e_att,
        pi=pi,
        lambda_min=lambda_min,
        tau_b=(e_att + 1.0) * exp_e,
        tau_sigma=(e_att + 2.0) * exp_e,
        tau_w=lambda_min * (1.0 + pi),
    )


def innovation_bundle(state: FilterState, frame: MeasurementFrame) -> InnovationBundle:
    """All innovation quantities of one frame against one filter state."""
    pose = state.pose_est
    return _bundle_from_arrays(
        pose.rotation, pose.position, state.landmark_est, frame
    )


def _floored_tau_w(tau_w: float) -> float:
    if tau_w <= 0.0:
        raise UnstableSetError(
            f"attitude-innovation divisor is non-positive ({tau_w:.3e}); "
            "attitude error started on or reached the repulsive set"
        )
    return max(tau_w, TAU_W_FLOOR)


def stoch_correction(bundle: InnovationBundle, state: FilterState, y,
                     gains: Gains):
    """Velocity correction terms (W_omega, W_v) of the direction-aided filter.

    ``y`` is accepted for shape validation against the bundle; the
    innovations themselves are read from the bundle.
    """
    rot = state.pose_est.rotation
    tau_w = _floored_tau_w(bundle.tau_w)
    u = rot.T @ bundle.ups
    ratio = (bundle.e_att + 2.0) / (bundle.e_att + 1.0)
    w_omega = (gains.k1 / tau_w) * u + 0.25 * ratio * state.sigma_est * u
    y = np.atleast_2d(np.asarray(y, dtype=float))
    e = bundle.e
    if y.shape != e.shape:
        raise ValueError(f"y has shape {y.shape}, bundle has {e.shape}")
    en2 = np.einsum("ij,ij->i", e, e)
    w_v = -gains.k3 * (((en2 / gains.alpha) @ e) @ rot)
    return w_omega, w_v


def stoch_adaptation(bundle: InnovationBundle, state: FilterState, y,
                     gains: Gains):
    """Bias and noise-bound adaptation rates of the direction-aided filter.

    Returns (bias_rate, sigma_rate). The translational-bias block receives
    no attitude-innovation contribution by construction.
    """
    rot = state.pose_est.rotation
    u = rot.T @ bundle.ups
    y = np.atleast_2d(np.asarray(y, dtype=float))
    e = bundle.e
    if y.shape != e.shape:
        raise ValueError(f"y has shape {y.shape}, bundle has {e.shape}")
    en2 = np.einsum("ij,ij->i", e, e)
    scaled = (en2 / gains.alpha)[:, None] * (e @ rot)   # rows: (|e|^2/a) R^T e
    bias_ang = gains.gamma1 * (
        0.5 * bundle.tau_b * u
        - np.einsum("ij->j", np.cross(y, scaled))
        - gains.k_b * state.bias_est[:3]
    )
    bias_trans = gains.gamma2 * (
        -np.einsum("ij->j", scaled) - gains.k_b * state.bias_est[3:]
    )
    sigma_rate = gains.gamma_sigma * (
        0.125 * bundle.tau_sigma * u * u - gains.k_sigma * state.sigma_est
    )
    return np.concatenate([bias_ang, bias_trans]), sigma_rate


def _det_rate_bound(y_norm2, gains: Gains) -> float:
    """Upper estimate of the fastest closed-loop rate for the linear filter.

    The loop is linear in the innovations, so the bound depends only on
    the measured landmark geometry and the gains.
    """
    stack = float(np.sum((1.0 + y_norm2) / gains.alpha))
    return gains.k_p + gains.k_w * stack + float(np.sqrt(gains.gamma_det * stack))


def _stoch_rate_bound(e, y_norm2, bias, w_omega, w_v, tau_w, gains: Gains,
                      dt: float) -> float:
    """Upper estimate of the fastest closed-loop rate for the cubic filter."""
    y_max = float(np.sqrt(np.max(y_norm2))) if y_norm2.size else 0.0
    drive = (
        float(np.linalg.norm(bias[3:]) + np.linalg.norm(w_v))
        + y_max * float(np.linalg.norm(bias[:3]) + np.linalg.norm(w_omega))
    )
    e_pred = np.linalg.norm(e, axis=1) + dt * drive
    s2 = float(np.sum(e_pred**2 / gains.alpha))
    g1 = float(np.max(gains.gamma1))
    g2 = float(np.max(gains.gamma2))
    return (
        gains.k2 / gains.varrho
        + gains.k3 * s2
        + np.sqrt(g2 * s2)
        + np.sqrt(g1 * s2 * max(y_max**2, 1.0))
        + (gains.k1 / tau_w) * (1.0 + y_max)
        + gains.k_sigma * gains.gamma_sigma
    )


def det_step(state: FilterState, u_m: Twist, y, gains: Gains,
             dt: float) -> FilterState:
    """One measurement interval of the landmark-only filter.

    The correction and adaptation stack the per-landmark terms
    [y_i x (R^T e_i); R^T e_i] scaled by 1/alpha_i; pose kinematics run on
    the bias- and correction-compensated measured velocity. ``sigma_est``
    is carried through untouched.
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    n = state.landmark_est.shape[0]
    if y.shape != (n, 3):
        raise ValueError(f"y must have shape ({n}, 3), got {y.shape}")
    if gains.alpha.shape != (n,):
        raise ValueError(
            f"gains.alpha has {gains.alpha.shape[0]} entries for {n} landmarks"
        )
    rot = state.pose_est.rotation.copy()
    pos = state.pose_est.position.copy()
    lm = state.landmark_est.copy()
    bias = state.bias_est.copy()
    inv_alpha = 1.0 / gains.alpha
    y_norm2 = np.einsum("ij,ij->i", y, y)
    um = u_m.stacked()
    rate = _det_rate_bound(y_norm2, gains)
    if not np.isfinite(rate):
        raise DivergenceError("closed-loop rate bound is non-finite")

    remaining = dt
    steps = 0
    while remaining > 0.0:
        e = _innovations(rot, pos, lm, y)
        body_e = e @ rot                       # rows: R^T e_i
        top = inv_alpha @ np.cross(y, body_e)  # sum (1/a) y_i x R^T e_i
        bot = inv_alpha @ body_e
        stack = np.concatenate([top, bot])
        w_u = -gains.k_w * stack
        bias_rate = -gains.gamma_det * stack
        h = remaining if rate * remaining <= STEP_TRUST \
            else max(STEP_TRUST / rate, dt / MAX_SUBSTEPS)
        h = min(h, remaining)

        twist = um - bias - w_u
        new_pos = pos + rot @ (twist[3:] * h)
        rot = rot @ exp_so3(twist[:3] * h)
        pos = new_pos
        lm = lm + h * (-gains.k_p * e)
        bias = bias + h * bias_rate
        remaining -= h
        steps += 1
        if steps > MAX_SUBSTEPS:
            raise DivergenceError(
                f"step did not resolve within {MAX_SUBSTEPS} substeps"
            )
    if not (np.isfinite(lm).all() and np.isfinite(bias).all()):
        raise DivergenceError("filter state became non-finite")
    return FilterState(
        pose_est=Pose(rot, pos),
        landmark_est=lm,
        bias_est=bias,
        sigma_est=state.sigma_est,
    )


def stoch_step(state: FilterState, frame: MeasurementFrame, gains: Gains,
               dt: float) -> FilterState:
    """One measurement interval of the direction-aided filter.

    Executes, per substep: innovations, velocity corrections, pose
    kinematics on the compensated measured velocity, cubic landmark
    update, and bias/noise-bound adaptation, all evaluated at the substep
    start (forward Euler, measurement held).
    """
    if dt <= 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    y = frame.landmark_meas
    n = state.landmark_est.shape[0]
    if y.shape != (n, 3):
        raise ValueError(f"frame has {y.shape[0]} landmarks, state has {n}")
    if gains.alpha.shape != (n,):
        raise ValueError(
            f"gains.alpha has {gains.alpha.shape[0]} entries for {n} landmarks"
        )
    rot = state.pose_est.rotation.copy()
    pos = state.pose_est.position.copy()
    lm = state.landmark_est.copy()
    bias = state.bias_est.copy()
    sigma = state.sigma_est.copy()
    inv_alpha = 1.0 / gains.alpha
    y_norm2 = np.einsum("ij,ij->i", y, y)
    um = frame.velocity_meas.stacked()
    lambda_min = None

    remaining = dt
    steps = 0
    while remaining > 0.0:
        bundle = _bundle_from_arrays(rot, pos, lm, frame, lambda_min)
        lambda_min = bundle.lambda_min
        tau_w = _floored_tau_w(bundle.tau_w)
        e = bundle.e
        u = rot.T @ bundle.ups
        ratio = (bundle.e_att + 2.0) / (bundle.e_att + 1.0)
        w_omega = (gains.k1 / tau_w) * u + 0.25 * ratio * sigma * u
        en2 = np.einsum("ij,ij->i", e, e)
        scaled = (en2 * inv_alpha)[:, None] * (e @ rot)
        w_v = -gains.k3 * np.einsum("ij->j", scaled)
        bias_rate = np.concatenate([
            gains.gamma1 * (
                0.5 * bundle.tau_b * u
                - np.einsum("ij->j", np.cross(y, scaled))
                - gains.k_b * bias[:3]
            ),
            gains.gamma2 * (-np.einsum("ij->j", scaled) - gains.k_b * bias[3:]),
        ])
        sigma_rate = gains.gamma_sigma * (
            0.125 * bundle.tau_sigma * u * u - gains.k_sigma * sigma
        )
        lm_rate = (-gains.k2 / gains.varrho) * e + np.cross(y, w_omega) @ rot.T

        rate = _stoch_rate_bound(
            e, y_norm2, bias, w_omega, w_v, tau_w, gains, remaining
        )
        if not np.isfinite(rate):
            raise DivergenceError("closed-loop rate bound is non-finite")
        h = remaining if rate * remaining <= STEP_TRUST \
            else max(STEP_TRUST / rate, dt / MAX_SUBSTEPS)
        h = min(h, remaining)

        twist = um - bias - np.concatenate([w_omega, w_v])
        new_pos = pos + rot @ (twist[3:] * h)
        rot = rot @ exp_so3(twist[:3] * h)
        pos = new_pos
        lm = lm + h * lm_rate
        bias = bias + h * bias_rate
        sigma = sigma + h * sigma_rate
        remaining -= h
        steps += 1
        if steps > MAX_SUBSTEPS:
            raise DivergenceError(
                f"step did not resolve within {MAX_SUBSTEPS} substeps"
            )
    if not (np.isfinite(lm).all() and np.isfinite(bias).all()
            and np.isfinite(sigma).all()):
        raise DivergenceError("filter state became non-finite")
    return FilterState(
        pose_est=Pose(rot, pos),
        landmark_est=lm,
        bias_est=bias,
        sigma_est=sigma,
    )
