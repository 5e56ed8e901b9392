"""Error criteria, Lyapunov diagnostics, and run scoring.

Error conventions: the rotation error is R_est R_true^T (identity when the
estimate is exact), the group position error is P_est - R_err P_true (the
translation block of the homogeneous product T_est T_true^{-1}), and bias
and noise-bound errors are true minus estimated. Reported position and
landmark errors are plain Euclidean distances.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .filters import FilterState, Gains
from .manifold import Pose, attitude_distance
from .scenario import TrueState

__all__ = [
    "StepMetrics",
    "RunScore",
    "TAIL_FRACTION",
    "pose_error",
    "landmark_consistency",
    "lyapunov_det",
    "lyapunov_stoch",
    "score_run",
]

TAIL_FRACTION = 0.125   # final fraction of samples treated as steady state


@dataclass(frozen=True)
class StepMetrics:
    """One time stamp of estimator-vs-truth scoring.

    ``landmark_err`` and ``e_norms`` hold one entry per landmark;
    ``bias_err`` is the stacked 6-vector of true-minus-estimated biases and
    ``sigma_err`` the true-minus-estimated noise bound.
    """

    t: float
    att_err: float
    pos_err: float
    landmark_err: np.ndarray
    e_norms: np.ndarray
    bias_err: np.ndarray
    sigma_err: np.ndarray
    lyapunov: float

    def __post_init__(self):
        if not -1e-12 <= self.att_err <= 1.0 + 1e-12:
            raise ValueError(f"att_err must lie in [0, 1], got {self.att_err}")
        if self.pos_err < 0.0 or np.any(np.asarray(self.landmark_err) < 0.0) \
                or np.any(np.asarray(self.e_norms) < 0.0):
            raise ValueError("norms must be non-negative")
        object.__setattr__(self, "landmark_err",
                           np.asarray(self.landmark_err, dtype=float))
        object.__setattr__(self, "e_norms",
                           np.asarray(self.e_norms, dtype=float))
        object.__setattr__(self, "bias_err",
                           np.asarray(self.bias_err, dtype=float))
        object.__setattr__(self, "sigma_err",
                           np.asarray(self.sigma_err, dtype=float))


def pose_error(truth: Pose, est: Pose):
    """Group error (R_err, P_err) of an estimated pose against truth.

    Equals the rotation and translation blocks of T_est T_true^{-1}.
    """
    r_err = est.rotation @ truth.rotation.T
    p_err = est.position - r_err @ truth.position
    return r_err, p_err


def landmark_consistency(truth: TrueState, est_state: FilterState) -> np.ndarray:
    """Group-consistent landmark residuals, one row per landmark.

    Row i is (p_est_i - R_err p_i) - P_err, which equals the innovation
    e_i whenever the measurements are noise-free.
    """
    n = truth.landmarks.shape[0]
    if est_state.landmark_est.shape[0] != n:
        raise ValueError(
            f"landmark counts differ: truth {n}, "
            f"estimate {est_state.landmark_est.shape[0]}"
        )
    r_err, p_err = pose_error(truth.pose, est_state.pose_est)
    return est_state.landmark_est - truth.landmarks @ r_err.T - p_err


def lyapunov_det(e, b_tilde, gains: Gains) -> float:
    """Energy of the landmark-only filter: innovation plus bias terms."""
    e = np.atleast_2d(np.asarray(e, dtype=float))
    b = np.asarray(b_tilde, dtype=float)
    en2 = np.einsum("ij,ij->i", e, e)
    return float(0.5 * np.sum(en2 / gains.alpha)
                 + 0.5 * (b @ b) / gains.gamma_det)


def lyapunov_stoch(e_att: float, e, b_tilde, sigma_tilde, gains: Gains) -> float:
    """Energy of the direction-aided filter.

    Quartic in the landmark innovations, exponential in the attitude
    error, quadratic in the bias and noise-bound errors (each weighted by
    the inverse of its adaptation gain).
    """
    if e_att < 0.0:
        raise ValueError(f"e_att must be >= 0, got {e_att}")
    e = np.atleast_2d(np.asarray(e, dtype=float))
    b = np.asarray(b_tilde, dtype=float)
    s = np.asarray(sigma_tilde, dtype=float)
    en2 = np.einsum("ij,ij->i", e, e)
    gamma_inv = np.concatenate([1.0 / gains.gamma1, 1.0 / gains.gamma2])
    if gains.gamma_sigma > 0.0:
        sigma_term = 0.5 * (s @ s) / gains.gamma_sigma
    elif np.any(s != 0.0):
        raise ValueError(
            "sigma_tilde must be zero when the noise-bound adaptation is "
            "disabled (gamma_sigma = 0)"
        )
    else:
        sigma_term = 0.0
    return float(
        0.25 * np.sum(en2**2 / gains.alpha)
        + e_att * np.exp(e_att)
        + 0.5 * (b * b) @ gamma_inv
        + sigma_term
    )


@dataclass(frozen=True)
class RunScore:
    """Tail-window summary of a run: mean and max per metric.

    The tail is the final ``tail_fraction`` of samples. Landmark entries
    are per-landmark vectors; the rest are scalars. ``final`` keeps the
    terminal StepMetrics row for point-in-time reporting.
    """

    tail_fraction: float
    final: StepMetrics
    att_err_mean: float
    att_err_max: float
    pos_err_mean: float
    pos_err_max: float
    landmark_err_mean: np.ndarray
    landmark_err_max: np.ndarray
    e_norm_mean: np.ndarray
    e_norm_max: np.ndarray
    bias_err_mean: float
    bias_err_max: float
    sigma_err_mean: float
    sigma_err_max: float
    lyapunov_mean: float
    lyapunov_max: float


def score_run(metrics_log) -> RunScore:
    """Condense a time-ordered StepMetrics sequence to tail statistics."""
    if len(metrics_log) == 0:
        raise ValueError("cannot score an empty run")
    times = np.array([m.t for m in metrics_log])
    if np.any(np.diff(times) <= 0.0):
        raise ValueError("metrics log time stamps must increase")
    n_tail = max(1, int(round(len(metrics_log) * TAIL_FRACTION)))
    tail = metrics_log[-n_tail:]
    att = np.array([m.att_err for m in tail])
    pos = np.array([m.pos_err for m in tail])
    lm = np.stack([m.landmark_err for m in tail])
    en = np.stack([m.e_norms for m in tail])
    bias = np.array([np.linalg.norm(m.bias_err) for m in tail])
    sig = np.array([np.linalg.norm(m.sigma_err) for m in tail])
    lyap = np.array([m.lyapunov for m in tail])
    return RunScore(
        tail_fraction=TAIL_FRACTION,
        final=metrics_log[-1],
        att_err_mean=float(att.mean()),
        att_err_max=float(att.max()),
        pos_err_mean=float(pos.mean()),
        pos_err_max=float(pos.max()),
        landmark_err_mean=lm.mean(axis=0),
        landmark_err_max=lm.max(axis=0),
        e_norm_mean=en.mean(axis=0),
        e_norm_max=en.max(axis=0),
        bias_err_mean=float(bias.mean()),
        bias_err_max=float(bias.max()),
        sigma_err_mean=float(sig.mean()),
        sigma_err_max=float(sig.max()),
        lyapunov_mean=float(lyap.mean()),
        lyapunov_max=float(lyap.max()),
    )


def step_metrics(t: float, truth: TrueState, est: FilterState, e: np.ndarray,
                 e_att: float, true_bias: np.ndarray, true_sigma: np.ndarray,
                 gains: Gains, stochastic: bool) -> StepMetrics:
    """Assemble one StepMetrics row from a truth/estimate snapshot.

    ``e`` and ``e_att`` are the innovations of the row's measurement frame
    evaluated at the same epoch as ``truth`` and ``est``.
    """
    b_tilde = np.asarray(true_bias, dtype=float) - est.bias_est
    s_tilde = np.asarray(true_sigma, dtype=float) - est.sigma_est
    if stochastic:
        lyap = lyapunov_stoch(e_att, e, b_tilde, s_tilde, gains)
    else:
        lyap = lyapunov_det(e, b_tilde, gains)
    return StepMetrics(
        t=t,
        att_err=attitude_distance(pose_error(truth.pose, est.pose_est)[0]),
        pos_err=float(np.linalg.norm(truth.pose.position - est.pose_est.position)),
        landmark_err=np.linalg.norm(truth.landmarks - est.landmark_est, axis=1),
        e_norms=np.linalg.norm(np.atleast_2d(e), axis=1),
        bias_err=b_tilde,
        sigma_err=s_tilde,
        lyapunov=lyap,
    )
