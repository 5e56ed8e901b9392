"""Run configuration, closed-loop simulation, dataset replay, and logging.

A run is described by a TOML file (see ``scenarios/paper_sim.toml``) or a
programmatically built :class:`RunConfig`. ``run_simulation`` executes the
truth-propagate / measure / filter-step / score loop; ``replay_dataset``
drives the same filters from recorded CSV streams. ``write_log`` emits
``metrics.csv``, ``states.csv``, and ``config.resolved.toml`` (the fully
resolved configuration, which reproduces the run when loaded again);
``write_inputs`` emits the measurement streams a simulation consumed so a
run can be replayed from files.

CSV conventions: comma-separated, one header row, floats with 17
significant digits (lossless for IEEE-754 doubles).
"""

from __future__ import annotations

import dataclasses
import os
import sys
import warnings
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .filters import (
    DivergenceError,
    FilterState,
    Gains,
    UnstableSetError,
    det_step,
    innovation_bundle,
    stoch_step,
)
from .manifold import Pose, Twist, reorthonormalize, rotation_ok
from .metrics import StepMetrics, step_metrics
from .scenario import (
    DegenerateGeometryError,
    InertialReferences,
    NoiseSpec,
    TrueState,
    measure_imu_vectors,
    measure_landmarks,
    measure_velocity,
    normalize_and_augment,
)

__all__ = [
    "ConfigError",
    "DataError",
    "RunConfig",
    "RunLog",
    "load_config",
    "run_simulation",
    "replay_dataset",
    "write_log",
    "write_inputs",
    "run_trials",
    "REORTH_INTERVAL",
    "TIME_GAP_FACTOR",
]

REORTH_INTERVAL = 1000   # steps between rotation re-projections
TIME_GAP_FACTOR = 10.0   # replay warns when a gap exceeds this x median dt

_FILTER_KINDS = {
    "det": "det", "deterministic": "det",
    "stoch": "stoch", "stochastic": "stoch",
}


class ConfigError(ValueError):
    """A run configuration is malformed or inconsistent."""


class DataError(RuntimeError):
    """A recorded dataset fails to parse or violates its schema."""


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _vec(v, name, length):
    v = np.asarray(v, dtype=float)
    if v.ndim == 0:
        v = np.full(length, float(v))
    if v.shape != (length,):
        raise ConfigError(f"{name} must be a scalar or {length}-vector")
    return v


def _rows(v, name, cols=3):
    v = np.asarray(v, dtype=float)
    if v.ndim != 2 or v.shape[1] != cols or v.shape[0] == 0:
        raise ConfigError(f"{name} must be a non-empty list of {cols}-vectors")
    return v


def _rotation(v, name):
    """Accept a row-major 9-list; re-project mildly drifted inputs."""
    r = np.asarray(v, dtype=float)
    if r.shape == (9,):
        r = r.reshape(3, 3)
    if r.shape != (3, 3):
        raise ConfigError(f"{name} must be 9 row-major rotation entries")
    if rotation_ok(r):
        return r
    try:
        return reorthonormalize(r)
    except ValueError as err:
        raise ConfigError(f"{name} is not close to a rotation: {err}") from err


@dataclass(frozen=True)
class RunConfig:
    """Everything needed to execute one run, fully resolved.

    Estimator landmark/bias/sigma blocks and the per-landmark gain scales
    accept scalars in the TOML file; they are expanded to full arrays
    here. Rotations given with a few digits of precision (hand-copied
    matrices) are re-projected onto the rotation group at load.
    """

    duration: float
    dt: float
    seed: int
    filter_kind: str
    angular_velocity: np.ndarray
    translational_velocity: np.ndarray
    world_rotation: np.ndarray
    world_position: np.ndarray
    landmarks: np.ndarray
    ref_vectors: np.ndarray
    ref_weights: np.ndarray
    est_rotation: np.ndarray
    est_position: np.ndarray
    est_landmarks: np.ndarray
    est_bias: np.ndarray
    est_sigma: np.ndarray
    gains: Gains
    stride: int = 1
    bias_angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    bias_translational: np.ndarray = field(default_factory=lambda: np.zeros(3))
    std_angular: np.ndarray = field(default_factory=lambda: np.zeros(3))
    std_translational: np.ndarray = field(default_factory=lambda: np.zeros(3))
    landmark_bias: float = 0.0
    landmark_std: float = 0.0
    imu_bias: float = 0.0
    imu_std: float = 0.0
    sde_scaling: bool = False

    def __post_init__(self):
        if not (np.isfinite(self.dt) and self.dt > 0.0):
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.duration < self.dt:
            raise ConfigError("duration must be at least one step long")
        if self.filter_kind not in ("det", "stoch"):
            raise ConfigError(
                f"filter must be 'det' or 'stoch', got {self.filter_kind!r}"
            )
        if int(self.stride) < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        object.__setattr__(self, "seed", int(self.seed))
        object.__setattr__(self, "stride", int(self.stride))
        lm = _rows(self.landmarks, "world.landmarks")
        n = lm.shape[0]
        object.__setattr__(self, "landmarks", lm)
        object.__setattr__(
            self, "angular_velocity",
            _vec(self.angular_velocity, "motion.angular_velocity", 3))
        object.__setattr__(
            self, "translational_velocity",
            _vec(self.translational_velocity, "motion.translational_velocity", 3))
        object.__setattr__(
            self, "world_rotation", _rotation(self.world_rotation, "world.rotation"))
        object.__setattr__(
            self, "world_position", _vec(self.world_position, "world.position", 3))
        object.__setattr__(
            self, "ref_vectors", _rows(self.ref_vectors, "references.vectors"))
        object.__setattr__(
            self, "ref_weights",
            _vec(self.ref_weights, "references.weights", self.ref_vectors.shape[0]))
        object.__setattr__(
            self, "est_rotation", _rotation(self.est_rotation, "estimator.rotation"))
        object.__setattr__(
            self, "est_position", _vec(self.est_position, "estimator.position", 3))
        est_lm = np.asarray(self.est_landmarks, dtype=float)
        if est_lm.ndim == 0:
            est_lm = np.full((n, 3), float(est_lm))
        est_lm = _rows(est_lm, "estimator.landmarks")
        if est_lm.shape[0] != n:
            raise ConfigError(
                f"estimator.landmarks has {est_lm.shape[0]} rows for {n} landmarks"
            )
        object.__setattr__(self, "est_landmarks", est_lm)
        object.__setattr__(self, "est_bias", _vec(self.est_bias, "estimator.bias", 6))
        object.__setattr__(self, "est_sigma", _vec(self.est_sigma, "estimator.sigma", 3))
        for name in ("bias_angular", "bias_translational",
                     "std_angular", "std_translational"):
            object.__setattr__(self, name, _vec(getattr(self, name), f"noise.{name}", 3))
        for name in ("landmark_bias", "landmark_std", "imu_bias", "imu_std"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if self.gains.alpha.shape != (n,):
            raise ConfigError(
                f"gains.alpha has {self.gains.alpha.shape[0]} entries "
                f"for {n} landmarks"
            )

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    def noise_spec(self) -> NoiseSpec:
        """Noise model with the SDE-consistent scaling applied if enabled."""
        scale = 1.0 / np.sqrt(self.dt) if self.sde_scaling else 1.0
        return NoiseSpec(
            bias_angular=self.bias_angular,
            bias_translational=self.bias_translational,
            std_angular=self.std_angular * scale,
            std_translational=self.std_translational * scale,
            landmark_bias=self.landmark_bias,
            landmark_std=self.landmark_std,
            imu_bias=self.imu_bias,
            imu_std=self.imu_std,
            seed=self.seed,
        )

    def references(self) -> InertialReferences:
        return InertialReferences(self.ref_vectors, self.ref_weights)

    def initial_truth(self) -> TrueState:
        return TrueState(Pose(self.world_rotation, self.world_position),
                         self.landmarks)

    def initial_estimate(self) -> FilterState:
        return FilterState(
            pose_est=Pose(self.est_rotation, self.est_position),
            landmark_est=self.est_landmarks,
            bias_est=self.est_bias,
            sigma_est=self.est_sigma,
        )

    def true_bias(self) -> np.ndarray:
        return np.concatenate([self.bias_angular, self.bias_translational])

    def true_sigma(self) -> np.ndarray:
        """Per-axis noise covariance bound: elementwise max variance."""
        return np.maximum(self.std_angular, self.std_translational) ** 2

    def to_dict(self) -> dict:
        g = self.gains
        return {
            "duration": float(self.duration),
            "dt": float(self.dt),
            "seed": int(self.seed),
            "filter": self.filter_kind,
            "stride": int(self.stride),
            "motion": {
                "angular_velocity": self.angular_velocity.tolist(),
                "translational_velocity": self.translational_velocity.tolist(),
            },
            "world": {
                "rotation": self.world_rotation.ravel().tolist(),
                "position": self.world_position.tolist(),
                "landmarks": self.landmarks.tolist(),
            },
            "noise": {
                "bias_angular": self.bias_angular.tolist(),
                "bias_translational": self.bias_translational.tolist(),
                "std_angular": self.std_angular.tolist(),
                "std_translational": self.std_translational.tolist(),
                "landmark_bias": self.landmark_bias,
                "landmark_std": self.landmark_std,
                "imu_bias": self.imu_bias,
                "imu_std": self.imu_std,
                "sde_scaling": bool(self.sde_scaling),
            },
            "references": {
                "vectors": self.ref_vectors.tolist(),
                "weights": self.ref_weights.tolist(),
            },
            "estimator": {
                "rotation": self.est_rotation.ravel().tolist(),
                "position": self.est_position.tolist(),
                "landmarks": self.est_landmarks.tolist(),
                "bias": self.est_bias.tolist(),
                "sigma": self.est_sigma.tolist(),
            },
            "gains": {
                "k1": g.k1, "k2": g.k2, "k3": g.k3,
                "k_b": g.k_b, "k_sigma": g.k_sigma,
                "gamma1": g.gamma1.tolist(), "gamma2": g.gamma2.tolist(),
                "gamma_sigma": g.gamma_sigma,
                "alpha": g.alpha.tolist(), "varrho": g.varrho,
                "k_w": g.k_w, "k_p": g.k_p, "gamma_det": g.gamma_det,
            },
        }


_TOP_KEYS = {"duration", "dt", "seed", "filter", "stride",
             "motion", "world", "noise", "references", "estimator", "gains"}
_TABLE_KEYS = {
    "motion": {"angular_velocity", "translational_velocity"},
    "world": {"rotation", "position", "landmarks"},
    "noise": {"bias_angular", "bias_translational", "std_angular",
              "std_translational", "landmark_bias", "landmark_std",
              "imu_bias", "imu_std", "sde_scaling"},
    "references": {"vectors", "weights"},
    "estimator": {"rotation", "position", "landmarks", "bias", "sigma"},
    "gains": {"k1", "k2", "k3", "k_b", "k_sigma", "gamma1", "gamma2",
              "gamma_sigma", "alpha", "varrho", "k_w", "k_p", "gamma_det"},
}


def _check_keys(d: dict, allowed, where: str):
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown {where} key(s): {', '.join(sorted(unknown))}")


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed TOML document (strict keys)."""
    _check_keys(doc, _TOP_KEYS, "top-level")
    for table in ("motion", "world", "references", "estimator", "gains"):
        if table not in doc:
            raise ConfigError(f"missing required [{table}] table")
        if not isinstance(doc[table], dict):
            raise ConfigError(f"[{table}] must be a table")
        _check_keys(doc[table], _TABLE_KEYS[table], f"[{table}]")
    noise = doc.get("noise", {})
    if not isinstance(noise, dict):
        raise ConfigError("[noise] must be a table")
    _check_keys(noise, _TABLE_KEYS["noise"], "[noise]")
    for key in ("duration", "dt", "seed", "filter"):
        if key not in doc:
            raise ConfigError(f"missing required key '{key}'")
    if not isinstance(doc["seed"], int) or isinstance(doc["seed"], bool):
        raise ConfigError("seed must be an integer")
    kind = _FILTER_KINDS.get(str(doc["filter"]).lower())
    if kind is None:
        raise ConfigError(f"filter must be det or stoch, got {doc['filter']!r}")
    motion, world = doc["motion"], doc["world"]
    refs, est, gn = doc["references"], doc["estimator"], doc["gains"]
    for key in _TABLE_KEYS["gains"]:
        if key not in gn:
            raise ConfigError(f"missing gains.{key}")
    landmarks = _rows(world.get("landmarks"), "world.landmarks")
    alpha = np.asarray(gn["alpha"], dtype=float)
    if alpha.ndim == 0:
        alpha = np.full(landmarks.shape[0], float(alpha))
    try:
        gains = Gains(
            k1=gn["k1"], k2=gn["k2"], k3=gn["k3"], k_b=gn["k_b"],
            k_sigma=gn["k_sigma"], gamma1=np.asarray(gn["gamma1"], dtype=float),
            gamma2=np.asarray(gn["gamma2"], dtype=float),
            gamma_sigma=gn["gamma_sigma"], alpha=alpha, varrho=gn["varrho"],
            k_w=gn["k_w"], k_p=gn["k_p"], gamma_det=gn["gamma_det"],
        )
    except ValueError as err:
        raise ConfigError(f"invalid gains: {err}") from err
    try:
        return RunConfig(
            duration=float(doc["duration"]),
            dt=float(doc["dt"]),
            seed=doc["seed"],
            filter_kind=kind,
            stride=doc.get("stride", 1),
            angular_velocity=motion.get("angular_velocity", 0.0),
            translational_velocity=motion.get("translational_velocity", 0.0),
            world_rotation=world.get("rotation", np.eye(3).ravel().tolist()),
            world_position=world.get("position", 0.0),
            landmarks=landmarks,
            ref_vectors=_rows(refs.get("vectors"), "references.vectors"),
            ref_weights=refs.get("weights", 1.0),
            est_rotation=est.get("rotation", np.eye(3).ravel().tolist()),
            est_position=est.get("position", 0.0),
            est_landmarks=est.get("landmarks", 0.0),
            est_bias=est.get("bias", 0.0),
            est_sigma=est.get("sigma", 0.0),
            gains=gains,
            bias_angular=noise.get("bias_angular", 0.0),
            bias_translational=noise.get("bias_translational", 0.0),
            std_angular=noise.get("std_angular", 0.0),
            std_translational=noise.get("std_translational", 0.0),
            landmark_bias=noise.get("landmark_bias", 0.0),
            landmark_std=noise.get("landmark_std", 0.0),
            imu_bias=noise.get("imu_bias", 0.0),
            imu_std=noise.get("imu_std", 0.0),
            sde_scaling=noise.get("sde_scaling", False),
        )
    except (ValueError, DegenerateGeometryError) as err:
        raise ConfigError(str(err)) from err


def load_config(path, seed=None, filter_kind=None, stride=None) -> RunConfig:
    """Read a TOML run configuration, applying optional CLI overrides."""
    try:
        with open(path, "rb") as fh:
            doc = _toml.load(fh)
    except FileNotFoundError as err:
        raise ConfigError(f"config file not found: {path}") from err
    except _toml.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    cfg = config_from_dict(doc)
    updates = {}
    if seed is not None:
        updates["seed"] = int(seed)
    if filter_kind is not None:
        kind = _FILTER_KINDS.get(str(filter_kind).lower())
        if kind is None:
            raise ConfigError(f"filter must be det or stoch, got {filter_kind!r}")
        updates["filter_kind"] = kind
    if stride is not None:
        updates["stride"] = int(stride)
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, str):
        return '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    raise TypeError(f"cannot serialize {type(v).__name__} to TOML")


def toml_dumps(doc: dict) -> str:
    """Serialize a one-level-deep dict of plain values to TOML text."""
    lines = []
    for key, val in doc.items():
        if not isinstance(val, dict):
            lines.append(f"{key} = {_toml_value(val)}")
    for key, val in doc.items():
        if isinstance(val, dict):
            lines.append("")
            lines.append(f"[{key}]")
            for k, v in val.items():
                lines.append(f"{k} = {_toml_value(v)}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class RunLog:
    """Everything one run produced.

    ``times``/``metrics`` hold one entry per step, stamped at the start
    of the step's interval. Snapshots are sampled every ``stride`` steps.
    The ``velocity_rows``/``truth_rows``/... arrays hold the measurement
    and truth streams a simulation consumed (None for replayed runs,
    which read them from files).
    """

    config: RunConfig
    times: np.ndarray
    metrics: tuple
    snap_times: np.ndarray
    snap_truth: tuple
    snap_est: tuple
    truth_times: np.ndarray = None
    truth_rows: np.ndarray = None
    velocity_rows: np.ndarray = None
    imu_raw_rows: np.ndarray = None
    landmark_rows: np.ndarray = None

    # metrics row k is stamped at the start of step k's interval: it pairs
    # the state estimate with the measurement frame the step consumes, so
    # innovations in the log are exactly what the filter saw. Snapshots
    # are post-step (row at t_{k+1}), so the final state is recorded.


def _wrap_step_error(err, k, t):
    msg = f"step {k} (t = {t:.6g} s): {err}"
    return type(err)(msg)


def _maybe_reorth(k_next, n_steps, truth, est):
    """Re-project both rotations every REORTH_INTERVAL steps and at the end."""
    if k_next % REORTH_INTERVAL == 0 or k_next == n_steps:
        truth = TrueState(
            Pose(reorthonormalize(truth.pose.rotation), truth.pose.position),
            truth.landmarks,
        )
        est = dataclasses.replace(
            est, pose_est=Pose(reorthonormalize(est.pose_est.rotation),
                               est.pose_est.position),
        )
    return truth, est


def _attitude_energy(rot_est, frame) -> float:
    """The weighted attitude error of a frame at a given attitude estimate."""
    est_dirs = frame.imu_ref_dirs @ rot_est
    dots = np.einsum("ij,ij->i", est_dirs, frame.imu_body_dirs)
    return max(0.25 * float(frame.imu_weights @ (1.0 - dots)), 0.0)


def _metrics_row(t, truth, est, frame_y, e_att, config, stochastic):
    pose = est.pose_est
    e = est.landmark_est - frame_y @ pose.rotation.T - pose.position
    return step_metrics(
        t=t, truth=truth, est=est, e=e, e_att=e_att,
        true_bias=config.true_bias(), true_sigma=config.true_sigma(),
        gains=config.gains, stochastic=stochastic,
    )


def run_simulation(config: RunConfig) -> RunLog:
    """Closed loop: propagate truth, corrupt measurements, step, score."""
    from .scenario import MeasurementFrame, propagate_truth

    n_steps = config.n_steps
    dt = config.dt
    omega = config.angular_velocity
    v = config.translational_velocity
    refs = config.references()
    spec = config.noise_spec()
    rng = spec.make_rng()
    gains = config.gains
    stochastic = config.filter_kind == "stoch"
    truth = config.initial_truth()
    est = config.initial_estimate()
    n = config.landmarks.shape[0]
    m = refs.vectors.shape[0]

    times = np.empty(n_steps)
    metrics = []
    snap_times, snap_truth, snap_est = [], [], []
    truth_rows = np.empty((n_steps + 1, 12))
    velocity_rows = np.empty((n_steps, 6))
    imu_raw_rows = np.empty((n_steps, 3 * m))
    landmark_rows = np.empty((n_steps, n, 3))
    truth_rows[0] = np.concatenate([truth.pose.rotation.ravel(),
                                    truth.pose.position])

    for k in range(n_steps):
        t_k = k * dt
        # same draw order as scenario.make_frame, with the raw direction
        # measurements kept for the replayable log
        vel = measure_velocity(omega, v, spec, rng)
        y = measure_landmarks(truth.pose, truth.landmarks, spec, rng)
        raw = measure_imu_vectors(truth.pose.rotation, refs, spec, rng)
        try:
            ref_dirs, body_dirs, weights = normalize_and_augment(refs, raw)
            frame = MeasurementFrame(
                t=t_k, velocity_meas=vel,
                landmark_ids=tuple(range(n)), landmark_meas=y,
                imu_ref_dirs=ref_dirs, imu_body_dirs=body_dirs,
                imu_weights=weights,
            )
            times[k] = t_k
            e_att = _attitude_energy(est.pose_est.rotation, frame) \
                if stochastic else 0.0
            metrics.append(_metrics_row(t_k, truth, est, y, e_att,
                                        config, stochastic))
            if stochastic:
                est = stoch_step(est, frame, gains, dt)
            else:
                est = det_step(est, vel, y, gains, dt)
        except (UnstableSetError, DivergenceError,
                DegenerateGeometryError) as err:
            raise _wrap_step_error(err, k, t_k) from err
        truth = propagate_truth(truth, omega, v, dt)
        truth, est = _maybe_reorth(k + 1, n_steps, truth, est)

        velocity_rows[k] = vel.stacked()
        imu_raw_rows[k] = raw.ravel()
        landmark_rows[k] = y
        truth_rows[k + 1] = np.concatenate([truth.pose.rotation.ravel(),
                                            truth.pose.position])
        if (k + 1) % config.stride == 0:
            snap_times.append((k + 1) * dt)
            snap_truth.append(truth)
            snap_est.append(est)

    return RunLog(
        config=config,
        times=times,
        metrics=tuple(metrics),
        snap_times=np.array(snap_times),
        snap_truth=tuple(snap_truth),
        snap_est=tuple(snap_est),
        truth_times=np.arange(n_steps + 1) * dt,
        truth_rows=truth_rows,
        velocity_rows=velocity_rows,
        imu_raw_rows=imu_raw_rows,
        landmark_rows=landmark_rows,
    )


def _read_csv(path, expected_header):
    """Parse a CSV with a fixed header into a float matrix."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    if not lines:
        raise DataError(f"{path}:1: empty file")
    if lines[0].strip() != expected_header:
        raise DataError(
            f"{path}:1: header mismatch\n  expected: {expected_header}\n"
            f"  got:      {lines[0].strip()}"
        )
    width = expected_header.count(",") + 1
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != width:
            raise DataError(
                f"{path}:{lineno}: expected {width} fields, got {len(parts)}"
            )
        try:
            rows.append([float(p) for p in parts])
        except ValueError as err:
            raise DataError(f"{path}:{lineno}: {err}") from err
    if not rows:
        raise DataError(f"{path}:2: no data rows")
    return np.array(rows)


_TRUTH_HEADER = "t,r11,r12,r13,r21,r22,r23,r31,r32,r33,px,py,pz"
_LANDMARK_HEADER = "t,id,yx,yy,yz"


def _imu_header(m: int) -> str:
    cols = "t,wx,wy,wz,vx,vy,vz"
    for j in range(1, m + 1):
        cols += f",a{j}x,a{j}y,a{j}z"
    return cols


def _read_imu(path, m_refs):
    """Read the velocity/IMU stream; direction columns are optional."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
    except OSError as err:
        raise DataError(f"cannot read {path}: {err}") from err
    if header == _imu_header(0):
        data = _read_csv(path, _imu_header(0))
        return data[:, 0], data[:, 1:4], data[:, 4:7], None
    data = _read_csv(path, _imu_header(m_refs))
    raw = data[:, 7:].reshape(-1, m_refs, 3)
    return data[:, 0], data[:, 1:4], data[:, 4:7], raw


def _read_truth(path):
    data = _read_csv(path, _TRUTH_HEADER)
    t = data[:, 0]
    if np.any(np.diff(t) <= 0.0):
        raise DataError(f"{path}: time stamps must strictly increase")
    poses = []
    for i, row in enumerate(data):
        r = row[1:10].reshape(3, 3)
        if not rotation_ok(r):
            try:
                r = reorthonormalize(r)
            except ValueError as err:
                raise DataError(
                    f"{path}:{i + 2}: rotation entries are not close to a "
                    f"rotation matrix ({err})"
                ) from err
        poses.append(Pose(r, row[10:13]))
    return t, poses


def _read_landmark_file(path, times, n):
    """Read per-stamp landmark rows; stamps must match the IMU stream."""
    data = _read_csv(path, _LANDMARK_HEADER)
    if data.shape[0] != times.shape[0] * n:
        raise DataError(
            f"{path}: expected {times.shape[0] * n} rows "
            f"({times.shape[0]} stamps x {n} landmarks), got {data.shape[0]}"
        )
    meas = np.empty((times.shape[0], n, 3))
    for k in range(times.shape[0]):
        block = data[k * n:(k + 1) * n]
        if np.any(block[:, 0] != times[k]):
            raise DataError(
                f"{path}: stamp group {k} does not match IMU stamp {times[k]!r}"
            )
        if np.any(block[:, 1] != np.arange(n)):
            raise DataError(
                f"{path}: stamp group {k} must list landmark ids 0..{n - 1} "
                "in order"
            )
        meas[k] = block[:, 2:5]
    return meas


def replay_dataset(imu_path, landmark_path, truth_path,
                   config: RunConfig) -> RunLog:
    """Drive the configured filter from recorded CSV streams.

    Truth must hold one more row than the IMU stream; each IMU row k is
    applied over [t_k, t_{k+1}) and scored against truth row k+1. When no
    landmark file is given, landmark measurements are synthesized from
    the truth poses through the measurement model; the same applies to
    missing IMU direction columns under the stochastic filter.
    """
    from .scenario import MeasurementFrame

    refs = config.references()
    spec = config.noise_spec()
    rng = spec.make_rng()
    gains = config.gains
    stochastic = config.filter_kind == "stoch"
    n = config.landmarks.shape[0]
    m = refs.vectors.shape[0]

    imu_times, w_rows, v_rows, raw_rows = _read_imu(imu_path, m)
    truth_times, truth_poses = _read_truth(truth_path)
    if np.any(np.diff(imu_times) <= 0.0):
        raise DataError(f"{imu_path}: time stamps must strictly increase")
    n_steps = imu_times.shape[0]
    if truth_times.shape[0] != n_steps + 1:
        raise DataError(
            f"{truth_path}: expected {n_steps + 1} truth rows for "
            f"{n_steps} IMU rows, got {truth_times.shape[0]}"
        )
    if np.any(truth_times[:-1] != imu_times):
        raise DataError("truth and IMU time stamps are misaligned")
    steps = np.diff(truth_times)
    gap = TIME_GAP_FACTOR * float(np.median(steps))
    if np.any(steps > gap):
        worst = float(steps.max())
        warnings.warn(
            f"replay stream has a time gap of {worst:.6g} s, more than "
            f"{TIME_GAP_FACTOR:g}x the median step", RuntimeWarning,
        )
    landmark_meas = None
    if landmark_path is not None:
        landmark_meas = _read_landmark_file(landmark_path, imu_times, n)

    est = config.initial_estimate()
    times = np.empty(n_steps)
    metrics = []
    snap_times, snap_truth, snap_est = [], [], []

    for k in range(n_steps):
        t_k = float(imu_times[k])
        dt_k = float(steps[k])
        truth = TrueState(truth_poses[k], config.landmarks)
        vel = Twist(w_rows[k], v_rows[k])
        if landmark_meas is not None:
            y = landmark_meas[k]
        else:
            y = measure_landmarks(truth.pose, config.landmarks, spec, rng)
        try:
            if stochastic:
                if raw_rows is not None:
                    raw = raw_rows[k]
                else:
                    raw = measure_imu_vectors(truth.pose.rotation, refs,
                                              spec, rng)
                ref_dirs, body_dirs, weights = normalize_and_augment(refs, raw)
                frame = MeasurementFrame(
                    t=t_k, velocity_meas=vel,
                    landmark_ids=tuple(range(n)), landmark_meas=y,
                    imu_ref_dirs=ref_dirs, imu_body_dirs=body_dirs,
                    imu_weights=weights,
                )
            else:
                frame = None
            times[k] = t_k
            e_att = _attitude_energy(est.pose_est.rotation, frame) \
                if stochastic else 0.0
            metrics.append(_metrics_row(t_k, truth, est, y, e_att,
                                        config, stochastic))
            if stochastic:
                est = stoch_step(est, frame, gains, dt_k)
            else:
                est = det_step(est, vel, y, gains, dt_k)
        except (UnstableSetError, DivergenceError,
                DegenerateGeometryError) as err:
            raise _wrap_step_error(err, k, t_k) from err
        truth_next = TrueState(truth_poses[k + 1], config.landmarks)
        truth_next, est = _maybe_reorth(k + 1, n_steps, truth_next, est)

        if (k + 1) % config.stride == 0:
            snap_times.append(float(truth_times[k + 1]))
            snap_truth.append(truth_next)
            snap_est.append(est)

    return RunLog(
        config=config,
        times=times,
        metrics=tuple(metrics),
        snap_times=np.array(snap_times),
        snap_truth=tuple(snap_truth),
        snap_est=tuple(snap_est),
    )


def _metrics_header(n: int) -> str:
    cols = ["t", "att_err", "pos_err"]
    cols += [f"lm_err_{i}" for i in range(1, n + 1)]
    cols += [f"e_{i}" for i in range(1, n + 1)]
    cols += ["bw_err_x", "bw_err_y", "bw_err_z",
             "bv_err_x", "bv_err_y", "bv_err_z", "lyap"]
    return ",".join(cols)


def _states_header(n: int) -> str:
    cols = ["t"]
    cols += [f"tr{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    cols += ["tpx", "tpy", "tpz"]
    cols += [f"er{i}{j}" for i in (1, 2, 3) for j in (1, 2, 3)]
    cols += ["epx", "epy", "epz"]
    cols += [f"lm{i}{ax}" for i in range(1, n + 1) for ax in "xyz"]
    cols += ["bwx", "bwy", "bwz", "bvx", "bvy", "bvz", "sgx", "sgy", "sgz"]
    return ",".join(cols)


def metrics_csv_text(log: RunLog) -> str:
    n = log.config.landmarks.shape[0]
    lines = [_metrics_header(n)]
    for m in log.metrics:
        vals = [m.t, m.att_err, m.pos_err, *m.landmark_err, *m.e_norms,
                *m.bias_err, m.lyapunov]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def states_csv_text(log: RunLog) -> str:
    n = log.config.landmarks.shape[0]
    lines = [_states_header(n)]
    for t, truth, est in zip(log.snap_times, log.snap_truth, log.snap_est):
        vals = [t, *truth.pose.rotation.ravel(), *truth.pose.position,
                *est.pose_est.rotation.ravel(), *est.pose_est.position,
                *est.landmark_est.ravel(), *est.bias_est, *est.sigma_est]
        lines.append(",".join(_fmt(v) for v in vals))
    return "\n".join(lines) + "\n"


def write_log(log: RunLog, out_dir) -> None:
    """Emit metrics.csv, states.csv, and config.resolved.toml."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8") as fh:
        fh.write(metrics_csv_text(log))
    with open(os.path.join(out_dir, "states.csv"), "w", encoding="utf-8") as fh:
        fh.write(states_csv_text(log))
    with open(os.path.join(out_dir, "config.resolved.toml"), "w",
              encoding="utf-8") as fh:
        fh.write(toml_dumps(log.config.to_dict()))


def write_inputs(log: RunLog, out_dir) -> None:
    """Emit the measurement streams of a simulation as replayable CSVs."""
    if log.truth_rows is None:
        raise ValueError("this log was replayed from files; no input streams")
    os.makedirs(out_dir, exist_ok=True)
    n = log.config.landmarks.shape[0]
    m = log.config.ref_vectors.shape[0]
    lines = [_TRUTH_HEADER]
    for t, row in zip(log.truth_times, log.truth_rows):
        lines.append(",".join(_fmt(v) for v in (t, *row)))
    with open(os.path.join(out_dir, "truth.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    lines = [_imu_header(m)]
    for k in range(log.times.shape[0]):
        t_k = log.truth_times[k]
        vals = (t_k, *log.velocity_rows[k], *log.imu_raw_rows[k])
        lines.append(",".join(_fmt(v) for v in vals))
    with open(os.path.join(out_dir, "imu.csv"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    lines = [_LANDMARK_HEADER]
    for k in range(log.times.shape[0]):
        t_k = log.truth_times[k]
        for i in range(n):
            vals = (t_k, float(i), *log.landmark_rows[k, i])
            lines.append(",".join(_fmt(v) for v in vals))
    with open(os.path.join(out_dir, "landmarks.csv"), "w",
              encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def _run_one_trial(args):
    config, out_dir = args
    log = run_simulation(config)
    write_log(log, out_dir)
    return out_dir


def run_trials(config: RunConfig, out_dir, trials: int) -> list:
    """Monte-Carlo mode: independent seeded runs in per-trial directories.

    Trial i runs with seed ``config.seed + i`` and writes to
    ``out_dir/trial_<i>``. Trials are independent; they are dispatched to
    a process pool when more than one worker is available.
    """
    if trials < 1:
        raise ConfigError(f"trials must be >= 1, got {trials}")
    jobs = []
    for i in range(trials):
        cfg = dataclasses.replace(config, seed=config.seed + i)
        jobs.append((cfg, os.path.join(out_dir, f"trial_{i:03d}")))
    workers = min(trials, os.cpu_count() or 1)
    if workers > 1:
        try:
            from concurrent.futures import ProcessPoolExecutor
            with ProcessPoolExecutor(max_workers=workers) as pool:
                return list(pool.map(_run_one_trial, jobs))
        except OSError:
            pass   # fall back to in-process execution
    return [_run_one_trial(job) for job in jobs]
