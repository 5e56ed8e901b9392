"""Landmark-based pose observers with bias and noise adaptation.

The package splits into:

- :mod:`slamobs.manifold`: rotations, poses, and the matrix-group
  operations (exp/log-free integration, projections, error measures).
- :mod:`slamobs.scenario`: ground-truth motion, measurement models, and
  their corruption by bias and noise.
- :mod:`slamobs.filters`: the deterministic landmark observer and the
  stochastic observer with bias and noise-level adaptation.
- :mod:`slamobs.metrics`: per-step error measures, Lyapunov values, and
  run-level scoring.
- :mod:`slamobs.harness`: TOML run configs, the simulation loop, dataset
  replay, and CSV/TOML output.
- :mod:`slamobs.cli`: the ``slamobs`` command-line front end.
"""

from .filters import (
    DivergenceError,
    FilterState,
    Gains,
    InnovationBundle,
    UnstableSetError,
    attitude_innovation,
    det_step,
    innovation_bundle,
    landmark_innovation,
    stoch_adaptation,
    stoch_correction,
    stoch_step,
)
from .harness import (
    ConfigError,
    DataError,
    RunConfig,
    RunLog,
    load_config,
    replay_dataset,
    run_simulation,
    run_trials,
    write_inputs,
    write_log,
)
from .manifold import (
    Pose,
    Twist,
    antisym_project,
    attitude_distance,
    exp_so3,
    integrate_pose,
    pose_matrix,
    reorthonormalize,
    se3_inverse,
    skew,
    upsilon,
    vex,
    wedge,
)
from .metrics import (
    RunScore,
    StepMetrics,
    landmark_consistency,
    lyapunov_det,
    lyapunov_stoch,
    pose_error,
    score_run,
)
from .scenario import (
    DegenerateGeometryError,
    InertialReferences,
    MeasurementFrame,
    NoiseSpec,
    TrueState,
    make_frame,
    measure_imu_vectors,
    measure_landmarks,
    measure_velocity,
    normalize_and_augment,
    propagate_truth,
)

__version__ = "0.1.0"
