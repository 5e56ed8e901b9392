"""Shared fixtures: seeded generators, rotation samplers, and gain sets."""

from pathlib import Path

import numpy as np
import pytest

from slamobs.filters import Gains

REPO_ROOT = Path(__file__).resolve().parent.parent

# The simulation scenario values used across the suite: body velocities,
# landmark square, reference directions, and velocity-sensor corruption.
OMEGA_TRUE = np.array([0.0, 0.0, 0.3])
V_TRUE = np.array([2.5, 0.0, 0.0])
LANDMARKS = np.array([
    [6.0, 0.0, 0.0],
    [-6.0, 0.0, 0.0],
    [0.0, 6.0, 0.0],
    [0.0, -6.0, 0.0],
])
REF_VECTORS = np.array([[-1.0, 1.0, 1.1], [0.0, 0.0, 1.3]])
BIAS_ANGULAR = np.array([0.1, -0.1, -0.1])
BIAS_TRANSLATIONAL = np.array([0.08, 0.07, -0.06])


def make_gains(n_landmarks=4, **overrides):
    """Baseline gain set; override single fields per test."""
    values = dict(
        k1=10.0, k2=10.0, k3=10.0, k_b=1e-13, k_sigma=0.02,
        gamma1=3.0, gamma2=10000.0, gamma_sigma=10.0,
        alpha=np.full(n_landmarks, 0.05), varrho=0.5,
        k_w=0.005, k_p=2.5, gamma_det=0.12,
    )
    values.update(overrides)
    return Gains(**values)


def qr_rotation(rng):
    """Random rotation via QR of a Gaussian matrix (independent of exp_so3)."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0.0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def gains():
    return make_gains()


@pytest.fixture(scope="session")
def paper_toml():
    return REPO_ROOT / "scenarios" / "paper_sim.toml"


@pytest.fixture(scope="session")
def replay_toml():
    return REPO_ROOT / "scenarios" / "replay_demo.toml"
