"""Measurement message schemas, residual functions and factor Jacobians.

Four factor families feed the graph: priors on each agent's first pose,
relative-pose odometry between consecutive keyframes, scalar inter-agent
ranges and scalar agent-to-anchor ranges.  Message invariants are enforced at
construction so invalid measurements cannot enter a graph.

Sign/perturbation conventions (shared by the solver):
  * residual linearization uses right perturbation, pose <- compose(pose, exp(xi));
  * odometry residual is log(Z * S_i * S_j^-1), zero iff Z = S_j * S_i^-1;
  * prior residual is log(prior * pose^-1);
  * range residual is measured - ||position_a - position_b||.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import sim3
from .errors import CoincidentPositions, NonSPDInformation
from .sim3 import Sim3Pose

# Below this separation the range direction, and hence the Jacobian, is
# undefined; such factors are skipped by the graph with a warning.
MIN_RANGE_SEPARATION = 1e-9


def _check_range_fields(timestamp: float, range_m: float, variance: float):
    if not math.isfinite(timestamp):
        raise ValueError("timestamp must be finite")
    if not (math.isfinite(range_m) and range_m >= 0.0):
        raise ValueError("range must be finite and nonnegative")
    if not (math.isfinite(variance) and variance > 0.0):
        raise ValueError("variance must be finite and positive")


def _check_spd(m: np.ndarray, dim: int, what: str) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.shape != (dim, dim):
        raise NonSPDInformation(f"{what}: expected {dim}x{dim}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NonSPDInformation(f"{what}: matrix has non-finite entries")
    if np.max(np.abs(m - m.T)) > 1e-9:
        raise NonSPDInformation(f"{what}: matrix is not symmetric")
    try:
        np.linalg.cholesky(m)
    except np.linalg.LinAlgError as e:
        raise NonSPDInformation(f"{what}: matrix is not positive definite") from e
    return m


@dataclass(frozen=True, eq=False)
class KeyframeMsg:
    """A keyframe pose estimate in the shared global frame, with uncertainty."""

    agent_id: int
    timestamp: float
    pose: Sim3Pose
    covariance: np.ndarray  # 7x7 SPD, twist coordinates

    def __post_init__(self):
        if self.agent_id < 0:
            raise ValueError("agent_id must be nonnegative")
        if not math.isfinite(self.timestamp):
            raise ValueError("timestamp must be finite")
        cov = _check_spd(self.covariance, 7, "keyframe covariance")
        object.__setattr__(self, "covariance", cov)


@dataclass(frozen=True)
class InterRangeMsg:
    """Range between two agents' onboard radio modules."""

    agent_a: int
    agent_b: int
    timestamp: float
    range_m: float
    variance: float

    def __post_init__(self):
        if not self.agent_a < self.agent_b:
            raise ValueError("inter-agent range requires agent_a < agent_b")
        _check_range_fields(self.timestamp, self.range_m, self.variance)


@dataclass(frozen=True)
class AnchorRangeMsg:
    """Range between an agent and a fixed anchor station."""

    agent_id: int
    anchor_id: int
    timestamp: float
    range_m: float
    variance: float

    def __post_init__(self):
        _check_range_fields(self.timestamp, self.range_m, self.variance)


@dataclass(frozen=True, eq=False)
class OdometryEdge:
    """Measured relative motion between two consecutive keyframes of one agent."""

    agent_id: int
    timestamp_i: float
    timestamp_j: float
    relative_pose: Sim3Pose
    information: np.ndarray  # 7x7 SPD

    def __post_init__(self):
        if not self.timestamp_i < self.timestamp_j:
            raise ValueError("odometry edge must run forward in time")
        info = _check_spd(self.information, 7, "odometry information")
        object.__setattr__(self, "information", info)


@dataclass(frozen=True, eq=False)
class PriorFactor:
    """Absolute pose prior, attached to an agent's first keyframe."""

    agent_id: int
    timestamp: float
    prior_pose: Sim3Pose
    information: np.ndarray  # 7x7 SPD

    def __post_init__(self):
        info = _check_spd(self.information, 7, "prior information")
        object.__setattr__(self, "information", info)


def range_residual(pose_a: Sim3Pose, pose_b: Sim3Pose, measured: float) -> float:
    """measured - ||position(pose_a) - position(pose_b)||."""
    return range_residual_to_point(pose_a, pose_b.position, measured)


def range_residual_to_point(
    pose_a: Sim3Pose, point_b: np.ndarray, measured: float
) -> float:
    """Range residual against a fixed point (anchor form)."""
    d = float(np.linalg.norm(pose_a.position - np.asarray(point_b, dtype=float)))
    if d < MIN_RANGE_SEPARATION:
        raise CoincidentPositions(f"endpoints separated by only {d:.3e} m")
    return float(measured) - d


def odometry_residual(pose_i: Sim3Pose, pose_j: Sim3Pose, z: Sim3Pose) -> np.ndarray:
    """Twist of the odometry error matrix, log(Z * S_i * S_j^-1)."""
    return sim3.log(sim3.compose(z, sim3.compose(pose_i, sim3.inverse(pose_j))))


def prior_residual(pose: Sim3Pose, prior: Sim3Pose) -> np.ndarray:
    """Twist of the prior error matrix, log(prior * pose^-1)."""
    return sim3.log(sim3.compose(prior, sim3.inverse(pose)))


def _position_jacobian(pose: Sim3Pose) -> np.ndarray:
    """3x7 derivative of position(compose(pose, exp(xi))) at xi = 0.

    Position is s*t, which under right perturbation moves only with the
    translational twist block: d position / d u = s * R.
    """
    j = np.zeros((3, 7))
    j[:, 3:6] = pose.scale * pose.rotation
    return j


def range_jacobian(
    pose_a: Sim3Pose, pose_b: Sim3Pose
) -> tuple[np.ndarray, np.ndarray]:
    """1x7 residual Jacobians w.r.t. right perturbations of both endpoint poses."""
    diff = pose_a.position - pose_b.position
    d = float(np.linalg.norm(diff))
    if d < MIN_RANGE_SEPARATION:
        raise CoincidentPositions(f"endpoints separated by only {d:.3e} m")
    n = diff / d
    ja = -(n @ _position_jacobian(pose_a)).reshape(1, 7)
    jb = (n @ _position_jacobian(pose_b)).reshape(1, 7)
    return ja, jb


def anchor_range_jacobian(pose_a: Sim3Pose, point_b: np.ndarray) -> np.ndarray:
    """1x7 residual Jacobian of the anchor-range residual w.r.t. the agent pose."""
    diff = pose_a.position - np.asarray(point_b, dtype=float)
    d = float(np.linalg.norm(diff))
    if d < MIN_RANGE_SEPARATION:
        raise CoincidentPositions(f"endpoints separated by only {d:.3e} m")
    n = diff / d
    return -(n @ _position_jacobian(pose_a)).reshape(1, 7)


def odometry_jacobians(
    pose_i: Sim3Pose, pose_j: Sim3Pose, z: Sim3Pose
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(residual, 7x7 d r/d xi_i, 7x7 d r/d xi_j).

    With r = log(Z S_i S_j^-1), a right perturbation of S_i enters as
    E * exp(Adj(S_j) xi), giving d r/d xi_i = invJr(r) @ Adj(S_j); the S_j
    perturbation enters with the opposite sign.
    """
    r = odometry_residual(pose_i, pose_j, z)
    core = sim3.inv_right_jacobian(r) @ sim3.adjoint(pose_j)
    return r, core, -core


def prior_jacobian(pose: Sim3Pose, prior: Sim3Pose) -> tuple[np.ndarray, np.ndarray]:
    """(residual, 7x7 d r/d xi) for the prior factor."""
    r = prior_residual(pose, prior)
    return r, -(sim3.inv_right_jacobian(r) @ sim3.adjoint(pose))


def whiten(residual: np.ndarray | float, information: np.ndarray | float):
    """Weighted residual and scalar cost contribution r^T W r.

    Returns:
        (whitened, cost): whitened = L^T r for W = L L^T, so that
        ||whitened||^2 == cost.

    Raises:
        NonSPDInformation: weight matrix fails the Cholesky test.
    """
    r = np.atleast_1d(np.asarray(residual, dtype=float))
    w = np.asarray(information, dtype=float)
    if w.ndim == 0:
        w = w.reshape(1, 1)
    w = _check_spd(w, r.shape[0], "information")
    chol = np.linalg.cholesky(w)
    whitened = chol.T @ r
    return whitened, float(whitened @ whitened)


def diagonal_information(variances: np.ndarray, floor: float = 0.0) -> np.ndarray:
    """Inverse of a diagonal covariance, with an optional variance floor."""
    v = np.maximum(np.asarray(variances, dtype=float), floor)
    if np.any(v <= 0.0):
        raise NonSPDInformation("variances must be positive (or floored)")
    return np.diag(1.0 / v)


def scalar_information(variance: float, floor: float = 0.0) -> float:
    v = max(float(variance), floor)
    if v <= 0.0:
        raise NonSPDInformation("variance must be positive (or floored)")
    return 1.0 / v


def finite_difference_jacobian(residual_fn, poses, step: float = 1e-6):
    """Central finite differences of a residual w.r.t. right pose perturbations.

    Args:
        residual_fn: callable taking the list of poses, returning a residual
            (scalar or vector).
        poses: linearization-point poses.
        step: per-coordinate perturbation.

    Returns:
        List of (m x 7) arrays, one per pose.
    """
    blocks = []
    for k, pose in enumerate(poses):
        cols = []
        for c in range(7):
            delta = np.zeros(7)
            delta[c] = step
            plus = list(poses)
            plus[k] = sim3.compose(pose, sim3.exp(delta))
            minus = list(poses)
            minus[k] = sim3.compose(pose, sim3.exp(-delta))
            rp = np.atleast_1d(np.asarray(residual_fn(plus), dtype=float))
            rm = np.atleast_1d(np.asarray(residual_fn(minus), dtype=float))
            cols.append((rp - rm) / (2.0 * step))
        blocks.append(np.stack(cols, axis=1))
    return blocks


def random_spd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    """Random SPD matrix, handy for tests: L L^T + eps*I."""
    l = rng.normal(size=(dim, dim)) * math.sqrt(scale)
    return l @ l.T + 0.1 * scale * np.eye(dim)
