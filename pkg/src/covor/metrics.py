"""Trajectory evaluation: absolute position error and scale error series.

Estimates and references are compared on matched timestamps.  The default is
no alignment: the fusion runs in an anchored global frame (priors and anchor
ranges fix the gauge), so errors are meaningful without trajectory fitting.
A rigid first-pose alignment is offered for externally produced estimates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TimestampMismatch
from .sim3 import SE3Pose, Sim3Pose

TIMESTAMP_TOL = 1e-6


@dataclass(frozen=True)
class PoseTrack:
    """Timestamped positions with orientation and scale, for evaluation."""

    timestamps: np.ndarray  # (N,)
    positions: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 3, 3)
    scales: np.ndarray  # (N,)

    def __len__(self) -> int:
        return len(self.timestamps)

    @staticmethod
    def from_sim3(items: list[tuple[float, Sim3Pose]]) -> "PoseTrack":
        ts = np.array([t for t, _ in items], dtype=float)
        return PoseTrack(
            timestamps=ts,
            positions=np.array([p.position for _, p in items]),
            rotations=np.array([p.rotation for _, p in items]),
            scales=np.array([p.scale for _, p in items]),
        )

    @staticmethod
    def from_se3(
        items: list[tuple[float, SE3Pose]], scales: np.ndarray | None = None
    ) -> "PoseTrack":
        ts = np.array([t for t, _ in items], dtype=float)
        sc = np.ones(len(items)) if scales is None else np.asarray(scales, float)
        return PoseTrack(
            timestamps=ts,
            positions=np.array([p.translation * s for (_, p), s in zip(items, sc)]),
            rotations=np.array([p.rotation for _, p in items]),
            scales=sc,
        )


def _check_matched(est: PoseTrack, truth: PoseTrack):
    if len(est) != len(truth):
        raise TimestampMismatch(
            f"trajectories have {len(est)} and {len(truth)} poses"
        )
    if len(est) and np.max(np.abs(est.timestamps - truth.timestamps)) > TIMESTAMP_TOL:
        raise TimestampMismatch("trajectories do not share timestamps")


def _aligned_positions(
    est: PoseTrack, truth: PoseTrack, alignment: str
) -> np.ndarray:
    if alignment == "none":
        return est.positions
    if alignment == "rigid-first-pose":
        # Rigid transform mapping the estimated first pose onto the true one.
        r_align = truth.rotations[0] @ est.rotations[0].T
        t_align = truth.positions[0] - r_align @ est.positions[0]
        return est.positions @ r_align.T + t_align
    raise ValueError(f"unknown alignment: {alignment}")


def position_error_series(
    est: PoseTrack, truth: PoseTrack, alignment: str = "none"
) -> np.ndarray:
    """Per-keyframe position error magnitudes against the reference."""
    _check_matched(est, truth)
    aligned = _aligned_positions(est, truth, alignment)
    return np.linalg.norm(aligned - truth.positions, axis=1)


def ate_rmse(est: PoseTrack, truth: PoseTrack, alignment: str = "none") -> float:
    """Root-mean-square of the per-keyframe position errors."""
    err = position_error_series(est, truth, alignment)
    return float(np.sqrt(np.mean(err**2)))


def scale_error_series(est: PoseTrack, truth: PoseTrack) -> np.ndarray:
    """Per-keyframe relative scale error |s_est / s_true - 1|."""
    _check_matched(est, truth)
    return np.abs(est.scales / truth.scales - 1.0)


def pooled_rmse(error_series: list[np.ndarray]) -> float:
    """RMSE over the concatenation of several per-agent error series."""
    if not error_series:
        return 0.0
    allerr = np.concatenate(error_series)
    return float(np.sqrt(np.mean(allerr**2)))
