"""Swarm scenario construction and measurement synthesis.

Builds multi-agent scenarios from trajectory files (or a synthetic path
generator), splits one trajectory into contiguous equal-length segments so K
agents "travel simultaneously", then synthesizes drifting visual-odometry
edges and radio range measurements with a UWB-style error model:

    error = b_sys(theta1, theta2, d) + b_multipath + eta

where b_sys is a low-order polynomial in the cosines of the angles between
the line of sight and each endpoint's body x-axis plus linear/quadratic
distance terms, b_multipath is a per-link random walk advanced once per
emitted sample, and eta is zero-mean Gaussian.  Links further apart than
max_range emit nothing.

Every stream is drawn from a counter-based generator (Philox) keyed by
(seed, stream label), so per-link streams are independent and replayable
regardless of emission order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from . import sim3
from .errors import ParseError, TooFewPoses
from .measurements import (
    AnchorRangeMsg,
    InterRangeMsg,
    KeyframeMsg,
    OdometryEdge,
    PriorFactor,
)
from .sim3 import SE3Pose, Sim3Pose

DEFAULT_MAX_RANGE = 200.0
# Two timestamps closer than this are the same ranging epoch.
EPOCH_TOL = 1e-6


def stream_rng(seed: int, *labels) -> np.random.Generator:
    """Independent, replayable generator for one named stream.

    Philox is counter-based; keying it through SeedSequence with the stream
    labels decouples streams from each other and from emission order.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for lab in labels:
        if isinstance(lab, str):
            entropy.extend(lab.encode("utf-8"))
        else:
            entropy.append(int(lab) & 0xFFFFFFFFFFFFFFFF)
    ss = np.random.SeedSequence(entropy)
    return np.random.Generator(np.random.Philox(key=ss.generate_state(2, np.uint64)))


@dataclass(frozen=True)
class SystematicBias:
    """Polynomial ranging bias over (cos theta1, cos theta2, distance).

    b = c0 + c_cos1*cos(t1) + c_cos1_sq*cos(t1)^2
           + c_cos2*cos(t2) + c_cos2_sq*cos(t2)^2
           + c_d*d + c_d_sq*d^2

    The default coefficients span roughly -0.4..+0.4 m over antenna
    orientations and distances up to the 200 m cutoff.  Anchors are treated
    as isotropic: their cosine terms are evaluated at 0.
    """

    c0: float = 0.1
    c_cos1: float = -0.12
    c_cos1_sq: float = 0.06
    c_cos2: float = -0.12
    c_cos2_sq: float = 0.06
    c_d: float = 5.0e-4
    c_d_sq: float = -1.25e-6

    def evaluate(self, cos1: float, cos2: float, d: float) -> float:
        return (
            self.c0
            + self.c_cos1 * cos1
            + self.c_cos1_sq * cos1 * cos1
            + self.c_cos2 * cos2
            + self.c_cos2_sq * cos2 * cos2
            + self.c_d * d
            + self.c_d_sq * d * d
        )


@dataclass(frozen=True)
class RangingNoiseConfig:
    """Radio ranging error model parameters."""

    sigma_eta: float = 0.1  # zero-mean Gaussian std, meters
    multipath_step_sigma: float = 0.01  # random-walk increment std per sample
    systematic_bias: SystematicBias | None = None
    min_variance: float = 1e-10  # floor for the *reported* variance

    def __post_init__(self):
        if self.sigma_eta < 0.0 or self.multipath_step_sigma < 0.0:
            raise ValueError("noise sigmas must be nonnegative")

    @property
    def reported_variance(self) -> float:
        # Bias is deliberately not reflected here: receivers weight ranges as
        # if errors were zero-mean Gaussian.
        return max(self.sigma_eta**2, self.min_variance)


@dataclass(frozen=True)
class OdometryNoiseConfig:
    """Visual-odometry noise: per-edge rotation/translation plus scale drift.

    In monocular mode (scale_drift_std > 0) each edge carries an independent
    log-scale increment, so the dead-reckoned scale is a log-normal random
    walk.  Stereo mode sets scale_drift_std = 0.
    """

    rot_std: float = 0.002  # rad per edge, per axis
    trans_std_per_m: float = 0.02  # meters of noise per meter traveled
    scale_drift_std: float = 0.004  # log-scale increment std per edge
    min_variance: float = 1e-10  # floor for reported edge covariances

    def __post_init__(self):
        if min(self.rot_std, self.trans_std_per_m, self.scale_drift_std) < 0.0:
            raise ValueError("noise stds must be nonnegative")


@dataclass(frozen=True)
class AgentTrack:
    """One agent's ground truth: timestamps, rigid poses, true scale path."""

    agent_id: int
    timestamps: np.ndarray  # (N,), strictly increasing, mission clock
    poses: tuple[SE3Pose, ...]  # (N,)
    true_scales: np.ndarray  # (N,), metric ground truth has scale 1

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype=float)
        if np.any(np.diff(ts) <= 0.0):
            raise ValueError("timestamps must be strictly increasing")
        sc = np.asarray(self.true_scales, dtype=float)
        if len(self.poses) != ts.shape[0] or sc.shape[0] != ts.shape[0]:
            raise ValueError("timestamps, poses and scales must align")
        object.__setattr__(self, "timestamps", ts)
        object.__setattr__(self, "true_scales", sc)

    def __len__(self) -> int:
        return len(self.poses)

    def true_sim3(self, k: int) -> Sim3Pose:
        return sim3.lift_se3(self.poses[k], float(self.true_scales[k]))

    def position(self, k: int) -> np.ndarray:
        return self.true_sim3(k).position


@dataclass(frozen=True)
class SwarmScenario:
    """Ground-truth swarm layout plus noise configuration defaults."""

    agents: tuple[AgentTrack, ...]
    anchors: dict[int, np.ndarray] = field(default_factory=dict)
    max_range: float = DEFAULT_MAX_RANGE
    odometry_noise: OdometryNoiseConfig = field(default_factory=OdometryNoiseConfig)
    ranging_noise: RangingNoiseConfig = field(default_factory=RangingNoiseConfig)
    seed: int = 0

    def __post_init__(self):
        if not self.max_range > 0.0:
            raise ValueError("max_range must be positive")
        anchors = {
            int(a): np.asarray(p, dtype=float).reshape(3)
            for a, p in self.anchors.items()
        }
        object.__setattr__(self, "anchors", anchors)


# ---------------------------------------------------------------------------
# Trajectory files


def _parse_kitti_line(parts: list[str], lineno: int) -> SE3Pose:
    if len(parts) != 12:
        raise ParseError(f"expected 12 values, got {len(parts)}", lineno)
    try:
        vals = np.array([float(p) for p in parts])
    except ValueError as e:
        raise ParseError(str(e), lineno) from e
    m = vals.reshape(3, 4)
    return _se3_from_parts(m[:, :3], m[:, 3], lineno)


def _se3_from_parts(r: np.ndarray, t: np.ndarray, lineno: int) -> SE3Pose:
    drift = sim3.rotation_drift(r)
    if drift > 0.5 or np.linalg.det(r) <= 0.0:
        raise ParseError("rotation block is not close to orthonormal", lineno)
    if drift > 1e-3:
        warnings.warn(
            f"line {lineno}: rotation deviates from orthonormal by {drift:.2e}; "
            "re-orthonormalized"
        )
    if drift > 1e-9:
        r = sim3.project_rotation(r)
    return SE3Pose(r, t)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Unit quaternion (qx, qy, qz, qw) to rotation matrix."""
    x, y, z, w = q
    n = math.sqrt(x * x + y * y + z * z + w * w)
    if n == 0.0:
        raise ValueError("zero quaternion")
    x, y, z, w = x / n, y / n, z / n, w / n
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def rotation_to_quaternion(r: np.ndarray) -> np.ndarray:
    """Rotation matrix to unit quaternion (qx, qy, qz, qw), qw >= 0."""
    t = np.trace(r)
    if t > 0.0:
        w = math.sqrt(1.0 + t) / 2.0
        x = (r[2, 1] - r[1, 2]) / (4.0 * w)
        y = (r[0, 2] - r[2, 0]) / (4.0 * w)
        z = (r[1, 0] - r[0, 1]) / (4.0 * w)
    else:
        i = int(np.argmax(np.diag(r)))
        j, k = (i + 1) % 3, (i + 2) % 3
        s = math.sqrt(max(1.0 + r[i, i] - r[j, j] - r[k, k], 0.0)) * 2.0
        q = np.zeros(4)
        q[i] = s / 4.0
        q[3] = (r[k, j] - r[j, k]) / s
        q[j] = (r[j, i] + r[i, j]) / s
        q[k] = (r[k, i] + r[i, k]) / s
        x, y, z, w = q
    q = np.array([x, y, z, w])
    if w < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def ingest_trajectory(
    path, fmt: str, rate_hz: float = 10.0
) -> list[tuple[float, SE3Pose]]:
    """Load a trajectory file.

    Formats:
      * "kitti-pose": 12 floats per line, row-major 3x4 [R|t]; timestamps are
        synthesized at `rate_hz`.
      * "tum-trajectory": "t tx ty tz qx qy qz qw" per line, '#' comments.

    Raises:
        ParseError: malformed line (reported with its line number).
    """
    out: list[tuple[float, SE3Pose]] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if fmt == "kitti-pose":
                pose = _parse_kitti_line(parts, lineno)
                out.append(((len(out)) / rate_hz, pose))
            elif fmt == "tum-trajectory":
                if len(parts) != 8:
                    raise ParseError(f"expected 8 values, got {len(parts)}", lineno)
                try:
                    vals = [float(p) for p in parts]
                except ValueError as e:
                    raise ParseError(str(e), lineno) from e
                q = np.array(vals[4:8])
                if abs(np.linalg.norm(q) - 1.0) > 1e-3:
                    warnings.warn(
                        f"line {lineno}: quaternion norm off by "
                        f"{abs(np.linalg.norm(q) - 1.0):.2e}; normalized"
                    )
                r = quaternion_to_rotation(q)
                out.append((vals[0], _se3_from_parts(r, np.array(vals[1:4]), lineno)))
            else:
                raise ValueError(f"unknown trajectory format: {fmt}")
    return out


def export_trajectory(path, items: list[tuple[float, SE3Pose]], fmt: str = "tum-trajectory"):
    """Write a trajectory file (TUM by default, or KITTI 3x4 rows)."""
    with open(path, "w", encoding="utf-8") as f:
        for t, pose in items:
            if fmt == "tum-trajectory":
                q = rotation_to_quaternion(pose.rotation)
                tr = pose.translation
                f.write(
                    f"{t:.9f} {tr[0]:.12f} {tr[1]:.12f} {tr[2]:.12f} "
                    f"{q[0]:.15f} {q[1]:.15f} {q[2]:.15f} {q[3]:.15f}\n"
                )
            elif fmt == "kitti-pose":
                m = np.hstack([pose.rotation, pose.translation.reshape(3, 1)])
                f.write(" ".join(f"{v:.15e}" for v in m.ravel()) + "\n")
            else:
                raise ValueError(f"unknown trajectory format: {fmt}")


# ---------------------------------------------------------------------------
# Scenario construction


def path_length(items: list[tuple[float, SE3Pose]]) -> float:
    pos = np.array([p.translation for _, p in items])
    if len(pos) < 2:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(pos, axis=0), axis=1)))


def split_swarm(
    traj: list[tuple[float, SE3Pose]],
    k: int,
    mode: str = "contiguous-equal-length",
    **scenario_kwargs,
) -> SwarmScenario:
    """Split one trajectory into K contiguous segments of near-equal length.

    Segments partition the pose list (each pose belongs to exactly one
    agent); cut points are the first poses whose cumulative arc length
    crosses each equal-length target.  Every agent's timestamps are re-based
    to a mission clock starting at 0, so the agents travel simultaneously.

    Raises:
        TooFewPoses: fewer poses than agents.
    """
    if mode != "contiguous-equal-length":
        raise ValueError(f"unknown split mode: {mode}")
    if k < 1:
        raise ValueError("agent count must be >= 1")
    if len(traj) < k:
        raise TooFewPoses(f"{len(traj)} poses cannot be split {k} ways")
    pos = np.array([p.translation for _, p in traj])
    seg = np.linalg.norm(np.diff(pos, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    cuts = [0]
    for j in range(1, k):
        target = total * j / k
        c = int(np.searchsorted(cum, target))
        cuts.append(max(c, cuts[-1] + 1))
    cuts.append(len(traj))

    agents = []
    for a in range(k):
        chunk = traj[cuts[a] : cuts[a + 1]]
        t0 = chunk[0][0]
        agents.append(
            AgentTrack(
                agent_id=a + 1,
                timestamps=np.array([t - t0 for t, _ in chunk]),
                poses=tuple(p for _, p in chunk),
                true_scales=np.ones(len(chunk)),
            )
        )
    return SwarmScenario(agents=tuple(agents), **scenario_kwargs)


def synthetic_trajectory(
    keyframes: int = 80,
    dt: float = 1.0,
    radius: float = 60.0,
    climb: float = 2.0,
    laps: float = 1.0,
) -> list[tuple[float, SE3Pose]]:
    """Smooth circular test path with the body x-axis along the velocity.

    Samples are phase-shifted by half a step so no keyframe heading lands
    exactly on a rotation of pi from the world frame (such poses have no
    principal-branch twist and could not be wire-encoded).
    """
    items = []
    for i in range(keyframes):
        ang = 2.0 * math.pi * laps * (i + 0.5) / keyframes
        p = np.array(
            [radius * math.cos(ang), radius * math.sin(ang), climb * math.sin(2 * ang)]
        )
        fwd = np.array([-math.sin(ang), math.cos(ang), 0.0])
        up = np.array([0.0, 0.0, 1.0])
        left = np.cross(up, fwd)
        r = sim3.project_rotation(np.column_stack([fwd, left, up]))
        items.append((i * dt, SE3Pose(r, p)))
    return items


# ---------------------------------------------------------------------------
# Measurement synthesis


def true_relative_motion(track: AgentTrack, k: int) -> Sim3Pose:
    """Relative similarity motion S_{k+1} * S_k^-1 of the ground truth."""
    return sim3.compose(track.true_sim3(k + 1), sim3.inverse(track.true_sim3(k)))


def generate_odometry(
    scenario: SwarmScenario,
    cfg: OdometryNoiseConfig | None = None,
    seed: int | None = None,
) -> dict[int, list[OdometryEdge]]:
    """Per-agent noisy odometry edges.

    Each measured edge is compose(exp(xi_noise), true relative motion), with
    rotation and log-scale noise drawn per edge and translation noise scaled
    by the edge length.  Information matrices are the inverses of the
    generating (floored) variances.  Deterministic given (scenario, cfg,
    seed).
    """
    cfg = cfg or scenario.odometry_noise
    seed = scenario.seed if seed is None else seed
    out: dict[int, list[OdometryEdge]] = {}
    for track in scenario.agents:
        rng = stream_rng(seed, "odometry", track.agent_id)
        n_edges = len(track) - 1
        noise = rng.normal(size=(max(n_edges, 1), 7))
        edges = []
        for k in range(n_edges):
            z_true = true_relative_motion(track, k)
            length = float(np.linalg.norm(z_true.position))
            sig = np.array(
                [cfg.rot_std] * 3
                + [cfg.trans_std_per_m * length] * 3
                + [cfg.scale_drift_std]
            )
            xi = noise[k] * sig
            z = sim3.compose(sim3.exp(xi), z_true)
            variances = np.maximum(sig**2, cfg.min_variance)
            edges.append(
                OdometryEdge(
                    agent_id=track.agent_id,
                    timestamp_i=float(track.timestamps[k]),
                    timestamp_j=float(track.timestamps[k + 1]),
                    relative_pose=z,
                    information=np.diag(1.0 / variances),
                )
            )
        out[track.agent_id] = edges
    return out


def dead_reckon(
    track: AgentTrack,
    edges: list[OdometryEdge],
    initial_pose: Sim3Pose | None = None,
) -> list[Sim3Pose]:
    """Integrate odometry edges from the first (true) pose: S_j = Z * S_i."""
    pose = initial_pose if initial_pose is not None else track.true_sim3(0)
    chain = [pose]
    for e in edges:
        pose = sim3.compose(e.relative_pose, pose)
        chain.append(pose)
    return chain


def keyframe_messages(
    track: AgentTrack,
    edges: list[OdometryEdge],
    initial_pose: Sim3Pose | None = None,
    initial_covariance: np.ndarray | None = None,
) -> list[KeyframeMsg]:
    """Dead-reckoned keyframe messages with additively accumulated covariance."""
    chain = dead_reckon(track, edges, initial_pose)
    cov = (
        np.asarray(initial_covariance, dtype=float)
        if initial_covariance is not None
        else 1e-8 * np.eye(7)
    )
    msgs = [
        KeyframeMsg(track.agent_id, float(track.timestamps[0]), chain[0], cov.copy())
    ]
    for k, e in enumerate(edges):
        cov = cov + np.linalg.inv(e.information)
        msgs.append(
            KeyframeMsg(
                track.agent_id, float(track.timestamps[k + 1]), chain[k + 1], cov.copy()
            )
        )
    return msgs


def default_priors(
    scenario: SwarmScenario,
    first_agent_sigma: float = 1e-4,
    other_rot_sigma: float = 0.01,
    other_trans_sigma: float = 0.1,
    other_scale_sigma: float = 0.01,
) -> list[PriorFactor]:
    """Prior factors at each agent's first true pose.

    The lowest-numbered agent gets a very tight prior (it defines the gauge);
    the others get priors reflecting initial frame-alignment uncertainty.
    """
    priors = []
    first = min(t.agent_id for t in scenario.agents)
    for track in scenario.agents:
        if track.agent_id == first:
            info = np.eye(7) / first_agent_sigma**2
        else:
            sig = np.array(
                [other_rot_sigma] * 3 + [other_trans_sigma] * 3 + [other_scale_sigma]
            )
            info = np.diag(1.0 / sig**2)
        priors.append(
            PriorFactor(
                agent_id=track.agent_id,
                timestamp=float(track.timestamps[0]),
                prior_pose=track.true_sim3(0),
                information=info,
            )
        )
    return priors


def _body_axis(pose: SE3Pose) -> np.ndarray:
    # Antenna boresight: the body x-axis.
    return pose.rotation[:, 0]


def _los_cosines(
    pos_a: np.ndarray,
    pos_b: np.ndarray,
    axis_a: np.ndarray | None,
    axis_b: np.ndarray | None,
) -> tuple[float, float, float]:
    los = pos_b - pos_a
    d = float(np.linalg.norm(los))
    if d == 0.0:
        return 0.0, 0.0, 0.0
    u = los / d
    cos1 = float(axis_a @ u) if axis_a is not None else 0.0
    cos2 = float(axis_b @ -u) if axis_b is not None else 0.0
    return cos1, cos2, d


def _epoch_pairs(
    ta: np.ndarray, tb: np.ndarray
) -> list[tuple[int, int, float]]:
    """Indices of matching mission timestamps between two agents."""
    out = []
    j = 0
    for i, t in enumerate(ta):
        while j < len(tb) and tb[j] < t - EPOCH_TOL:
            j += 1
        if j < len(tb) and abs(tb[j] - t) <= EPOCH_TOL:
            out.append((i, j, float(t)))
    return out


def generate_ranges(
    scenario: SwarmScenario,
    cfg: RangingNoiseConfig | None = None,
    seed: int | None = None,
) -> tuple[list[InterRangeMsg], list[AnchorRangeMsg]]:
    """Range messages for every link and epoch within the range cutoff.

    One candidate range per shared keyframe timestamp per link.  The emitted
    range is true distance + b_sys + multipath walk + eta; the reported
    variance is sigma_eta^2 only (the generator's bias is deliberately not
    reflected, mirroring how receivers weight biased radio ranges).
    Deterministic given (scenario, cfg, seed).
    """
    cfg = cfg or scenario.ranging_noise
    seed = scenario.seed if seed is None else seed
    inter: list[InterRangeMsg] = []
    anchor: list[AnchorRangeMsg] = []
    tracks = sorted(scenario.agents, key=lambda t: t.agent_id)

    def emitted_errors(n: int, *labels) -> np.ndarray:
        if n == 0:
            return np.zeros(0)
        walk_rng = stream_rng(seed, "multipath", *labels)
        eta_rng = stream_rng(seed, "eta", *labels)
        walk = np.cumsum(walk_rng.normal(0.0, cfg.multipath_step_sigma, size=n))
        eta = eta_rng.normal(0.0, cfg.sigma_eta, size=n)
        return walk + eta

    for ia, ta in enumerate(tracks):
        for tb in tracks[ia + 1 :]:
            pairs = _epoch_pairs(ta.timestamps, tb.timestamps)
            samples = []
            for i, j, t in pairs:
                cos1, cos2, d = _los_cosines(
                    ta.position(i),
                    tb.position(j),
                    _body_axis(ta.poses[i]),
                    _body_axis(tb.poses[j]),
                )
                if d > scenario.max_range:
                    continue
                bias = (
                    cfg.systematic_bias.evaluate(cos1, cos2, d)
                    if cfg.systematic_bias
                    else 0.0
                )
                samples.append((t, d, bias))
            errors = emitted_errors(len(samples), ta.agent_id, tb.agent_id)
            for (t, d, bias), err in zip(samples, errors):
                inter.append(
                    InterRangeMsg(
                        agent_a=ta.agent_id,
                        agent_b=tb.agent_id,
                        timestamp=t,
                        range_m=max(d + bias + err, 0.0),
                        variance=cfg.reported_variance,
                    )
                )

    for ta in tracks:
        for aid in sorted(scenario.anchors):
            apos = scenario.anchors[aid]
            samples = []
            for i, t in enumerate(ta.timestamps):
                cos1, cos2, d = _los_cosines(
                    ta.position(i), apos, _body_axis(ta.poses[i]), None
                )
                if d > scenario.max_range:
                    continue
                bias = (
                    cfg.systematic_bias.evaluate(cos1, cos2, d)
                    if cfg.systematic_bias
                    else 0.0
                )
                samples.append((float(t), d, bias))
            errors = emitted_errors(len(samples), "anchor", ta.agent_id, aid)
            for (t, d, bias), err in zip(samples, errors):
                anchor.append(
                    AnchorRangeMsg(
                        agent_id=ta.agent_id,
                        anchor_id=aid,
                        timestamp=t,
                        range_m=max(d + bias + err, 0.0),
                        variance=cfg.reported_variance,
                    )
                )

    inter.sort(key=lambda m: (m.timestamp, m.agent_a, m.agent_b))
    anchor.sort(key=lambda m: (m.timestamp, m.agent_id, m.anchor_id))
    return inter, anchor


# ---------------------------------------------------------------------------
# Availability statistics


@dataclass(frozen=True)
class AgentAvailability:
    """Dwell-time-weighted link availability for one agent."""

    agent_id: int
    anchor_pct: float
    peers_at_least_pct: dict[int, float]  # n -> % time with >= n peer links
    peers_exactly_pct: dict[int, float]  # n -> % time with exactly n peer links

    def to_dict(self) -> dict:
        return {
            "agent_id": self.agent_id,
            "anchor_pct": self.anchor_pct,
            "peers_at_least_pct": {str(k): v for k, v in self.peers_at_least_pct.items()},
            "peers_exactly_pct": {str(k): v for k, v in self.peers_exactly_pct.items()},
        }


def availability_stats(
    scenario: SwarmScenario,
    inter: list[InterRangeMsg],
    anchor: list[AnchorRangeMsg],
) -> list[AgentAvailability]:
    """Per-agent connectivity percentages from the emitted range streams.

    Each keyframe represents the interval until the next keyframe (the last
    keyframe carries no dwell time); percentages are dwell-time-weighted
    fractions of the agent's total traveling time.
    """
    max_peers = len(scenario.agents) - 1
    inter_by_key: dict[tuple[int, float], set[int]] = {}
    for m in inter:
        for me, other in ((m.agent_a, m.agent_b), (m.agent_b, m.agent_a)):
            inter_by_key.setdefault((me, round(m.timestamp, 6)), set()).add(other)
    anchor_keys = {(m.agent_id, round(m.timestamp, 6)) for m in anchor}

    out = []
    for track in sorted(scenario.agents, key=lambda t: t.agent_id):
        ts = track.timestamps
        weights = np.diff(ts)
        total = float(np.sum(weights))
        anchor_time = 0.0
        peer_time = {n: 0.0 for n in range(0, max_peers + 1)}
        for k in range(len(ts) - 1):
            key = (track.agent_id, round(float(ts[k]), 6))
            w = float(weights[k])
            if key in anchor_keys:
                anchor_time += w
            npeers = len(inter_by_key.get(key, ()))
            peer_time[npeers] += w
        exactly = {
            n: 100.0 * peer_time[n] / total for n in range(1, max_peers + 1)
        }
        at_least = {}
        for n in range(1, max_peers + 1):
            at_least[n] = 100.0 * sum(peer_time[m] for m in range(n, max_peers + 1)) / total
        out.append(
            AgentAvailability(
                agent_id=track.agent_id,
                anchor_pct=100.0 * anchor_time / total,
                peers_at_least_pct=at_least,
                peers_exactly_pct=exactly,
            )
        )
    return out


def rebase_scenario(scenario: SwarmScenario, **kwargs) -> SwarmScenario:
    """Copy the scenario with some fields replaced."""
    return replace(scenario, **kwargs)
