"""Multi-agent factor graph: assembly, sparse normal equations, LM solving.

Variables are keyframe poses keyed by (agent_id, timestamp) and ordered
agent-major, time-minor, so the Hessian's block layout is banded per agent
with isolated cross-agent blocks where inter-agent ranges bind.  Each
accepted Levenberg-Marquardt iteration solves (H + d*I) delta = -b with a
sparse symmetric factorization and applies the right update
pose <- compose(pose, exp(delta_block)).
"""

from __future__ import annotations

import bisect
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from . import sim3
from .errors import (
    CoincidentPositions,
    GraphError,
    MissingPrior,
    NonFiniteCost,
    SingularSystem,
    UnknownKeyframe,
)
from .measurements import (
    AnchorRangeMsg,
    InterRangeMsg,
    KeyframeMsg,
    OdometryEdge,
    PriorFactor,
    anchor_range_jacobian,
    odometry_jacobians,
    odometry_residual,
    prior_jacobian,
    prior_residual,
    range_jacobian,
    range_residual,
    range_residual_to_point,
)
from .sim3 import Sim3Pose

VarKey = tuple[int, float]  # (agent_id, timestamp)

DEFAULT_ASSOCIATION_TOL = 0.05  # seconds


@dataclass(frozen=True)
class BoundInterRange:
    """Inter-agent range bound to its two nearest keyframes."""

    key_a: VarKey
    key_b: VarKey
    measured: float
    weight: float  # scalar information, 1/variance
    timestamp_gap: float  # worst keyframe-vs-measurement gap, seconds


@dataclass(frozen=True)
class BoundAnchorRange:
    """Agent-to-anchor range bound to its nearest keyframe."""

    key: VarKey
    anchor_position: np.ndarray
    measured: float
    weight: float
    timestamp_gap: float


@dataclass
class GraphState:
    """Pose estimates plus the factor lists that constrain them."""

    poses: dict[VarKey, Sim3Pose]
    order: list[VarKey]  # agent-major, time-minor
    priors: list[PriorFactor]
    odometry: list[OdometryEdge]
    inter_ranges: list[BoundInterRange]
    anchor_ranges: list[BoundAnchorRange]
    dropped_ranges: int = 0
    skipped_coincident: int = 0
    max_association_gap: float = 0.0
    index: dict[VarKey, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.index:
            self.index = {k: i for i, k in enumerate(self.order)}

    @property
    def num_variables(self) -> int:
        return len(self.order)

    def with_poses(self, poses: dict[VarKey, Sim3Pose]) -> "GraphState":
        return replace(self, poses=poses)

    def factor_count(self) -> dict[str, int]:
        return {
            "prior": len(self.priors),
            "odometry": len(self.odometry),
            "inter_range": len(self.inter_ranges),
            "anchor_range": len(self.anchor_ranges),
        }


@dataclass
class SolverConfig:
    """Levenberg-Marquardt schedule and termination thresholds."""

    init_damping: float = 1e-4
    damping_increase: float = 10.0
    damping_decrease: float = 10.0
    max_damping: float = 1e12
    max_iterations: int = 100
    rel_cost_tol: float = 1e-9
    update_norm_tol: float = 1e-10
    step_cap: float = 1.0  # per-pose twist-norm clamp, keeps log/exp on branch

    def __post_init__(self):
        for name in (
            "init_damping",
            "damping_increase",
            "damping_decrease",
            "max_damping",
            "rel_cost_tol",
            "update_norm_tol",
            "step_cap",
        ):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"{name} must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class SolveReport:
    """What the solver did: iterations, step accounting and cost trace."""

    iterations: int
    accepted_steps: int
    rejected_steps: int
    cost_history: list[float]  # initial cost, then cost after each accepted step
    final_gradient_norm: float
    termination_reason: str

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "accepted_steps": self.accepted_steps,
            "rejected_steps": self.rejected_steps,
            "cost_history": self.cost_history,
            "final_gradient_norm": self.final_gradient_norm,
            "termination_reason": self.termination_reason,
        }


def _nearest_keyframe(
    timestamps: list[float], t: float
) -> tuple[float, float]:
    """Nearest timestamp in a sorted list and the absolute gap."""
    i = bisect.bisect_left(timestamps, t)
    best = None
    for j in (i - 1, i):
        if 0 <= j < len(timestamps):
            gap = abs(timestamps[j] - t)
            if best is None or gap < best[1]:
                best = (timestamps[j], gap)
    if best is None:
        raise GraphError("agent has no keyframes")
    return best


def build_graph(
    keyframes: list[KeyframeMsg],
    odometry: list[OdometryEdge],
    inter: list[InterRangeMsg],
    anchor: list[AnchorRangeMsg],
    anchors: dict[int, np.ndarray],
    priors: list[PriorFactor],
    association_tol: float = DEFAULT_ASSOCIATION_TOL,
) -> GraphState:
    """Assemble the factor graph from message streams.

    Keyframe poses become the initial estimates.  Odometry edges must join
    consecutive keyframes of one agent.  Range messages attach to each
    involved agent's nearest keyframe; a range whose gap exceeds
    `association_tol` is dropped and counted.

    Raises:
        MissingPrior: some agent's first keyframe has no prior (or has
            several).
        GraphError: structurally inconsistent inputs.
    """
    by_agent: dict[int, list[KeyframeMsg]] = {}
    for kf in keyframes:
        by_agent.setdefault(kf.agent_id, []).append(kf)
    if not by_agent:
        raise GraphError("no keyframes")
    for agent, kfs in by_agent.items():
        kfs.sort(key=lambda m: m.timestamp)
        ts = [m.timestamp for m in kfs]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise GraphError(f"agent {agent}: keyframe timestamps not increasing")

    order: list[VarKey] = []
    poses: dict[VarKey, Sim3Pose] = {}
    for agent in sorted(by_agent):
        for kf in by_agent[agent]:
            key = (agent, kf.timestamp)
            order.append(key)
            poses[key] = kf.pose
    key_set = set(order)
    ts_by_agent = {a: [m.timestamp for m in kfs] for a, kfs in by_agent.items()}

    prior_per_agent: dict[int, int] = {a: 0 for a in by_agent}
    for p in priors:
        if p.agent_id not in by_agent:
            raise GraphError(f"prior for unknown agent {p.agent_id}")
        if (p.agent_id, p.timestamp) not in key_set:
            raise GraphError(f"prior for agent {p.agent_id} not at a keyframe")
        if p.timestamp != ts_by_agent[p.agent_id][0]:
            raise GraphError(f"prior for agent {p.agent_id} not at first keyframe")
        prior_per_agent[p.agent_id] += 1
    missing = [a for a, n in prior_per_agent.items() if n == 0]
    if missing:
        raise MissingPrior(f"agents without a prior factor: {missing}")
    extra = [a for a, n in prior_per_agent.items() if n > 1]
    if extra:
        raise GraphError(f"agents with more than one prior factor: {extra}")

    for e in odometry:
        ts = ts_by_agent.get(e.agent_id)
        if ts is None:
            raise GraphError(f"odometry for unknown agent {e.agent_id}")
        i = bisect.bisect_left(ts, e.timestamp_i)
        if (
            i >= len(ts) - 1
            or ts[i] != e.timestamp_i
            or ts[i + 1] != e.timestamp_j
        ):
            raise GraphError(
                f"odometry edge ({e.agent_id}, {e.timestamp_i}->{e.timestamp_j}) "
                "does not join consecutive keyframes"
            )

    dropped = 0
    max_gap = 0.0
    bound_inter: list[BoundInterRange] = []
    for m in sorted(inter, key=lambda m: (m.timestamp, m.agent_a, m.agent_b)):
        if m.agent_a not in by_agent or m.agent_b not in by_agent:
            dropped += 1
            continue
        ta, ga = _nearest_keyframe(ts_by_agent[m.agent_a], m.timestamp)
        tb, gb = _nearest_keyframe(ts_by_agent[m.agent_b], m.timestamp)
        gap = max(ga, gb)
        if gap > association_tol:
            dropped += 1
            continue
        max_gap = max(max_gap, gap)
        bound_inter.append(
            BoundInterRange(
                key_a=(m.agent_a, ta),
                key_b=(m.agent_b, tb),
                measured=m.range_m,
                weight=1.0 / m.variance,
                timestamp_gap=gap,
            )
        )

    bound_anchor: list[BoundAnchorRange] = []
    for m in sorted(anchor, key=lambda m: (m.timestamp, m.agent_id, m.anchor_id)):
        if m.agent_id not in by_agent or m.anchor_id not in anchors:
            dropped += 1
            continue
        ta, gap = _nearest_keyframe(ts_by_agent[m.agent_id], m.timestamp)
        if gap > association_tol:
            dropped += 1
            continue
        max_gap = max(max_gap, gap)
        bound_anchor.append(
            BoundAnchorRange(
                key=(m.agent_id, ta),
                anchor_position=np.asarray(anchors[m.anchor_id], dtype=float),
                measured=m.range_m,
                weight=1.0 / m.variance,
                timestamp_gap=gap,
            )
        )

    return GraphState(
        poses=poses,
        order=order,
        priors=sorted(priors, key=lambda p: p.agent_id),
        odometry=sorted(odometry, key=lambda e: (e.agent_id, e.timestamp_i)),
        inter_ranges=bound_inter,
        anchor_ranges=bound_anchor,
        dropped_ranges=dropped,
        max_association_gap=max_gap,
    )


def _iter_factor_terms(g: GraphState, poses: dict[VarKey, Sim3Pose]):
    """Yield (keys, residual, jacobian blocks, information) per evaluable factor.

    Range factors whose endpoints coincide are skipped with a warning, per
    the graph contract; all other factor errors propagate.
    """
    for p in g.priors:
        key = (p.agent_id, p.timestamp)
        r, j = prior_jacobian(poses[key], p.prior_pose)
        yield [key], r, [j], p.information

    for e in g.odometry:
        ki = (e.agent_id, e.timestamp_i)
        kj = (e.agent_id, e.timestamp_j)
        r, ji, jj = odometry_jacobians(poses[ki], poses[kj], e.relative_pose)
        yield [ki, kj], r, [ji, jj], e.information

    for f in g.inter_ranges:
        try:
            r = range_residual(poses[f.key_a], poses[f.key_b], f.measured)
            ja, jb = range_jacobian(poses[f.key_a], poses[f.key_b])
        except CoincidentPositions:
            g.skipped_coincident += 1
            warnings.warn(
                "skipping inter-agent range factor with coincident endpoints"
            )
            continue
        yield [f.key_a, f.key_b], np.array([r]), [ja, jb], np.array([[f.weight]])

    for f in g.anchor_ranges:
        try:
            r = range_residual_to_point(poses[f.key], f.anchor_position, f.measured)
            ja = anchor_range_jacobian(poses[f.key], f.anchor_position)
        except CoincidentPositions:
            g.skipped_coincident += 1
            warnings.warn("skipping anchor range factor with coincident endpoints")
            continue
        yield [f.key], np.array([r]), [ja], np.array([[f.weight]])


def total_cost(g: GraphState, poses: dict[VarKey, Sim3Pose] | None = None) -> float:
    """Sum of squared weighted residuals over all four factor families."""
    poses = g.poses if poses is None else poses
    cost = 0.0
    for p in g.priors:
        r = prior_residual(poses[(p.agent_id, p.timestamp)], p.prior_pose)
        cost += float(r @ (p.information @ r))
    for e in g.odometry:
        r = odometry_residual(
            poses[(e.agent_id, e.timestamp_i)],
            poses[(e.agent_id, e.timestamp_j)],
            e.relative_pose,
        )
        cost += float(r @ (e.information @ r))
    for f in g.inter_ranges:
        try:
            r = range_residual(poses[f.key_a], poses[f.key_b], f.measured)
        except CoincidentPositions:
            continue
        cost += f.weight * r * r
    for f in g.anchor_ranges:
        try:
            r = range_residual_to_point(poses[f.key], f.anchor_position, f.measured)
        except CoincidentPositions:
            continue
        cost += f.weight * r * r
    return cost


def linearize(
    g: GraphState, poses: dict[VarKey, Sim3Pose] | None = None
) -> tuple[scipy.sparse.csr_matrix, np.ndarray]:
    """Assemble H = sum J^T W J (sparse) and b = sum J^T W r (dense).

    The sparsity pattern equals factor incidence: 7x7 blocks on the diagonal
    and wherever a factor joins two variables.
    """
    poses = g.poses if poses is None else poses
    n = 7 * g.num_variables
    b = np.zeros(n)
    blocks: dict[tuple[int, int], np.ndarray] = {}

    for keys, r, jacs, w in _iter_factor_terms(g, poses):
        r = np.atleast_1d(r)
        wjs = [w @ j for j in jacs]
        for a, key_a in enumerate(keys):
            ia = g.index[key_a]
            b[7 * ia : 7 * ia + 7] += jacs[a].T @ (w @ r)
            for c, key_c in enumerate(keys):
                ic = g.index[key_c]
                block = jacs[a].T @ wjs[c]
                at = (ia, ic)
                if at in blocks:
                    blocks[at] += block
                else:
                    blocks[at] = block.copy()

    rows, cols, vals = [], [], []
    row_tpl = np.repeat(np.arange(7), 7)
    col_tpl = np.tile(np.arange(7), 7)
    for (ia, ic), block in blocks.items():
        rows.append(7 * ia + row_tpl)
        cols.append(7 * ic + col_tpl)
        vals.append(block.ravel())
    if rows:
        h = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n, n),
        ).tocsr()
    else:
        h = scipy.sparse.csr_matrix((n, n))
    return h, b


def _solve_damped(
    h: scipy.sparse.csr_matrix, b: np.ndarray, damping: float
) -> np.ndarray:
    """Solve (H + d*I) x = -b with a deterministic sparse factorization.

    COLAMD column ordering is a deterministic fill-reducing permutation, so
    repeated runs factor identically; SymmetricMode suits the SPD system.
    """
    n = h.shape[0]
    a = (h + damping * scipy.sparse.identity(n, format="csr")).tocsc()
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.sparse.linalg.MatrixRankWarning)
        lu = scipy.sparse.linalg.splu(
            a, permc_spec="COLAMD", options={"SymmetricMode": True}
        )
        x = lu.solve(-b)
    if not np.all(np.isfinite(x)):
        raise RuntimeError("factorization produced non-finite solution")
    return x


def _apply_update(
    g: GraphState, poses: dict[VarKey, Sim3Pose], delta: np.ndarray, cap: float
) -> tuple[dict[VarKey, Sim3Pose], float]:
    """pose <- compose(pose, exp(delta block)), per-block twist norm capped."""
    out = {}
    max_norm = 0.0
    for key in g.order:
        i = g.index[key]
        d = delta[7 * i : 7 * i + 7]
        norm = float(np.linalg.norm(d))
        if norm > cap:
            d = d * (cap / norm)
            norm = cap
        max_norm = max(max_norm, norm)
        out[key] = sim3.compose(poses[key], sim3.exp(d))
    return out, max_norm


def solve_lm(
    g: GraphState, cfg: SolverConfig | None = None
) -> tuple[GraphState, SolveReport]:
    """Batch Levenberg-Marquardt over the whole graph.

    Accepted steps strictly decrease the cost; rejected steps increase the
    damping and retry.  Terminates on relative cost decrease, update norm,
    iteration budget, or a damping ceiling.

    Raises:
        SingularSystem: the damped normal equations cannot be factorized even
            at maximum damping (gauge deficiency: some connected component
            has no prior).
        NonFiniteCost: the cost is NaN/inf at the initial estimate.
    """
    cfg = cfg or SolverConfig()
    poses = dict(g.poses)
    cost = total_cost(g, poses)
    if not math.isfinite(cost):
        raise NonFiniteCost(f"initial cost is {cost}")
    costs = [cost]
    damping = cfg.init_damping
    accepted = rejected = 0
    reason = "max_iterations"
    iterations = 0

    for _ in range(cfg.max_iterations):
        iterations += 1
        h, b = linearize(g, poses)
        stop = False
        while True:
            try:
                delta = _solve_damped(h, b, damping)
            except (RuntimeError, scipy.sparse.linalg.MatrixRankWarning):
                damping *= cfg.damping_increase
                if damping > cfg.max_damping:
                    raise SingularSystem(
                        "normal equations singular at maximum damping; "
                        "is every connected component anchored by a prior?"
                    )
                continue
            if float(np.linalg.norm(delta)) < cfg.update_norm_tol:
                reason = "update_norm"
                stop = True
                break
            candidate, _ = _apply_update(g, poses, delta, cfg.step_cap)
            new_cost = total_cost(g, candidate)
            if math.isfinite(new_cost) and new_cost < cost:
                poses = candidate
                accepted += 1
                rel = (cost - new_cost) / cost if cost > 0.0 else 0.0
                cost = new_cost
                costs.append(cost)
                damping /= cfg.damping_decrease
                if rel < cfg.rel_cost_tol:
                    reason = "cost_decrease"
                    stop = True
                break
            rejected += 1
            damping *= cfg.damping_increase
            if damping > cfg.max_damping:
                reason = "damping_ceiling"
                stop = True
                break
        if stop:
            break

    _, b_final = linearize(g, poses)
    report = SolveReport(
        iterations=iterations,
        accepted_steps=accepted,
        rejected_steps=rejected,
        cost_history=costs,
        final_gradient_norm=float(np.linalg.norm(b_final, ord=np.inf)),
        termination_reason=reason,
    )
    return g.with_poses(poses), report


def update_map_points(
    points: list[tuple[VarKey, np.ndarray]],
    before: dict[VarKey, Sim3Pose],
    after: dict[VarKey, Sim3Pose],
) -> list[tuple[VarKey, np.ndarray]]:
    """Move map points by their anchor keyframe's pose correction.

    Each point anchored to keyframe k is transformed by
    compose(after[k], inverse(before[k])).

    Raises:
        UnknownKeyframe: a point's anchor keyframe is missing on either side.
    """
    corrections: dict[VarKey, Sim3Pose] = {}
    out = []
    for key, p in points:
        if key not in before or key not in after:
            raise UnknownKeyframe(f"map point anchored to unknown keyframe {key}")
        if key not in corrections:
            corrections[key] = sim3.compose(after[key], sim3.inverse(before[key]))
        out.append((key, sim3.transform_point(corrections[key], p)))
    return out
