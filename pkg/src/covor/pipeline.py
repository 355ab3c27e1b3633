"""End-to-end experiment pipeline: simulate, fuse, evaluate, report.

Stages are file-driven and individually runnable; `run_experiment` chains
them for every configured seed.  All outputs are written atomically and are
byte-identical across reruns with the same config and seed (JSON/CSV; plots
are deterministic up to the SVG id salt).

Layout under the output directory:

    resolved_config.yaml
    availability.json / availability.csv
    accounting.json / accounting.csv
    metrics.json                     aggregate over seeds
    seeds/<seed>/measurements.bin    binary wire dump of all messages
    seeds/<seed>/measurements.jsonl  JSON mirror of the same stream
    seeds/<seed>/truth_agent<k>.tum
    seeds/<seed>/<mode>/est_agent<k>.tum (+ est_scales_agent<k>.csv)
    seeds/<seed>/<mode>/solve_report.json
    seeds/<seed>/<mode>/metrics.json (+ series_agent<k>.csv)
    plots/<mode>_agent<k>.svg        first configured seed only
"""

from __future__ import annotations

import json
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import metrics, sim3, swarm, wire
from .config import ExperimentConfig, FusionMode, dump_config
from .errors import ConfigError
from .graph import GraphState, SolveReport, SolverConfig, build_graph, solve_lm
from .measurements import AnchorRangeMsg, InterRangeMsg, KeyframeMsg, OdometryEdge
from .metrics import PoseTrack
from .sim3 import SE3Pose, Sim3Pose
from .swarm import (
    OdometryNoiseConfig,
    RangingNoiseConfig,
    SwarmScenario,
    SystematicBias,
)

MODES: tuple[FusionMode, ...] = ("vo-only", "vo+inter", "vo+inter+anchor")


def _atomic_write(path: Path, data: str | bytes):
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_json(path: Path, obj):
    _atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _noise_configs(cfg: ExperimentConfig) -> tuple[OdometryNoiseConfig, RangingNoiseConfig]:
    odo = OdometryNoiseConfig(
        rot_std=cfg.odometry_noise.rot_std,
        trans_std_per_m=cfg.odometry_noise.trans_std_per_m,
        scale_drift_std=cfg.odometry_noise.scale_drift_std,
        min_variance=cfg.odometry_noise.min_variance,
    )
    bias = None
    if cfg.ranging_noise.systematic_bias is not None:
        bias = SystematicBias(**cfg.ranging_noise.systematic_bias.model_dump())
    rng_cfg = RangingNoiseConfig(
        sigma_eta=cfg.ranging_noise.sigma_eta,
        multipath_step_sigma=cfg.ranging_noise.multipath_step_sigma,
        systematic_bias=bias,
        min_variance=cfg.ranging_noise.min_variance,
    )
    return odo, rng_cfg


def build_scenario(cfg: ExperimentConfig) -> SwarmScenario:
    """Ground-truth scenario from the configured dataset, split K ways."""
    ds = cfg.dataset
    if ds.format == "synthetic":
        traj = swarm.synthetic_trajectory(
            keyframes=ds.synthetic.keyframes,
            dt=ds.synthetic.dt,
            radius=ds.synthetic.radius,
            climb=ds.synthetic.climb,
            laps=ds.synthetic.laps,
        )
    else:
        if not ds.path:
            raise ConfigError(f"dataset.path is required for format {ds.format}")
        traj = swarm.ingest_trajectory(ds.path, ds.format, rate_hz=ds.rate_hz)
    if ds.stride > 1:
        traj = traj[:: ds.stride]
    odo_noise, rng_noise = _noise_configs(cfg)
    return swarm.split_swarm(
        traj,
        cfg.agents,
        anchors={a: np.array(p) for a, p in cfg.anchors.items()},
        max_range=cfg.max_range_m,
        odometry_noise=odo_noise,
        ranging_noise=rng_noise,
    )


@dataclass
class MeasurementSet:
    """Everything one seed's agents would transmit, plus graph inputs."""

    keyframes: list[KeyframeMsg]
    odometry: list[OdometryEdge]
    inter: list[InterRangeMsg]
    anchor: list[AnchorRangeMsg]

    def all_messages(self):
        ordered = sorted(
            self.keyframes + self.inter + self.anchor,
            key=lambda m: (m.timestamp, _msg_order(m), _msg_ids(m)),
        )
        return ordered


def _msg_order(m) -> int:
    return {KeyframeMsg: 0, InterRangeMsg: 1, AnchorRangeMsg: 2}[type(m)]


def _msg_ids(m):
    if isinstance(m, KeyframeMsg):
        return (m.agent_id, 0)
    if isinstance(m, InterRangeMsg):
        return (m.agent_a, m.agent_b)
    return (m.agent_id, m.anchor_id)


def simulate_measurements(scenario: SwarmScenario, seed: int) -> MeasurementSet:
    """Deterministic measurement synthesis for one seed."""
    odometry = swarm.generate_odometry(scenario, seed=seed)
    keyframes: list[KeyframeMsg] = []
    odo_flat: list[OdometryEdge] = []
    for track in scenario.agents:
        edges = odometry[track.agent_id]
        keyframes.extend(swarm.keyframe_messages(track, edges))
        odo_flat.extend(edges)
    inter, anchor = swarm.generate_ranges(scenario, seed=seed)
    return MeasurementSet(keyframes, odo_flat, inter, anchor)


def fuse_measurements(
    scenario: SwarmScenario,
    ms: MeasurementSet,
    mode: FusionMode,
    cfg: ExperimentConfig,
) -> tuple[GraphState, SolveReport]:
    """Build the graph for the requested fusion mode and solve it."""
    inter = ms.inter if mode in ("vo+inter", "vo+inter+anchor") else []
    anchor = ms.anchor if mode == "vo+inter+anchor" else []
    priors = swarm.default_priors(
        scenario,
        first_agent_sigma=cfg.priors.first_agent_sigma,
        other_rot_sigma=cfg.priors.other_rot_sigma,
        other_trans_sigma=cfg.priors.other_trans_sigma,
        other_scale_sigma=cfg.priors.other_scale_sigma,
    )
    g = build_graph(
        ms.keyframes,
        ms.odometry,
        inter,
        anchor,
        scenario.anchors,
        priors,
        association_tol=cfg.association_tol_s,
    )
    solver = SolverConfig(**cfg.solver.model_dump())
    return solve_lm(g, solver)


def _truth_track(track) -> PoseTrack:
    items = [(float(t), p) for t, p in zip(track.timestamps, track.poses)]
    return PoseTrack.from_se3(items, scales=track.true_scales)


def _estimate_track(g: GraphState, agent_id: int) -> PoseTrack:
    items = [
        (ts, g.poses[(a, ts)]) for (a, ts) in g.order if a == agent_id
    ]
    return PoseTrack.from_sim3(items)


@dataclass
class SeedModeResult:
    """Metrics for one (seed, mode) run."""

    seed: int
    mode: str
    per_agent_ate: dict[int, float]
    pooled_ate: float
    per_agent_scale_rmse: dict[int, float]
    max_scale_error: float
    position_error_series: dict[int, np.ndarray]
    scale_error_series: dict[int, np.ndarray]
    solve_report: SolveReport
    dropped_ranges: int
    max_association_gap: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "mode": self.mode,
            "per_agent_ate": {str(k): v for k, v in self.per_agent_ate.items()},
            "pooled_ate": self.pooled_ate,
            "per_agent_scale_rmse": {
                str(k): v for k, v in self.per_agent_scale_rmse.items()
            },
            "max_scale_error": self.max_scale_error,
            "solve_report": self.solve_report.to_dict(),
            "dropped_ranges": self.dropped_ranges,
            "max_association_gap": self.max_association_gap,
        }


def evaluate_solution(
    scenario: SwarmScenario,
    g: GraphState,
    report: SolveReport,
    seed: int,
    mode: str,
) -> SeedModeResult:
    """Compare fused poses against scenario ground truth."""
    per_ate: dict[int, float] = {}
    per_scale: dict[int, float] = {}
    pos_series: dict[int, np.ndarray] = {}
    scale_series: dict[int, np.ndarray] = {}
    for track in scenario.agents:
        truth = _truth_track(track)
        est = _estimate_track(g, track.agent_id)
        pos_series[track.agent_id] = metrics.position_error_series(est, truth)
        scale_series[track.agent_id] = metrics.scale_error_series(est, truth)
        per_ate[track.agent_id] = metrics.ate_rmse(est, truth)
        per_scale[track.agent_id] = float(
            np.sqrt(np.mean(scale_series[track.agent_id] ** 2))
        )
    return SeedModeResult(
        seed=seed,
        mode=mode,
        per_agent_ate=per_ate,
        pooled_ate=metrics.pooled_rmse(list(pos_series.values())),
        per_agent_scale_rmse=per_scale,
        max_scale_error=float(max(np.max(s) for s in scale_series.values())),
        position_error_series=pos_series,
        scale_error_series=scale_series,
        solve_report=report,
        dropped_ranges=g.dropped_ranges,
        max_association_gap=g.max_association_gap,
    )


# ---------------------------------------------------------------------------
# File-driven stages


def _seed_dir(out: Path, seed: int) -> Path:
    return out / "seeds" / str(seed)


def stage_simulate(cfg: ExperimentConfig, seed: int, out: Path) -> MeasurementSet:
    """Generate one seed's measurements and persist them with the truth."""
    scenario = build_scenario(cfg)
    ms = simulate_measurements(scenario, seed)
    sdir = _seed_dir(out, seed)
    sdir.mkdir(parents=True, exist_ok=True)
    stream = ms.all_messages()
    if cfg.output.wire_dump:
        _atomic_write(sdir / "measurements.bin", wire.encode_stream(stream))
    _atomic_write(
        sdir / "measurements.jsonl",
        "".join(wire.to_json_line(m) + "\n" for m in stream),
    )
    for track in scenario.agents:
        items = [(float(t), p) for t, p in zip(track.timestamps, track.poses)]
        path = sdir / f"truth_agent{track.agent_id}.tum"
        tmp = path.with_suffix(".tum.tmp")
        swarm.export_trajectory(tmp, items)
        os.replace(tmp, path)
    return ms


def _read_measurements(sdir: Path) -> MeasurementSet:
    bin_path = sdir / "measurements.bin"
    if bin_path.exists():
        msgs = list(wire.iter_frames(bin_path.read_bytes()))
    else:
        msgs = wire.read_jsonl(sdir / "measurements.jsonl")
    keyframes = [m for m in msgs if isinstance(m, KeyframeMsg)]
    inter = [m for m in msgs if isinstance(m, InterRangeMsg)]
    anchor = [m for m in msgs if isinstance(m, AnchorRangeMsg)]
    return MeasurementSet(keyframes, [], inter, anchor)


def stage_fuse(
    cfg: ExperimentConfig, seed: int, mode: FusionMode, out: Path
) -> tuple[GraphState, SolveReport]:
    """Fuse one seed's persisted measurements and write the estimates.

    Odometry edges are regenerated deterministically from (config, seed);
    the wire stream carries keyframes and ranges, matching what agents
    actually transmit.
    """
    scenario = build_scenario(cfg)
    sdir = _seed_dir(out, seed)
    stored = _read_measurements(sdir)
    regenerated = simulate_measurements(scenario, seed)
    ms = MeasurementSet(
        keyframes=stored.keyframes or regenerated.keyframes,
        odometry=regenerated.odometry,
        inter=stored.inter,
        anchor=stored.anchor,
    )
    g, report = fuse_measurements(scenario, ms, mode, cfg)
    mdir = sdir / mode
    mdir.mkdir(parents=True, exist_ok=True)
    if cfg.map_points_per_keyframe > 0:
        _write_map_points(cfg, scenario, ms, g, seed, mdir)
    for track in scenario.agents:
        est = [
            (ts, g.poses[(a, ts)]) for (a, ts) in g.order if a == track.agent_id
        ]
        items = [
            (ts, SE3Pose(p.rotation, p.position)) for ts, p in est
        ]
        path = mdir / f"est_agent{track.agent_id}.tum"
        tmp = path.with_suffix(".tum.tmp")
        swarm.export_trajectory(tmp, items)
        os.replace(tmp, path)
        scales = "".join(f"{ts:.9f},{p.scale!r}\n" for ts, p in est)
        _atomic_write(
            mdir / f"est_scales_agent{track.agent_id}.csv",
            "timestamp,scale\n" + scales,
        )
    _write_json(mdir / "solve_report.json", report.to_dict())
    return g, report


def _write_map_points(
    cfg: ExperimentConfig,
    scenario: SwarmScenario,
    ms: MeasurementSet,
    g: GraphState,
    seed: int,
    mdir: Path,
):
    """Synthesize per-keyframe map points, correct them by the pose updates.

    A point's VO estimate inherits its keyframe's dead-reckoned drift; after
    fusion it is moved by compose(after, inverse(before)), so with perfect
    pose recovery the points land back on their true locations.
    """
    from .graph import update_map_points

    before = {(m.agent_id, m.timestamp): m.pose for m in ms.keyframes}
    points = []
    truth_points = {}
    for track in scenario.agents:
        rng = swarm.stream_rng(seed, "map_points", track.agent_id)
        offsets = rng.normal(0.0, 5.0, size=(len(track), cfg.map_points_per_keyframe, 3))
        for k, ts in enumerate(track.timestamps):
            key = (track.agent_id, float(ts))
            true_pose = track.true_sim3(k)
            drift = sim3.compose(before[key], sim3.inverse(true_pose))
            for idx in range(cfg.map_points_per_keyframe):
                p_true = true_pose.position + true_pose.rotation @ offsets[k, idx]
                points.append((key, sim3.transform_point(drift, p_true)))
                truth_points[(key, idx)] = p_true
    corrected = update_map_points(points, before, g.poses)
    rows = ["agent_id,timestamp,x,y,z"]
    for (agent, ts), p in corrected:
        rows.append(f"{agent},{ts:.9f},{p[0]!r},{p[1]!r},{p[2]!r}")
    _atomic_write(mdir / "map_points.csv", "\n".join(rows) + "\n")


def stage_evaluate(
    cfg: ExperimentConfig, seed: int, mode: FusionMode, out: Path
) -> SeedModeResult:
    """Score persisted estimates against the scenario ground truth."""
    scenario = build_scenario(cfg)
    sdir = _seed_dir(out, seed)
    mdir = sdir / mode
    per_ate: dict[int, float] = {}
    per_scale: dict[int, float] = {}
    pos_series: dict[int, np.ndarray] = {}
    scale_series: dict[int, np.ndarray] = {}
    for track in scenario.agents:
        est_items = swarm.ingest_trajectory(
            mdir / f"est_agent{track.agent_id}.tum", "tum-trajectory"
        )
        scales = _read_scales(mdir / f"est_scales_agent{track.agent_id}.csv")
        est = PoseTrack.from_se3(est_items, scales=np.ones(len(est_items)))
        # The TUM file stores world positions directly; carry scale alongside.
        est = PoseTrack(est.timestamps, est.positions, est.rotations, scales)
        truth = _truth_track(track)
        pos_series[track.agent_id] = metrics.position_error_series(est, truth)
        scale_series[track.agent_id] = metrics.scale_error_series(est, truth)
        per_ate[track.agent_id] = metrics.ate_rmse(est, truth)
        per_scale[track.agent_id] = float(
            np.sqrt(np.mean(scale_series[track.agent_id] ** 2))
        )
        series_csv = ["timestamp,position_error,scale_error"]
        for ts, pe, se in zip(
            est.timestamps, pos_series[track.agent_id], scale_series[track.agent_id]
        ):
            series_csv.append(f"{ts:.9f},{pe!r},{se!r}")
        _atomic_write(
            mdir / f"series_agent{track.agent_id}.csv", "\n".join(series_csv) + "\n"
        )
    solve_report = _load_solve_report(mdir / "solve_report.json")
    result = SeedModeResult(
        seed=seed,
        mode=mode,
        per_agent_ate=per_ate,
        pooled_ate=metrics.pooled_rmse(list(pos_series.values())),
        per_agent_scale_rmse=per_scale,
        max_scale_error=float(max(np.max(s) for s in scale_series.values())),
        position_error_series=pos_series,
        scale_error_series=scale_series,
        solve_report=solve_report,
        dropped_ranges=0,
        max_association_gap=0.0,
    )
    _write_json(mdir / "metrics.json", result.to_dict())
    return result


def _read_scales(path: Path) -> np.ndarray:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        next(f)
        for line in f:
            out.append(float(line.strip().split(",")[1]))
    return np.array(out)


def _load_solve_report(path: Path) -> SolveReport:
    with open(path, "r", encoding="utf-8") as f:
        d = json.load(f)
    return SolveReport(
        iterations=d["iterations"],
        accepted_steps=d["accepted_steps"],
        rejected_steps=d["rejected_steps"],
        cost_history=d["cost_history"],
        final_gradient_norm=d["final_gradient_norm"],
        termination_reason=d["termination_reason"],
    )


def stage_report(cfg: ExperimentConfig, out: Path) -> dict:
    """Availability, accounting, aggregate metrics and plots."""
    scenario = build_scenario(cfg)
    first_seed = cfg.seeds[0]
    ms = _read_measurements(_seed_dir(out, first_seed))
    if not ms.keyframes:
        raise ConfigError("no persisted measurements; run the simulate stage first")

    avail = swarm.availability_stats(scenario, ms.inter, ms.anchor)
    _write_json(out / "availability.json", [a.to_dict() for a in avail])
    rows = ["agent_id,anchor_pct," + ",".join(
        f"peers_ge{n}_pct" for n in range(1, len(scenario.agents))
    )]
    for a in avail:
        rows.append(
            f"{a.agent_id},{a.anchor_pct!r},"
            + ",".join(repr(a.peers_at_least_pct[n]) for n in range(1, len(scenario.agents)))
        )
    _atomic_write(out / "availability.csv", "\n".join(rows) + "\n")

    baselines = wire.BaselineCostModel(**cfg.comm_baselines.model_dump())
    acct = wire.account(ms.keyframes, ms.inter, ms.anchor, baselines)
    _write_json(out / "accounting.json", acct.to_dict())
    acct_rows = ["keyframes,fused_bytes,ccm_slam_ub,ccm_slam_lb,dslam"]
    for i, n in enumerate(acct.keyframe_counts):
        acct_rows.append(
            f"{n},{acct.fused_bytes[i]},{acct.ccm_slam_ub[i]!r},"
            f"{acct.ccm_slam_lb[i]!r},{acct.dslam[i]!r}"
        )
    _atomic_write(out / "accounting.csv", "\n".join(acct_rows) + "\n")

    aggregate = _aggregate_metrics(cfg, out)
    _write_json(out / "metrics.json", aggregate)

    if cfg.output.plots:
        from . import plots

        plots.trajectory_plots(cfg, scenario, out)
    return aggregate


def _aggregate_metrics(cfg: ExperimentConfig, out: Path) -> dict:
    per_seed = {}
    pooled: dict[str, list[float]] = {}
    for seed in cfg.seeds:
        sdir = _seed_dir(out, seed)
        seed_entry = {}
        for mode in MODES:
            mpath = sdir / mode / "metrics.json"
            if mpath.exists():
                with open(mpath, "r", encoding="utf-8") as f:
                    d = json.load(f)
                seed_entry[mode] = d
                pooled.setdefault(mode, []).append(d["pooled_ate"])
        per_seed[str(seed)] = seed_entry
    medians = {
        mode: float(np.median(np.array(v))) for mode, v in pooled.items() if v
    }
    return {
        "seeds": per_seed,
        "median_pooled_ate": medians,
        "num_seeds": len(cfg.seeds),
    }


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Full pipeline for every configured seed at the configured mode.

    Returns the aggregate metrics dict (also written to metrics.json).
    """
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    tmp = out / "resolved_config.yaml.tmp"
    dump_config(cfg, tmp)
    os.replace(tmp, out / "resolved_config.yaml")
    for seed in cfg.seeds:
        stage_simulate(cfg, seed, out)
        stage_fuse(cfg, seed, cfg.mode, out)
        stage_evaluate(cfg, seed, cfg.mode, out)
    return stage_report(cfg, out)
