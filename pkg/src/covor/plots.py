"""SVG trajectory plots: ground truth in gray, estimates in mode colors."""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402

from . import swarm  # noqa: E402
from .config import MODE_COLORS, ExperimentConfig  # noqa: E402

# Stable ids and no creation date keep SVG output reproducible.
matplotlib.rcParams["svg.hashsalt"] = "covor"


def _save(fig, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def trajectory_plots(cfg: ExperimentConfig, scenario, out: Path):
    """Horizontal (x, y) trajectory plot per agent for the first seed."""
    seed = cfg.seeds[0]
    sdir = out / "seeds" / str(seed)
    for track in scenario.agents:
        fig, ax = plt.subplots(figsize=(5, 5))
        truth_xy = [(p.translation[0], p.translation[1]) for p in track.poses]
        ax.plot(
            [p[0] for p in truth_xy],
            [p[1] for p in truth_xy],
            color=MODE_COLORS["truth"],
            label="ground truth",
            linewidth=2,
        )
        for mode, color in MODE_COLORS.items():
            if mode == "truth":
                continue
            est_path = sdir / mode / f"est_agent{track.agent_id}.tum"
            if not est_path.exists():
                continue
            items = swarm.ingest_trajectory(est_path, "tum-trajectory")
            ax.plot(
                [p.translation[0] for _, p in items],
                [p.translation[1] for _, p in items],
                color=color,
                label=mode,
                linewidth=1,
            )
        for aid, pos in scenario.anchors.items():
            ax.plot(pos[0], pos[1], marker="^", color="k", markersize=8)
            ax.annotate(f"anchor {aid}", (pos[0], pos[1]))
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title(f"agent {track.agent_id} (seed {seed})")
        ax.legend(loc="best", fontsize=8)
        ax.set_aspect("equal", adjustable="datalim")
        _save(fig, out / "plots" / f"agent{track.agent_id}.svg")


def error_plot(cfg: ExperimentConfig, out: Path):
    """Per-keyframe position error curves per mode, first seed, all agents."""
    seed = cfg.seeds[0]
    sdir = out / "seeds" / str(seed)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    plotted = False
    for mode, color in MODE_COLORS.items():
        if mode == "truth":
            continue
        mdir = sdir / mode
        if not (mdir / "metrics.json").exists():
            continue
        with open(mdir / "metrics.json", "r", encoding="utf-8") as f:
            json.load(f)
        for csv in sorted(mdir.glob("series_agent*.csv")):
            ts, err = [], []
            with open(csv, "r", encoding="utf-8") as f:
                next(f)
                for line in f:
                    parts = line.strip().split(",")
                    ts.append(float(parts[0]))
                    err.append(float(parts[1]))
            ax.plot(ts, err, color=color, alpha=0.7, linewidth=0.8)
            plotted = True
    if plotted:
        ax.set_xlabel("mission time [s]")
        ax.set_ylabel("position error [m]")
        _save(fig, out / "plots" / "position_error.svg")
    else:
        plt.close(fig)
