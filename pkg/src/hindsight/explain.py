"""Explanation reports: deviation detection against the scripted reference,
snapshot selection, counterfactual expectation images, and the report bundle.

A treatment report pairs each snapshot's actual observation with the reverse
world model's expectation: the state the world should have been in for the
reference (optimal) action to be the right choice. A control report carries
the same snapshots without expectation images, mirroring the two study arms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .env import ScenarioRegistry, ScriptedSolver, Unsolvable, render, render_observation
from .models import ForwardWorldModel, ReverseWorldModel, generate_prior_state
from .models.reverse import CounterfactualState
from .replay import EpisodeData, replay_episode_worlds
from .env.render import gif_bytes, png_bytes


class ExplainError(ValueError):
    pass


@dataclass
class Snapshot:
    t: int
    actual_action: int
    counterfactual_action: int
    is_deviation_point: bool
    actual_render: Image.Image
    expected_render: Image.Image | None  # treatment mode only
    diff_mask: np.ndarray | None  # (win, win) bool, treatment mode only


@dataclass
class ExplanationReport:
    scenario_id: str
    episode_id: str
    mode: str  # control | treatment
    seed: int
    deviation_t: int | None
    snapshots: list[Snapshot]
    video_frames: list[Image.Image]

    def manifest(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "episode_id": self.episode_id,
            "mode": self.mode,
            "seed": self.seed,
            "deviation_t": self.deviation_t,
            "video": "video.gif",
            "snapshots": [
                {
                    "t": s.t,
                    "actual_action": s.actual_action,
                    "counterfactual_action": s.counterfactual_action,
                    "is_deviation_point": s.is_deviation_point,
                    "actual_render": f"snap_{s.t:04d}_actual.png",
                    "expected_render": f"snap_{s.t:04d}_expected.png" if s.expected_render else None,
                    "diff_cells": (
                        [[int(y), int(x)] for y, x in np.argwhere(s.diff_mask)]
                        if s.diff_mask is not None
                        else None
                    ),
                }
                for s in self.snapshots
            ],
        }


def find_deviation(episode: EpisodeData, reference: ScriptedSolver, registry: ScenarioRegistry) -> int | None:
    """Smallest t where the agent's action differs from the scripted optimal
    action recomputed at the episode's actual state; None when the agent
    never leaves the reference trajectory.

    With the reference planned on the episode's own (possibly perturbed)
    world, every perturbation kind yields a finite deviation on an overfit
    agent: changed optimal routes diverge immediately, and a perturbation
    that makes the task unsolvable counts as off-script at the step where
    the solver first has no move."""
    worlds = replay_episode_worlds(episode, registry)
    for t in range(len(episode) - 1):
        try:
            ref_action = int(reference.next_action(worlds[t]))
        except Unsolvable:
            return t
        if ref_action != int(episode.actions[t]):
            return t
    return None


def select_snapshots(episode: EpisodeData, t_star: int | None, count: int = 4, seed: int = 0) -> list[int]:
    """The deviation step plus count-1 distinct uniformly drawn other steps,
    ascending. Without a deviation, all count indices are drawn uniformly."""
    n_steps = len(episode) - 1
    if n_steps < count:
        raise ExplainError(f"episode has {n_steps} action steps; need at least {count}")
    rng = np.random.default_rng(seed)
    chosen: set[int] = set() if t_star is None else {t_star}
    pool = [t for t in range(n_steps) if t not in chosen]
    draw = rng.choice(len(pool), size=count - len(chosen), replace=False)
    chosen.update(pool[i] for i in draw)
    return sorted(chosen)


def build_report(
    episode: EpisodeData,
    episode_id: str,
    fwm: ForwardWorldModel,
    rwm: ReverseWorldModel,
    registry: ScenarioRegistry,
    mode: str = "treatment",
    seed: int = 0,
    snapshot_count: int = 4,
) -> ExplanationReport:
    """Assemble a control or treatment report for a recorded episode.

    Counterfactual actions come from the scripted solver bound to the
    scenario's *base* (unperturbed) topology: the optimal solution the agent
    was trained to follow, which is exactly what the user wanted it to do.
    """
    if mode not in ("control", "treatment"):
        raise ExplainError(f"unknown report mode {mode!r}")
    from .env import Action, reset

    scenario = registry.scenario(episode.scenario_id)
    scenario_world, _ = reset(scenario, episode.seed, registry)
    scenario_ref = ScriptedSolver(scenario_world)  # deviation detection, per-world optimum
    base_ref = ScriptedSolver(registry.base_world(scenario.base_world))  # training-world optimum
    worlds = replay_episode_worlds(episode, registry)

    t_star = find_deviation(episode, scenario_ref, registry)
    indices = select_snapshots(episode, t_star, snapshot_count, seed)

    def counterfactual_action(t: int, actual: int) -> int:
        """Scripted optimal action at t; at the deviation snapshot it must
        differ from the actual action, falling back from the scenario's
        optimum to the training world's and then to a fixed substitute when
        the perturbation left the solvers without a distinct move."""
        for solver in (scenario_ref, base_ref):
            try:
                action = int(solver.next_action(worlds[t]))
            except Unsolvable:
                continue
            if t != t_star or action != actual:
                return action
        for candidate in (int(Action.INTERACT), int(Action.MOVE_NORTH)):
            if candidate != actual:
                return candidate
        return int(Action.NOOP)

    snapshots = []
    for t in indices:
        a_cf = counterfactual_action(t, int(episode.actions[t]))
        expected_render = None
        diff_mask = None
        if mode == "treatment":
            result: CounterfactualState = generate_prior_state(fwm, rwm, episode, t, a_cf)
            expected_render = result.expected_image
            diff_mask = result.diff_mask
        snapshots.append(
            Snapshot(
                t=t,
                actual_action=int(episode.actions[t]),
                counterfactual_action=a_cf,
                is_deviation_point=t == t_star,
                actual_render=render_observation(episode.observation(t)),
                expected_render=expected_render,
                diff_mask=diff_mask,
            )
        )
    video_frames = [render(w, "full-grid") for w in worlds]
    return ExplanationReport(
        scenario_id=episode.scenario_id,
        episode_id=episode_id,
        mode=mode,
        seed=seed,
        deviation_t=t_star,
        snapshots=snapshots,
        video_frames=video_frames,
    )


def write_report_bundle(report: ExplanationReport, out_dir: Path | str) -> Path:
    """Persist a report as a directory bundle: manifest.json, snapshot PNGs,
    and the episode GIF. All encoders are bit-stable, so identical inputs
    produce byte-identical bundles."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for snap in report.snapshots:
        (out_dir / f"snap_{snap.t:04d}_actual.png").write_bytes(png_bytes(snap.actual_render))
        if snap.expected_render is not None:
            (out_dir / f"snap_{snap.t:04d}_expected.png").write_bytes(png_bytes(snap.expected_render))
    (out_dir / "video.gif").write_bytes(gif_bytes(report.video_frames))
    (out_dir / "manifest.json").write_text(json.dumps(report.manifest(), indent=2, sort_keys=True) + "\n")
    return out_dir


def window_cells_of(world_cells: list[tuple[int, int]], agent_pos: tuple[int, int], window: int) -> list[tuple[int, int]]:
    """Map world cells into (wy, wx) window coordinates; out-of-window cells
    are dropped. Used to locate perturbed objects inside snapshot windows."""
    half = window // 2
    ax, ay = agent_pos
    out = []
    for x, y in world_cells:
        wx, wy = x - ax + half, y - ay + half
        if 0 <= wx < window and 0 <= wy < window:
            out.append((wy, wx))
    return out
