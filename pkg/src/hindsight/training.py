"""Joint training loop: env collection, forward/reverse world-model updates on
the same sampled chunks, actor-critic imagination updates, metrics, and
checkpoints. Also greedy evaluation with persisted episode records."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .agent import ActorCritic
from .config import RunConfig
from .env import (
    Action,
    N_ACTIONS,
    ScenarioRegistry,
    ScriptedSolver,
    Unsolvable,
    reset,
    step,
)
from .models import (
    ForwardWorldModel,
    ModelError,
    ObsSpec,
    ReverseWorldModel,
    sample_latent,
    save_model,
)
from .replay import EpisodeBuilder, EpisodeData, ReplayBuffer, reverse_transform, save_episode


class TrainingAborted(RuntimeError):
    """Raised on non-finite losses; the last-good checkpoints stay on disk."""


def collect_behavior_episodes(
    registry: ScenarioRegistry,
    scenario_id: str,
    episodes: int,
    seed: int,
    sticky: float = 0.85,
) -> list[EpisodeData]:
    """Sticky random walk: repeat the previous action with probability
    `sticky`, else draw uniformly. Covers the state space while keeping
    occupancy-weighted reverse posteriors decisive."""
    rng = np.random.default_rng(seed)
    scenario = registry.scenario(scenario_id)
    out = []
    for i in range(episodes):
        world, obs = reset(scenario, seed + i, registry)
        builder = EpisodeBuilder(scenario_id, seed + i, obs)
        cont, prev = True, None
        while cont:
            if prev is not None and rng.random() < sticky:
                action = prev
            else:
                action = int(rng.integers(0, N_ACTIONS))
            prev = action
            world, obs, reward, cont = step(world, action)
            builder.add(action, reward, cont, obs)
        out.append(builder.finish(truncated=world.truncated))
    return out


def train_reverse_offline(
    world,
    episodes: list[EpisodeData],
    latent,
    config,
    updates: int,
    seed: int = 0,
    chunk_length: int = 12,
    batch_size: int = 12,
    boundary_batch: int = 24,
) -> ReverseWorldModel:
    """Fit a reverse model to a fixed episode log for oracle comparisons.

    Every update trains on standard reversed chunks plus short length-2
    chunks, which directly supervise the chunk-boundary conditional that
    cold-start predecessor queries exercise. The learning rate drops for the
    final fifth of the schedule to sharpen the decoded modes.
    """
    from .models import ObsSpec

    torch.manual_seed(seed)
    buf = ReplayBuffer(capacity=10**7)
    for ep in episodes:
        buf.append(ep)
    rwm = ReverseWorldModel(ObsSpec.for_world(world), latent, config)
    gen = torch.Generator().manual_seed(seed)
    rng = np.random.default_rng(seed)
    drop_at = int(updates * 0.8)
    for u in range(updates):
        if u == drop_at:
            for group in rwm.opt.param_groups:
                group["lr"] = config.lr / 3
        chunks = buf.sample_chunks(batch_size, chunk_length, rng)
        rwm.train_batch_reverse([reverse_transform(c) for c in chunks], gen)
        short = buf.sample_chunks(boundary_batch, 2, rng)
        rwm.train_batch_reverse([reverse_transform(c) for c in short], gen)
    return rwm


def play_policy_episode(
    fwm: ForwardWorldModel,
    agent: ActorCritic,
    world,
    first_obs,
    scenario_id: str,
    seed: int,
    mode: str = "greedy",
    torch_gen: torch.Generator | None = None,
    explore_eps: float = 0.0,
    np_rng: np.random.Generator | None = None,
) -> EpisodeData:
    """Roll the policy in a given initial world, filtering observations
    through the forward model. Greedy mode is fully deterministic."""
    obs_spec = fwm.obs_spec
    builder = EpisodeBuilder(scenario_id, seed, first_obs)
    latent_mode = "mode" if mode == "greedy" else "sample"
    h = fwm.rssm.sequence_step(*fwm.rssm.initial_state(1), fwm.initial_input(1))
    obs, cont = first_obs, True
    while cont:
        obs_vec = obs_spec.obs_to_vec(obs)
        z = sample_latent(fwm.encode(h, obs_vec), latent_mode, torch_gen)
        action = int(agent.act(h, z, "greedy" if mode == "greedy" else "sample", torch_gen)[0])
        if mode == "sample" and explore_eps > 0 and np_rng is not None and np_rng.random() < explore_eps:
            action = int(np_rng.integers(0, N_ACTIONS))
        h = fwm.sequence_step(h, z, fwm.action_onehot(torch.as_tensor([action], dtype=torch.long)))
        world, obs, reward, cont = step(world, action)
        builder.add(action, reward, cont, obs)
    return builder.finish(truncated=world.truncated)


@dataclass
class EvalResult:
    scenario: str
    success_rate: float
    mean_return: float
    mean_steps: float
    episodes: list[EpisodeData]
    episode_ids: list[str]


class Trainer:
    def __init__(self, cfg: RunConfig, run_dir: Path | str, registry: ScenarioRegistry | None = None):
        self.cfg = cfg
        self.run_dir = Path(run_dir)
        self.registry = registry or ScenarioRegistry()
        torch.set_num_threads(cfg.torch_threads)
        torch.manual_seed(cfg.seed)
        self.torch_gen = torch.Generator().manual_seed(cfg.seed)
        self.np_rng = np.random.default_rng(cfg.seed)

        self.scenario = self.registry.scenario(cfg.scenario)
        base_world, _ = reset(self.scenario, cfg.seed, self.registry)
        self.obs_spec = ObsSpec.for_world(base_world)
        self.solver = ScriptedSolver(self.registry.base_world(self.scenario.base_world))
        self.fwm = ForwardWorldModel(self.obs_spec, cfg.latent, cfg.world_model)
        self.rwm = ReverseWorldModel(self.obs_spec, cfg.latent, cfg.world_model)
        self.agent = ActorCritic(cfg.latent, cfg.policy)
        self.buffer = ReplayBuffer(capacity=cfg.replay_capacity)

        self.env_steps = 0
        self.updates = 0
        self.episode_index = 0
        self.run_dir.mkdir(parents=True, exist_ok=True)
        (self.run_dir / "episodes").mkdir(exist_ok=True)
        cfg.save(self.run_dir / "config.json")
        self._metrics = (self.run_dir / "metrics.jsonl").open("a")

    @classmethod
    def from_run_dir(cls, run_dir: Path | str, cfg: RunConfig | None = None, registry=None) -> "Trainer":
        """Rebuild a trainer around an existing run's checkpoints (for
        evaluation or continued explanation work)."""
        from .models import load_model

        run_dir = Path(run_dir)
        cfg = cfg or RunConfig.load(run_dir / "config.json")
        trainer = cls(cfg, run_dir, registry=registry)
        ckpt = run_dir / "checkpoints"
        if (ckpt / "fwm.ckpt").exists():
            trainer.fwm = load_model(ckpt / "fwm.ckpt", "forward")
        if (ckpt / "rwm.ckpt").exists():
            trainer.rwm = load_model(ckpt / "rwm.ckpt", "reverse")
        if (ckpt / "policy.ckpt").exists():
            trainer.agent = load_model(ckpt / "policy.ckpt", "policy")
        return trainer

    # --- logging / checkpoints ----------------------------------------------
    def log(self, row: dict) -> None:
        self._metrics.write(json.dumps(row, sort_keys=True) + "\n")
        self._metrics.flush()

    def save_checkpoints(self) -> None:
        ckpt_dir = self.run_dir / "checkpoints"
        save_model(ckpt_dir / "fwm.ckpt", self.fwm)
        save_model(ckpt_dir / "rwm.ckpt", self.rwm)
        save_model(ckpt_dir / "policy.ckpt", self.agent)

    # --- collection -----------------------------------------------------------
    def collect_episode(self, mode: str, scenario=None, seed: int | None = None) -> EpisodeData:
        """One full episode: 'scripted' follows the solver, 'sample' plays the
        stochastic policy (with epsilon exploration), 'greedy' is deterministic."""
        scenario = scenario or self.scenario
        seed = self.cfg.seed if seed is None else seed
        world, obs = reset(scenario, seed, self.registry)
        if mode != "scripted":
            return play_policy_episode(
                self.fwm,
                self.agent,
                world,
                obs,
                scenario.id,
                seed,
                mode=mode,
                torch_gen=self.torch_gen,
                explore_eps=self.cfg.explore_eps,
                np_rng=self.np_rng,
            )
        builder = EpisodeBuilder(scenario.id, seed, obs, source="scripted")
        cont = True
        while cont:
            try:
                action = int(self.solver.next_action(world))
            except Unsolvable:
                action = int(Action.NOOP)
            # A little noise on demonstrations: the solver replans afterwards,
            # so episodes still complete while replay gains coverage of the
            # action branches next to the optimal path.
            if self.cfg.demo_eps > 0 and self.np_rng.random() < self.cfg.demo_eps:
                action = int(self.np_rng.integers(0, N_ACTIONS))
            world, obs, reward, cont = step(world, action)
            builder.add(action, reward, cont, obs)
        return builder.finish(truncated=world.truncated)

    # --- updates ---------------------------------------------------------------
    def update_round(self) -> dict:
        chunks = self.buffer.sample_chunks(self.cfg.batch_size, self.cfg.chunk_length, self.np_rng)
        fwm_losses, states = self.fwm.train_batch(chunks, self.torch_gen)
        reversed_chunks = [reverse_transform(c) for c in chunks]
        rwm_losses = self.rwm.train_batch_reverse(reversed_chunks, self.torch_gen)
        # The critic grounds itself on replayed returns throughout; the actor
        # sits out the first updates so it does not commit against a still
        # uninformative world model.
        discount = self.cfg.policy.discount
        returns_to_go = torch.as_tensor(
            np.stack(
                [
                    self.buffer.episodes[c.episode_id].returns_to_go(discount)[c.start : c.start + len(c)]
                    for c in chunks
                ]
            )
        )
        policy_losses = self.agent.critic_replay_update(states["h"], states["z"], returns_to_go)
        if self.updates >= self.cfg.policy_warmup:
            policy_losses.update(
                self.agent.imagine_update(
                    self.fwm, states["h"], states["z"], self.torch_gen, start_cont=states["cont"]
                )
            )
        if self.cfg.policy.bc_weight > 0:
            scripted = [i for i, c in enumerate(chunks) if c.source == "scripted"]
            if scripted:
                actions = torch.as_tensor(np.stack([chunks[i].actions for i in scripted]), dtype=torch.long)
                policy_losses.update(
                    self.agent.actor_clone_update(
                        states["h"][scripted], states["z"][scripted], actions
                    )
                )
        self.updates += 1
        row = {
            "kind": "update",
            "update": self.updates,
            "env_steps": self.env_steps,
            "chunks": [[c.episode_id, c.start] for c in chunks],
            "reversed_chunks": [[c.episode_id, c.start] for c in reversed_chunks],
        }
        row.update({f"fwm_{k}": v for k, v in fwm_losses.items()})
        row.update({f"rwm_{k}": v for k, v in rwm_losses.items()})
        row.update({f"policy_{k}": v for k, v in policy_losses.items()})
        self.log(row)
        return row

    def train(self) -> dict:
        """Run the interleaved loop until the env-step budget or early stop.

        Collection schedule: the first demo_episodes are scripted, after which
        every demo_every-th episode is scripted and the rest play the policy.
        """
        cfg = self.cfg
        last_eval: EvalResult | None = None
        stopped_early = False
        try:
            while self.env_steps < cfg.total_env_steps and not stopped_early:
                i = self.episode_index
                if i < cfg.demo_episodes or (cfg.demo_every and i % cfg.demo_every == 0):
                    mode = "scripted"
                else:
                    mode = "sample"
                episode = self.collect_episode(mode)
                self.episode_index += 1
                self.env_steps += len(episode) - 1
                self.buffer.append(episode)
                if cfg.persist_training_episodes:
                    save_episode(self.run_dir / "episodes" / f"train-{i:05d}.jsonl", episode)

                target_updates = self.env_steps // cfg.train_every
                while self.updates < target_updates:
                    self.update_round()
                    if self.updates % cfg.checkpoint_every == 0:
                        self.save_checkpoints()
                    if self.updates % cfg.eval_every == 0:
                        last_eval = self.evaluate(cfg.scenario, cfg.eval_episodes, save=False)
                        tile_acc = self.fwm.next_observation_tile_accuracy(last_eval.episodes)
                        self.log(
                            {
                                "kind": "eval",
                                "update": self.updates,
                                "env_steps": self.env_steps,
                                "success_rate": last_eval.success_rate,
                                "mean_return": last_eval.mean_return,
                                "mean_steps": last_eval.mean_steps,
                                "tile_accuracy": tile_acc,
                            }
                        )
                        if (
                            cfg.early_stop
                            and last_eval.success_rate >= cfg.success_target
                            and tile_acc >= cfg.tile_accuracy_target
                        ):
                            stopped_early = True
                            break
        except ModelError as exc:
            self.log({"kind": "abort", "update": self.updates, "error": str(exc)})
            raise TrainingAborted(str(exc)) from exc
        self.save_checkpoints()
        if last_eval is None:
            last_eval = self.evaluate(cfg.scenario, cfg.eval_episodes, save=False)
        summary = {
            "kind": "done",
            "env_steps": self.env_steps,
            "updates": self.updates,
            "episodes": self.episode_index,
            "success_rate": last_eval.success_rate,
            "stopped_early": stopped_early,
        }
        self.log(summary)
        return summary

    # --- evaluation -------------------------------------------------------------
    def evaluate(self, scenario_id: str, episodes: int, save: bool = True) -> EvalResult:
        """Greedy policy episodes in a (possibly perturbed) scenario; records
        are persisted for the explanation pipeline and UI playback."""
        scenario = self.registry.scenario(scenario_id)
        collected, ids = [], []
        returns, steps_taken = 0.0, 0
        for i in range(episodes):
            episode = self.collect_episode("greedy", scenario=scenario, seed=self.cfg.seed + i)
            collected.append(episode)
            returns += episode.total_reward()
            steps_taken += len(episode) - 1
            if save:
                eid = f"{scenario_id}__{i:04d}"
                save_episode(self.run_dir / "episodes" / f"{eid}.jsonl", episode)
                ids.append(eid)
        # Success = recipe completed, i.e. the episode ended without truncation.
        successes = sum(1 for ep in collected if not ep.truncated)
        return EvalResult(
            scenario=scenario_id,
            success_rate=successes / episodes,
            mean_return=returns / episodes,
            mean_steps=steps_taken / episodes,
            episodes=collected,
            episode_ids=ids,
        )
