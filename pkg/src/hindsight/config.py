"""Run configuration: one serializable dataclass tree so any run can be
reproduced from the config stored in its run directory."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

from .agent import PolicyConfig
from .models.nets import LatentSpec
from .models.worldmodel import WorldModelConfig


@dataclass(frozen=True)
class RunConfig:
    scenario: str = "micro-static"
    seed: int = 0
    total_env_steps: int = 50_000
    batch_size: int = 8
    chunk_length: int = 65
    train_every: int = 16  # env steps per update round
    demo_episodes: int = 10  # scripted episodes collected before policy play
    demo_every: int = 4  # every k-th later episode is scripted (0 disables)
    demo_eps: float = 0.15  # random-action noise inside scripted demos (solver replans)
    explore_eps: float = 0.05  # random-action probability during policy play
    eval_every: int = 250  # updates between greedy evaluations
    eval_episodes: int = 10
    checkpoint_every: int = 250  # updates between checkpoint writes
    replay_capacity: int = 100_000
    persist_training_episodes: bool = False
    policy_warmup: int = 200  # world-model updates before actor-critic training starts
    torch_threads: int = 1
    early_stop: bool = True  # stop once the success target is met at eval
    success_target: float = 0.9
    tile_accuracy_target: float = 0.95
    latent: LatentSpec = field(default_factory=LatentSpec)
    world_model: WorldModelConfig = field(default_factory=WorldModelConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        data["latent"] = LatentSpec(**data.get("latent", {}))
        data["world_model"] = WorldModelConfig(**data.get("world_model", {}))
        data["policy"] = PolicyConfig(**data.get("policy", {}))
        return cls(**data)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: Path | str) -> "RunConfig":
        return cls.from_json(Path(path).read_text())

    def save(self, path: Path | str) -> None:
        Path(path).write_text(self.to_json() + "\n")


def micro_smoke(seed: int = 0) -> RunConfig:
    """Fast 5x5 micro-kitchen preset: minutes on CPU."""
    return RunConfig(
        scenario="micro-static",
        seed=seed,
        total_env_steps=50_000,
        batch_size=16,
        chunk_length=12,
        train_every=12,
        demo_episodes=16,
        demo_every=3,
        explore_eps=0.1,
        eval_every=200,
        checkpoint_every=200,
        policy_warmup=400,
        demo_eps=0.2,
        latent=LatentSpec(h_dim=96, z_groups=8, z_classes=8, hidden=192, layers=2),
        world_model=WorldModelConfig(lr=3e-4, free_bits=0.02),
        policy=PolicyConfig(lr=3e-4, horizon=15, max_starts=192, entropy_coef=6e-3, value_clip=11.5, discount=0.9, target_interval=30, value_expectile=0.8, bc_weight=1.0),
    )


def kitchen_study(scenario: str = "kitchen-static", seed: int = 0) -> RunConfig:
    """Study-scale preset on the 15x15 kitchen; batch 8 x length 65 replay."""
    return RunConfig(
        scenario=scenario,
        seed=seed,
        total_env_steps=120_000,
        batch_size=8,
        chunk_length=65,
        train_every=16,
        demo_episodes=24,
        demo_every=3,
        explore_eps=0.08,
        eval_every=250,
        checkpoint_every=250,
        policy_warmup=400,
        demo_eps=0.15,
        latent=LatentSpec(h_dim=128, z_groups=8, z_classes=8, hidden=256, layers=2),
        world_model=WorldModelConfig(lr=3e-4, free_bits=0.02),
        policy=PolicyConfig(lr=1e-4, horizon=15, value_clip=12.5, discount=0.96, target_interval=30, value_expectile=0.8, bc_weight=1.0),
    )


PRESETS = {
    "micro-smoke": micro_smoke,
    "kitchen-study": kitchen_study,
}


def preset(name: str, seed: int = 0, scenario: str | None = None) -> RunConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; known: {sorted(PRESETS)}")
    cfg = PRESETS[name](seed=seed)
    if scenario is not None:
        cfg = replace(cfg, scenario=scenario)
    return cfg
