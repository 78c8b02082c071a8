"""Episode replay buffer, chunk sampling, and the time-reversal transform.

Episodes are stored columnar. A stored step holds the observation, the action
taken *from* it (NO_PREDECESSOR on the terminal record, where no action is
taken), the reward received upon arriving at it, and a continue flag that is
False only on the final record.

`reverse_transform` produces reverse-model training data: observations in
reverse temporal order, rewards and continues dropped, and actions shifted so
each output step pairs an observation with the action that originally led to
it; the last output step (the chunk's original first observation) carries the
NO_PREDECESSOR marker.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import NO_PREDECESSOR, Observation


class ReplayError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionStep:
    obs: Observation
    action: int
    reward: float | None
    cont: bool | None


@dataclass
class EpisodeData:
    """One episode as columnar arrays; length = env transitions + 1."""

    scenario_id: str
    seed: int
    windows: np.ndarray  # (L, win, win) int16
    inventories: np.ndarray  # (L, n_ingredients) int16
    facings: np.ndarray  # (L,) int16
    actions: np.ndarray  # (L,) int16
    rewards: np.ndarray  # (L,) float32
    conts: np.ndarray  # (L,) bool
    truncated: bool = False
    source: str = "policy"  # which controller produced it: policy | scripted

    def __len__(self) -> int:
        return len(self.actions)

    def observation(self, t: int) -> Observation:
        return Observation(
            window=self.windows[t].copy(),
            inventory=self.inventories[t].copy(),
            facing=int(self.facings[t]),
        )

    def total_reward(self) -> float:
        return float(self.rewards.sum())

    def returns_to_go(self, discount: float) -> np.ndarray:
        """Exact discounted return from each record onward; rewards are
        stored on arrival, so G_p = r_{p+1} + discount * G_{p+1}, zero at the
        final record. Episodes are complete, so no bootstrap is involved."""
        out = np.zeros(len(self), dtype=np.float64)
        for p in range(len(self) - 2, -1, -1):
            out[p] = self.rewards[p + 1] + discount * out[p + 1]
        return out


class EpisodeBuilder:
    """Accumulates an episode from env transitions."""

    def __init__(self, scenario_id: str, seed: int, first_obs: Observation, source: str = "policy"):
        self.scenario_id = scenario_id
        self.seed = seed
        self.source = source
        self._observations = [first_obs]
        self._actions: list[int] = []
        self._rewards: list[float] = [0.0]  # no reward attached to the first observation
        self._conts: list[bool] = [True]

    def add(self, action: int, reward: float, cont: bool, next_obs: Observation) -> None:
        self._actions.append(int(action))
        self._observations.append(next_obs)
        self._rewards.append(float(reward))
        self._conts.append(bool(cont))

    def finish(self, truncated: bool = False) -> EpisodeData:
        if not self._actions:
            raise ReplayError("episode has no transitions")
        self._conts[-1] = False
        actions = self._actions + [NO_PREDECESSOR]  # terminal record takes no action
        return EpisodeData(
            scenario_id=self.scenario_id,
            seed=self.seed,
            windows=np.stack([o.window for o in self._observations]).astype(np.int16),
            inventories=np.stack([o.inventory for o in self._observations]).astype(np.int16),
            facings=np.array([o.facing for o in self._observations], dtype=np.int16),
            actions=np.array(actions, dtype=np.int16),
            rewards=np.array(self._rewards, dtype=np.float32),
            conts=np.array(self._conts, dtype=bool),
            truncated=truncated,
            source=self.source,
        )


@dataclass
class TransitionChunk:
    """Fixed-length contiguous window of one episode."""

    windows: np.ndarray
    inventories: np.ndarray
    facings: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray | None
    conts: np.ndarray | None
    is_reversed: bool
    episode_id: int
    start: int
    source: str = "policy"

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def steps(self) -> list[TransitionStep]:
        return [
            TransitionStep(
                obs=Observation(self.windows[i], self.inventories[i], int(self.facings[i])),
                action=int(self.actions[i]),
                reward=None if self.rewards is None else float(self.rewards[i]),
                cont=None if self.conts is None else bool(self.conts[i]),
            )
            for i in range(len(self))
        ]


@dataclass
class ReplayBuffer:
    """Append-only episode store with whole-episode eviction, oldest first."""

    capacity: int = 100_000
    episodes: dict[int, EpisodeData] = field(default_factory=dict)
    total_steps: int = 0
    _next_id: int = 0

    def append(self, episode: EpisodeData) -> int:
        if len(episode) == 0:
            raise ReplayError("cannot append an empty episode")
        if not episode.conts[:-1].all() or episode.conts[-1]:
            raise ReplayError("episode must end with cont=False exactly once")
        if len(episode) > self.capacity:
            raise ReplayError(f"episode of {len(episode)} steps exceeds capacity {self.capacity}")
        episode_id = self._next_id
        self._next_id += 1
        self.episodes[episode_id] = episode
        self.total_steps += len(episode)
        while self.total_steps > self.capacity:
            oldest = next(iter(self.episodes))
            self.total_steps -= len(self.episodes.pop(oldest))
        return episode_id

    def sample_chunks(
        self,
        batch_size: int,
        chunk_length: int,
        seed: int | np.random.Generator,
    ) -> list[TransitionChunk]:
        """batch_size contiguous in-order windows: a uniformly drawn eligible
        episode, then a uniformly random valid start offset within it."""
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        eligible = [(eid, ep) for eid, ep in self.episodes.items() if len(ep) >= chunk_length]
        if not eligible:
            raise ReplayError(f"no stored episode has >= {chunk_length} steps")
        chunks = []
        for pick in rng.integers(0, len(eligible), size=batch_size):
            eid, ep = eligible[int(pick)]
            offset = int(rng.integers(0, len(ep) - chunk_length + 1))
            sl = slice(offset, offset + chunk_length)
            chunks.append(
                TransitionChunk(
                    windows=ep.windows[sl].copy(),
                    inventories=ep.inventories[sl].copy(),
                    facings=ep.facings[sl].copy(),
                    actions=ep.actions[sl].copy(),
                    rewards=ep.rewards[sl].copy(),
                    conts=ep.conts[sl].copy(),
                    is_reversed=False,
                    episode_id=eid,
                    start=offset,
                    source=ep.source,
                )
            )
        return chunks


def reverse_transform(chunk: TransitionChunk) -> TransitionChunk:
    """Reverse observation order, drop rewards/continues, shift actions to
    pair each observation with its true predecessor action."""
    if chunk.is_reversed:
        raise ReplayError("chunk is already reversed")
    length = len(chunk)
    actions = np.empty(length, dtype=chunk.actions.dtype)
    if length > 1:
        actions[:-1] = chunk.actions[length - 2 :: -1]
    actions[-1] = NO_PREDECESSOR
    return TransitionChunk(
        windows=chunk.windows[::-1].copy(),
        inventories=chunk.inventories[::-1].copy(),
        facings=chunk.facings[::-1].copy(),
        actions=actions,
        rewards=None,
        conts=None,
        is_reversed=True,
        episode_id=chunk.episode_id,
        start=chunk.start,
        source=chunk.source,
    )


def replay_episode_worlds(episode: EpisodeData, registry) -> list:
    """Re-simulate an episode record from its scenario and actions, returning
    the full world state at every index. Records replay deterministically, so
    this reproduces exactly the states the observations were taken from."""
    from .env import reset, step

    scenario = registry.scenario(episode.scenario_id)
    world, obs = reset(scenario, episode.seed, registry)
    if obs != episode.observation(0):
        raise ReplayError("episode record does not match its scenario's initial state")
    worlds = [world]
    for t in range(len(episode) - 1):
        world, _, _, _ = step(world, int(episode.actions[t]))
        worlds.append(world)
    return worlds


def save_episode(path: Path | str, episode: EpisodeData) -> None:
    """One JSON header line, then one JSON record per step (documented order:
    t, window, inventory, facing, action, reward, cont)."""
    path = Path(path)
    with path.open("w") as fh:
        header = {
            "scenario_id": episode.scenario_id,
            "seed": episode.seed,
            "length": len(episode),
            "truncated": episode.truncated,
            "source": episode.source,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for t in range(len(episode)):
            record = {
                "t": t,
                "window": episode.windows[t].tolist(),
                "inventory": episode.inventories[t].tolist(),
                "facing": int(episode.facings[t]),
                "action": int(episode.actions[t]),
                "reward": float(episode.rewards[t]),
                "cont": bool(episode.conts[t]),
            }
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def load_episode(path: Path | str) -> EpisodeData:
    path = Path(path)
    with path.open() as fh:
        header = json.loads(fh.readline())
        rows = [json.loads(line) for line in fh if line.strip()]
    if len(rows) != header["length"]:
        raise ReplayError(f"{path}: expected {header['length']} records, found {len(rows)}")
    return EpisodeData(
        scenario_id=header["scenario_id"],
        seed=header["seed"],
        windows=np.array([r["window"] for r in rows], dtype=np.int16),
        inventories=np.array([r["inventory"] for r in rows], dtype=np.int16),
        facings=np.array([r["facing"] for r in rows], dtype=np.int16),
        actions=np.array([r["action"] for r in rows], dtype=np.int16),
        rewards=np.array([r["reward"] for r in rows], dtype=np.float32),
        conts=np.array([r["cont"] for r in rows], dtype=bool),
        truncated=header.get("truncated", False),
        source=header.get("source", "policy"),
    )
