"""Exact tabular dynamics and Bayes-inverted reverse posteriors on tiny
worlds: the ground truth the learned reverse world model is scored against.

The predecessor prior is the behavior policy's visit occupancy rho(s, a), not
a uniform prior: the reverse model trains on replay data drawn from exactly
that distribution, so occupancy weighting is the faithful oracle.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .env import Action, N_ACTIONS, WorldGrid, apply_dynamics, enumerate_states
from .models import ObsSpec, ReverseWorldModel
from .models.nets import sample_latent
from .replay import EpisodeData, replay_episode_worlds


class OracleError(ValueError):
    pass


@dataclass
class TabularMDP:
    states: list[WorldGrid]
    index: dict[tuple, int]  # state_key -> state index
    transition: np.ndarray  # (n_states, n_actions) int, successor index; -1 for terminal rows
    occupancy: np.ndarray  # (n_states, n_actions) float, sums to 1

    @property
    def n_states(self) -> int:
        return len(self.states)

    def state_index(self, world: WorldGrid) -> int:
        key = world.state_key()
        if key not in self.index:
            raise OracleError(f"state {key} not in the enumerated space")
        return self.index[key]

    def predecessors(self, s_next: int, a_prev: int) -> np.ndarray:
        return np.nonzero(self.transition[:, a_prev] == s_next)[0]


@dataclass
class ReversePosterior:
    """P(s_prev | s_next, a_prev) with occupancy prior; empty when the pair
    was never observed under the behavior distribution."""

    support: np.ndarray  # predecessor state indices
    probs: np.ndarray

    @property
    def empty(self) -> bool:
        return len(self.support) == 0

    def argmax(self) -> int:
        if self.empty:
            raise OracleError("posterior has empty support")
        return int(self.support[np.argmax(self.probs)])

    def argmax_set(self, tolerance: float = 1e-9) -> list[int]:
        """All predecessors attaining the maximal posterior probability;
        exact ties under the occupancy prior are common on symmetric worlds
        and any of them is a correct mode."""
        if self.empty:
            raise OracleError("posterior has empty support")
        top = self.probs.max()
        return [int(s) for s, p in zip(self.support, self.probs) if p >= top - tolerance]


def build_tabular(
    template: WorldGrid,
    episodes: list[EpisodeData] | None = None,
    registry=None,
    max_inventory: int | None = None,
    bound: int = 10**6,
) -> TabularMDP:
    """Exhaustive transition table plus empirical occupancy from logged
    episodes (replayed through the env); without episodes the occupancy is
    uniform over non-terminal pairs."""
    if max_inventory is None:
        max_inventory = template.max_inventory
    states = enumerate_states(template, max_inventory=max_inventory, bound=bound)
    index = {s.state_key(): i for i, s in enumerate(states)}
    transition = np.full((len(states), N_ACTIONS), -1, dtype=np.int64)
    for i, state in enumerate(states):
        if state.done:
            continue
        for action in Action:
            nxt = apply_dynamics(state, action)
            transition[i, action] = index[nxt.state_key()]

    occupancy = np.zeros((len(states), N_ACTIONS), dtype=np.float64)
    for ep in episodes or []:
        worlds = replay_episode_worlds(ep, registry)
        for t in range(len(ep) - 1):
            key = worlds[t].state_key()
            if key in index:
                occupancy[index[key], int(ep.actions[t])] += 1.0
    if occupancy.sum() == 0:
        live = transition >= 0
        occupancy[live] = 1.0
    occupancy /= occupancy.sum()
    return TabularMDP(states=states, index=index, transition=transition, occupancy=occupancy)


def reverse_posterior(mdp: TabularMDP, s_next: int, a_prev: int) -> ReversePosterior:
    """P(s_prev | s_next, a_prev) proportional to 1[T(s_prev, a_prev) = s_next]
    times the behavior occupancy rho(s_prev, a_prev)."""
    candidates = mdp.predecessors(s_next, a_prev)
    weights = mdp.occupancy[candidates, a_prev]
    keep = weights > 0
    candidates, weights = candidates[keep], weights[keep]
    if len(candidates) == 0:
        return ReversePosterior(support=candidates, probs=weights)
    return ReversePosterior(support=candidates, probs=weights / weights.sum())


@dataclass
class RwmComparison:
    top1_accuracy: float
    mean_tv_proxy: float
    n_scored: int
    n_empty_support: int
    per_pair: list[dict] = field(default_factory=list)


def _state_snapper(mdp: TabularMDP, obs_spec: ObsSpec):
    """Map a decoded observation to the nearest enumerated state's index
    (Hamming distance over window cells, facing, bucketized inventory)."""
    observations = [s.observe() for s in mdp.states]
    windows = np.stack([o.window.reshape(-1) for o in observations])
    facings = np.array([o.facing for o in observations])
    inventories = np.stack(
        [np.minimum(o.inventory, obs_spec.inventory_buckets - 1) for o in observations]
    )

    def snap(decoded) -> int:
        d = (windows != decoded.window.reshape(-1)).sum(axis=1)
        d = d + (facings != decoded.facing)
        d = d + np.abs(
            inventories - np.minimum(decoded.inventory, obs_spec.inventory_buckets - 1)
        ).sum(axis=1)
        return int(np.argmin(d))

    return snap


@torch.no_grad()
def compare_rwm(
    mdp: TabularMDP,
    rwm: ReverseWorldModel,
    obs_spec: ObsSpec,
    samples: int,
    seed: int,
) -> RwmComparison:
    """Score the reverse model's cold-start predecessor predictions against
    the Bayes posterior's argmax on (s_next, a_prev) pairs drawn from the
    occupancy-induced successor distribution. Decoded observations identify
    the nearest enumerated state; a hit means that state attains the
    posterior's maximal probability."""
    rng = np.random.default_rng(seed)
    flat = mdp.occupancy.reshape(-1)
    live = np.nonzero(flat > 0)[0]
    draws = rng.choice(live, size=samples, p=flat[live] / flat[live].sum())
    snap = _state_snapper(mdp, obs_spec)

    top1 = 0
    tv_total = 0.0
    scored = 0
    empty = 0
    per_pair: list[dict] = []
    for flat_idx in draws:
        s_prev_true = int(flat_idx // N_ACTIONS)
        a_prev = int(flat_idx % N_ACTIONS)
        s_next = int(mdp.transition[s_prev_true, a_prev])
        post = reverse_posterior(mdp, s_next, a_prev)
        if post.empty:
            empty += 1
            continue
        best = post.argmax()
        best_obs = mdp.states[best].observe()

        next_obs = mdp.states[s_next].observe()
        h = rwm.cold_start(1)
        obs_vec = obs_spec.obs_to_vec(next_obs, dtype=rwm.rssm.params_dtype())
        z = sample_latent(rwm.encode(h, obs_vec), "mode")
        a_oh = rwm.action_onehot(torch.as_tensor([a_prev], dtype=torch.long))
        h_prev, prior_logits = rwm.reverse_step(h, z, a_oh)
        z_prev = sample_latent(prior_logits, "mode")
        decoded_flat = rwm.decode(h_prev, z_prev)[0]
        decoded = obs_spec.decode_observation(decoded_flat)

        # A hit is identifying any maximal-posterior predecessor: exact ties
        # under the occupancy prior have no canonical winner.
        hit = snap(decoded) in set(post.argmax_set())
        top1 += int(hit)
        tv_total += _component_tv(obs_spec, decoded_flat, mdp, post)
        scored += 1
        per_pair.append({"s_next": s_next, "a_prev": a_prev, "oracle": best, "hit": hit})
    return RwmComparison(
        top1_accuracy=top1 / max(scored, 1),
        mean_tv_proxy=tv_total / max(scored, 1),
        n_scored=scored,
        n_empty_support=empty,
        per_pair=per_pair,
    )


def _component_tv(obs_spec: ObsSpec, decoded_flat: torch.Tensor, mdp: TabularMDP, post: ReversePosterior) -> float:
    """Total-variation proxy: mean over observation components of the TV
    distance between the model's softmax and the oracle's marginal."""
    tiles, inv, facing = obs_spec.split_logits(decoded_flat.unsqueeze(0))
    model_tiles = torch.softmax(tiles, -1)[0].numpy()  # (cells, classes)
    model_fac = torch.softmax(facing, -1)[0].numpy()

    cells = obs_spec.n_cells
    oracle_tiles = np.zeros((cells, obs_spec.n_tile_classes))
    oracle_fac = np.zeros(obs_spec.n_facings)
    for state_idx, prob in zip(post.support, post.probs):
        obs = mdp.states[state_idx].observe()
        flat_tiles = obs.window.reshape(-1)
        oracle_tiles[np.arange(cells), flat_tiles] += prob
        oracle_fac[obs.facing] += prob
    tv_tiles = 0.5 * np.abs(model_tiles - oracle_tiles).sum(axis=1).mean()
    tv_fac = 0.5 * np.abs(model_fac - oracle_fac).sum()
    return float((tv_tiles * cells + tv_fac) / (cells + 1))


def dump_tabular(mdp: TabularMDP) -> str:
    """Human-readable table of transitions and occupancy for inspection."""
    lines = [f"states: {mdp.n_states}", "index\tkey\t" + "\t".join(a.name for a in Action)]
    for i, state in enumerate(mdp.states):
        row = "\t".join(str(int(mdp.transition[i, a])) for a in Action)
        lines.append(f"{i}\t{state.state_key()}\t{row}")
    return "\n".join(lines) + "\n"
