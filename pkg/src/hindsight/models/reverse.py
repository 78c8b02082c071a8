"""Reverse world model: an RSSM of the forward model's architecture, minus
reward/continue heads, trained on time-reversed action-shifted chunks so its
"next state" is the real world's previous state.

`generate_prior_state` combines both models into the counterfactual pipeline:
given a recorded trajectory, a timestep, and an alternative action, it asks
the forward model where that action would have led, then asks the reverse
model what the world must have looked like one step earlier for that outcome;
the decoded answer is the explanation image.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn
from PIL import Image

from ..env import Action, N_ACTION_INPUTS, N_ACTIONS, Observation
from ..env.render import render_observation
from ..replay import EpisodeData, TransitionChunk
from .encoding import ObsSpec
from .nets import LatentSpec, ModelError, RSSM, kl_balance, sample_latent
from .worldmodel import ForwardWorldModel, WorldModelConfig, _chunk_batch


class ReverseWorldModel(nn.Module):
    """Predicts predecessor latent states; carries no reward or continue head."""

    role = "reverse"

    def __init__(
        self,
        obs_spec: ObsSpec,
        latent: LatentSpec | None = None,
        config: WorldModelConfig | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.obs_spec = obs_spec
        self.latent = latent or LatentSpec()
        self.config = config or WorldModelConfig()
        self.rssm = RSSM(obs_spec.vec_size, self.latent, N_ACTION_INPUTS)
        if dtype != torch.float32:
            self.to(dtype)
        self.opt = torch.optim.Adam(self.parameters(), lr=self.config.lr)
        self.train_steps = 0

    def encode(self, h: torch.Tensor, obs_vec: torch.Tensor) -> torch.Tensor:
        return self.rssm.encode(h, obs_vec)

    def decode(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        return self.rssm.decode(h, z_flat)

    def dynamics_prior(self, h: torch.Tensor) -> torch.Tensor:
        return self.rssm.dynamics_prior(h)

    def action_onehot(self, actions: torch.Tensor) -> torch.Tensor:
        return F.one_hot(actions, N_ACTION_INPUTS).to(self.rssm.params_dtype())

    def initial_input(self, batch: int) -> torch.Tensor:
        marker = torch.full((batch,), N_ACTION_INPUTS - 1, dtype=torch.long)
        return self.action_onehot(marker)

    def cold_start(self, batch: int = 1) -> torch.Tensor:
        """Reverse recurrent state at a chunk boundary (no future context)."""
        h, z = self.rssm.initial_state(batch)
        return self.rssm.sequence_step(h, z, self.initial_input(batch))

    def reverse_step(
        self, h_next_rev: torch.Tensor, z_next: torch.Tensor, a_prev_onehot: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """One backward-time step: recurrent update from the successor's
        reversed context and the prior action, then the prior over the
        predecessor latent."""
        h_rev = self.rssm.sequence_step(h_next_rev, z_next, a_prev_onehot)
        return h_rev, self.rssm.dynamics_prior(h_rev)

    def observe_sequence(
        self,
        windows: np.ndarray,
        inventories: np.ndarray,
        facings: np.ndarray,
        actions: torch.Tensor,
        latent_mode: str = "sample",
        generator: torch.Generator | None = None,
    ) -> dict[str, torch.Tensor]:
        """Same filtering loop as the forward model, fed reversed sequences."""
        dtype = self.rssm.params_dtype()
        obs_vec = self.obs_spec.encode_arrays(windows, inventories, facings, dtype=dtype)
        batch, length = obs_vec.shape[:2]
        action_oh = self.action_onehot(actions)
        h = self.cold_start(batch)
        hs, zs, posts, priors = [], [], [], []
        for p in range(length):
            post_logits = self.rssm.encode(h, obs_vec[:, p])
            prior_logits = self.rssm.dynamics_prior(h)
            z = sample_latent(post_logits, latent_mode, generator)
            hs.append(h)
            zs.append(z)
            posts.append(post_logits)
            priors.append(prior_logits)
            if p < length - 1:
                h = self.rssm.sequence_step(h, z, action_oh[:, p])
        return {
            "h": torch.stack(hs, dim=1),
            "z": torch.stack(zs, dim=1),
            "post_logits": torch.stack(posts, dim=1),
            "prior_logits": torch.stack(priors, dim=1),
        }

    def loss(
        self,
        chunks: list[TransitionChunk],
        latent_mode: str = "sample",
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, dict[str, float]]:
        for chunk in chunks:
            if not chunk.is_reversed:
                raise ModelError("reverse world model requires reversed chunks")
            if chunk.rewards is not None or chunk.conts is not None:
                raise ModelError("reversed chunks must carry no reward/continue data")
        windows, inventories, facings, actions = _chunk_batch(chunks)
        seq = self.observe_sequence(windows, inventories, facings, actions, latent_mode, generator)
        decoded = self.decode(seq["h"], seq["z"])
        recon = self.obs_spec.reconstruction_loss(decoded, windows, inventories, facings)
        cfg = self.config
        kl_total, kl_dyn, kl_rep = kl_balance(
            seq["post_logits"], seq["prior_logits"], cfg.beta_dyn, cfg.beta_rep, cfg.free_bits
        )
        total = recon + kl_total
        parts = {
            "loss": float(total.detach()),
            "recon": float(recon.detach()),
            "kl_dyn": float(kl_dyn.detach()),
            "kl_rep": float(kl_rep.detach()),
        }
        return total, parts

    def train_batch_reverse(
        self,
        chunks: list[TransitionChunk],
        generator: torch.Generator | None = None,
    ) -> dict[str, float]:
        total, parts = self.loss(chunks, "sample", generator)
        if not torch.isfinite(total):
            raise ModelError(f"non-finite reverse-model loss: {parts}")
        self.opt.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(self.parameters(), self.config.grad_clip)
        self.opt.step()
        self.train_steps += 1
        return parts

    @torch.no_grad()
    def warmup_suffix(self, episode: EpisodeData, down_to: int) -> torch.Tensor:
        """Reverse recurrent state anchored at observation index `down_to`,
        after filtering the episode's future backwards from its last record.
        Mirrors training: reversed order, each observation paired with the
        action that led to it."""
        last = len(episode) - 1
        h = self.cold_start(1)
        for u in range(last, down_to, -1):
            obs_vec = self.obs_spec.encode_arrays(
                episode.windows[u][None], episode.inventories[u][None], episode.facings[u][None],
                dtype=self.rssm.params_dtype(),
            )
            z = sample_latent(self.encode(h, obs_vec), "mode")
            action = torch.as_tensor([int(episode.actions[u - 1])], dtype=torch.long)
            h = self.rssm.sequence_step(h, z, self.action_onehot(action))
        return h

    @torch.no_grad()
    def predict_predecessor(
        self, obs: Observation, action: int, context_h: torch.Tensor | None = None
    ) -> Observation:
        """Decode the most likely predecessor of `obs` under `action`, from a
        cold start unless a warmed-up reverse context is given."""
        h = self.cold_start(1) if context_h is None else context_h
        obs_vec = self.obs_spec.obs_to_vec(obs, dtype=self.rssm.params_dtype())
        z = sample_latent(self.encode(h, obs_vec), "mode")
        a_oh = self.action_onehot(torch.as_tensor([int(action)], dtype=torch.long))
        h_prev, prior_logits = self.reverse_step(h, z, a_oh)
        z_prev = sample_latent(prior_logits, "mode")
        return self.obs_spec.decode_observation(self.decode(h_prev, z_prev)[0])


@dataclass
class CounterfactualState:
    """Output of the explanation pipeline for one (timestep, action) query."""

    t: int
    counterfactual_action: int
    actual_obs: Observation
    expected_obs: Observation  # the state the agent should have been in at t
    successor_obs: Observation  # forward model's prediction for the action's outcome
    expected_image: Image.Image
    diff_mask: np.ndarray  # (win, win) bool, actual vs expected tiles
    same_as_actual: bool  # flagged when the query equals the recorded action


@torch.no_grad()
def generate_prior_state(
    fwm: ForwardWorldModel,
    rwm: ReverseWorldModel,
    episode: EpisodeData,
    t: int,
    a_cf: int | Action,
    successor_anchor: str = "posterior",
) -> CounterfactualState:
    """Generate the counterfactual prior state for taking `a_cf` at step `t`.

    Pipeline: (1) filter the real trajectory with the forward model up to t;
    (2) step the forward model with the counterfactual action and decode its
    greedy successor; (3) warm the reverse model over the reversed trajectory
    suffix down to t+1 and anchor it on the predicted successor's encoding
    ('posterior') or on its own context prior ('prior'); (4) one reverse step
    with the counterfactual action, decoded and rendered. Deterministic: all
    latents are taken greedily.
    """
    n_action_steps = len(episode) - 1
    if not 0 <= t < n_action_steps:
        raise ValueError(f"t={t} outside the episode's action steps [0, {n_action_steps})")
    a_cf = int(a_cf)
    if not 0 <= a_cf < N_ACTIONS:
        raise ValueError(f"unknown action {a_cf}")
    if successor_anchor not in ("posterior", "prior"):
        raise ValueError(f"unknown successor_anchor {successor_anchor!r}")

    # (1) forward filter to the real state at t
    fh, fz = fwm.filter_episode(episode)

    # (2) counterfactual successor under the forward model, greedy latents
    a_oh = fwm.action_onehot(torch.as_tensor([a_cf], dtype=torch.long))
    h_succ = fwm.sequence_step(fh[t][None], fz[t][None], a_oh)
    z_succ = sample_latent(fwm.dynamics_prior(h_succ), "mode")
    successor_obs = fwm.obs_spec.decode_observation(fwm.decode(h_succ, z_succ)[0])

    # (3) reverse context at t+1, anchored on the predicted successor
    h_rev = rwm.warmup_suffix(episode, down_to=t + 1)
    if successor_anchor == "posterior":
        succ_vec = rwm.obs_spec.obs_to_vec(successor_obs, dtype=rwm.rssm.params_dtype())
        z_anchor = sample_latent(rwm.encode(h_rev, succ_vec), "mode")
    else:
        z_anchor = sample_latent(rwm.dynamics_prior(h_rev), "mode")

    # (4) one reverse step with the counterfactual action
    a_rev_oh = rwm.action_onehot(torch.as_tensor([a_cf], dtype=torch.long))
    h_prev, prior_logits = rwm.reverse_step(h_rev, z_anchor, a_rev_oh)
    z_prev = sample_latent(prior_logits, "mode")
    expected_obs = rwm.obs_spec.decode_observation(rwm.decode(h_prev, z_prev)[0])

    actual_obs = episode.observation(t)
    return CounterfactualState(
        t=t,
        counterfactual_action=a_cf,
        actual_obs=actual_obs,
        expected_obs=expected_obs,
        successor_obs=successor_obs,
        expected_image=render_observation(expected_obs),
        diff_mask=np.asarray(actual_obs.window != expected_obs.window),
        same_as_actual=a_cf == int(episode.actions[t]),
    )
