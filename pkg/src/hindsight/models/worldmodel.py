"""Forward world model: RSSM with reward and continue heads, trained on
replay chunks; supplies latent imagination rollouts for policy learning."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from ..env import N_ACTION_INPUTS
from ..replay import EpisodeData, TransitionChunk
from .encoding import ObsSpec
from .nets import LatentSpec, ModelError, RSSM, check_finite, kl_balance, mlp, sample_latent


@dataclass(frozen=True)
class WorldModelConfig:
    lr: float = 1e-4
    grad_clip: float = 100.0
    beta_dyn: float = 1.0
    beta_rep: float = 0.1
    free_bits: float = 1.0
    reward_weight: float = 1.0
    cont_weight: float = 1.0


@dataclass
class ImaginedRollout:
    """Latent-space trajectory: H transitions from each start state."""

    h: torch.Tensor  # (H+1, B, h_dim)
    z: torch.Tensor  # (H+1, B, z_flat)
    actions: torch.Tensor  # (H, B) int64
    rewards: torch.Tensor  # (H, B) predicted at the arrived-at state
    conts: torch.Tensor  # (H, B) continue probabilities

    @property
    def horizon(self) -> int:
        return self.actions.shape[0]


def _chunk_batch(chunks: list[TransitionChunk]):
    windows = np.stack([c.windows for c in chunks])
    inventories = np.stack([c.inventories for c in chunks])
    facings = np.stack([c.facings for c in chunks])
    actions = torch.as_tensor(np.stack([c.actions for c in chunks]), dtype=torch.long)
    return windows, inventories, facings, actions


class ForwardWorldModel(nn.Module):
    """The six-headed dynamics model: sequence model, encoder, dynamics prior,
    decoder, reward predictor, continue predictor."""

    role = "forward"

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
        state_size = self.latent.h_dim + self.latent.z_flat
        self.reward_head = mlp(state_size, self.latent.hidden, self.latent.layers, 1)
        self.continue_head = mlp(state_size, self.latent.hidden, self.latent.layers, 1)
        if dtype != torch.float32:
            self.to(dtype)
        self.opt = torch.optim.Adam(self.parameters(), lr=self.config.lr)
        self.train_steps = 0

    # --- single-step heads -------------------------------------------------
    def encode(self, h: torch.Tensor, obs_vec: torch.Tensor) -> torch.Tensor:
        return self.rssm.encode(h, obs_vec)

    def sequence_step(self, h: torch.Tensor, z_flat: torch.Tensor, action_onehot: torch.Tensor) -> torch.Tensor:
        return self.rssm.sequence_step(h, z_flat, action_onehot)

    def dynamics_prior(self, h: torch.Tensor) -> torch.Tensor:
        return self.rssm.dynamics_prior(h)

    def decode(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        return self.rssm.decode(h, z_flat)

    def predict_reward(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        out = self.reward_head(torch.cat([h, z_flat], dim=-1)).squeeze(-1)
        return check_finite(out, "reward prediction")

    def predict_continue(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        logit = self.continue_head(torch.cat([h, z_flat], dim=-1)).squeeze(-1)
        return torch.sigmoid(check_finite(logit, "continue prediction"))

    def action_onehot(self, actions: torch.Tensor) -> torch.Tensor:
        return F.one_hot(actions, N_ACTION_INPUTS).to(self.rssm.params_dtype())

    def initial_input(self, batch: int) -> torch.Tensor:
        """Boundary action input fed to the first sequence step of a chunk."""
        marker = torch.full((batch,), N_ACTION_INPUTS - 1, dtype=torch.long)
        return self.action_onehot(marker)

    # --- sequence processing -----------------------------------------------
    def observe_sequence(
        self,
        windows: np.ndarray,
        inventories: np.ndarray,
        facings: np.ndarray,
        actions: torch.Tensor,
        latent_mode: str = "sample",
        generator: torch.Generator | None = None,
    ) -> dict[str, torch.Tensor]:
        """Filter a (B, L, ...) observation/action batch through the RSSM.

        The stored action at position p drives the transition to p+1, which
        holds for forward chunks and, by construction of the reversal
        transform, for reversed ones too. Position 0 is initialized from the
        zero state via the boundary marker action.
        """
        dtype = self.rssm.params_dtype()
        obs_vec = self.obs_spec.encode_arrays(windows, inventories, facings, dtype=dtype)
        batch, length = obs_vec.shape[:2]
        action_oh = self.action_onehot(actions)

        h, z = self.rssm.initial_state(batch)
        h = self.rssm.sequence_step(h, z, self.initial_input(batch))
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
            "obs_vec": obs_vec,
        }

    def loss(
        self,
        chunks: list[TransitionChunk],
        latent_mode: str = "sample",
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, dict[str, float], dict[str, torch.Tensor]]:
        windows, inventories, facings, actions = _chunk_batch(chunks)
        for chunk in chunks:
            if chunk.is_reversed:
                raise ModelError("forward world model received a reversed chunk")
        rewards = torch.as_tensor(np.stack([c.rewards for c in chunks]), dtype=self.rssm.params_dtype())
        conts = torch.as_tensor(
            np.stack([c.conts for c in chunks]).astype(np.float32), dtype=self.rssm.params_dtype()
        )
        seq = self.observe_sequence(windows, inventories, facings, actions, latent_mode, generator)

        decoded = self.decode(seq["h"], seq["z"])
        recon = self.obs_spec.reconstruction_loss(decoded, windows, inventories, facings)
        reward_pred = self.predict_reward(seq["h"], seq["z"])
        reward_loss = F.mse_loss(reward_pred, rewards)
        cont_logit = self.continue_head(torch.cat([seq["h"], seq["z"]], dim=-1)).squeeze(-1)
        cont_loss = F.binary_cross_entropy_with_logits(cont_logit, conts)
        cfg = self.config
        kl_total, kl_dyn, kl_rep = kl_balance(
            seq["post_logits"], seq["prior_logits"], cfg.beta_dyn, cfg.beta_rep, cfg.free_bits
        )
        total = recon + cfg.reward_weight * reward_loss + cfg.cont_weight * cont_loss + kl_total
        parts = {
            "loss": float(total.detach()),
            "recon": float(recon.detach()),
            "reward": float(reward_loss.detach()),
            "cont": float(cont_loss.detach()),
            "kl_dyn": float(kl_dyn.detach()),
            "kl_rep": float(kl_rep.detach()),
        }
        return total, parts, seq

    def train_batch(
        self,
        chunks: list[TransitionChunk],
        generator: torch.Generator | None = None,
    ) -> tuple[dict[str, float], dict[str, torch.Tensor]]:
        """One optimizer step; returns loss components and detached states."""
        total, parts, seq = self.loss(chunks, "sample", generator)
        if not torch.isfinite(total):
            raise ModelError(f"non-finite world-model loss: {parts}")
        self.opt.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(self.parameters(), self.config.grad_clip)
        self.opt.step()
        for param in self.parameters():
            check_finite(param.data, "world-model parameters after update")
        self.train_steps += 1
        conts = torch.as_tensor(np.stack([c.conts for c in chunks]).astype(np.float32))
        rewards = torch.as_tensor(np.stack([c.rewards for c in chunks]))
        states = {"h": seq["h"].detach(), "z": seq["z"].detach(), "cont": conts, "reward": rewards}
        return parts, states

    # --- inference ----------------------------------------------------------
    @torch.no_grad()
    def filter_episode(self, episode: EpisodeData, latent_mode: str = "mode"):
        actions = torch.as_tensor(episode.actions[None, :], dtype=torch.long)
        seq = self.observe_sequence(
            episode.windows[None], episode.inventories[None], episode.facings[None], actions, latent_mode
        )
        return seq["h"][0], seq["z"][0]

    @torch.no_grad()
    def rollout_imagination(
        self,
        h0: torch.Tensor,
        z0: torch.Tensor,
        policy_fn,
        horizon: int,
        generator: torch.Generator | None = None,
        latent_mode: str = "sample",
    ) -> ImaginedRollout:
        """Iterate dynamics prior + sequence model under the policy; no env access."""
        if horizon < 1:
            raise ValueError("horizon must be >= 1")
        h, z = h0, z0
        hs, zs, acts, rewards, conts = [h], [z], [], [], []
        for _ in range(horizon):
            action = policy_fn(h, z)
            h = self.sequence_step(h, z, self.action_onehot(action))
            z = sample_latent(self.dynamics_prior(h), latent_mode, generator)
            hs.append(h)
            zs.append(z)
            acts.append(action)
            rewards.append(self.predict_reward(h, z))
            conts.append(self.predict_continue(h, z))
        return ImaginedRollout(
            h=torch.stack(hs),
            z=torch.stack(zs),
            actions=torch.stack(acts),
            rewards=torch.stack(rewards),
            conts=torch.stack(conts),
        )

    @torch.no_grad()
    def next_observation_tile_accuracy(self, episodes: list[EpisodeData]) -> float:
        """Open-loop one-step prediction: from the filtered state at t and the
        taken action, predict x_{t+1} through the dynamics prior and decoder."""
        total, correct = 0, 0
        for ep in episodes:
            if len(ep) < 2:
                continue
            h, z = self.filter_episode(ep)
            actions = torch.as_tensor(ep.actions[:-1], dtype=torch.long)
            h_next = self.sequence_step(h[:-1], z[:-1], self.action_onehot(actions))
            z_next = sample_latent(self.dynamics_prior(h_next), "mode")
            decoded = self.decode(h_next, z_next)
            tiles, _, _ = self.obs_spec.split_logits(decoded)
            pred = tiles.argmax(-1).numpy()
            target = ep.windows[1:].reshape(len(ep) - 1, -1)
            correct += int((pred == target).sum())
            total += target.size
        return correct / max(total, 1)
