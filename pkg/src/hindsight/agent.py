"""Actor-critic trained on imagined latent trajectories from the forward
world model. Discrete REINFORCE actor with entropy bonus; critic regressed
onto lambda-returns computed against a periodically copied slow target."""
from __future__ import annotations

import copy
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .env import N_ACTIONS
from .models.nets import LatentSpec, ModelError, check_finite, mlp
from .models.worldmodel import ForwardWorldModel


@dataclass(frozen=True)
class PolicyConfig:
    lr: float = 3e-5
    entropy_coef: float = 3e-3
    discount: float = 0.99
    lam: float = 0.95
    horizon: int = 15
    grad_clip: float = 100.0
    target_interval: int = 100  # critic updates between slow-target copies
    max_starts: int = 256  # imagination rollouts per update
    return_scale_decay: float = 0.99  # EMA for the advantage scale; 0 disables scaling
    imagination_latents: str = "mode"  # deterministic env: greedy latents give a clean twin
    improve_temp: float = 0.3  # Boltzmann temperature of the actor's lookahead target
    value_clip: float = 0.0  # >0 bounds imagined rewards/values to [0, clip] (task return ceiling)
    replay_lam: float = 1.0  # lambda for replay-chunk value targets; 1.0 = within-chunk Monte-Carlo
    critic_lr_scale: float = 3.0  # critic learning-rate multiplier over the actor's
    value_expectile: float = 0.5  # >0.5 fits an upper expectile: best-return-within-data
    # rather than the behavior average, which mixed demo/exploration replay
    # would otherwise wash out
    bc_weight: float = 0.0  # >0 clones demonstration actions on scripted chunks; the
    # deliberate overfit to the reference trajectory the study design relies on


def lambda_returns(
    rewards: torch.Tensor,
    conts: torch.Tensor,
    values: torch.Tensor,
    discount: float,
    lam: float,
) -> torch.Tensor:
    """Lambda-returns over an imagined trajectory.

    rewards/conts: (H, B) aligned with arrived-at states s_1..s_H;
    values: (H+1, B) state values V(s_0..s_H). Returns (H, B) targets for
    V(s_0..s_{H-1}). With lam=0 these are one-step bootstraps; with lam=1 and
    no termination, discounted Monte-Carlo sums bootstrapped at the horizon.
    """
    horizon = rewards.shape[0]
    out = torch.empty_like(rewards)
    nxt = values[-1]
    for i in range(horizon - 1, -1, -1):
        nxt = rewards[i] + discount * conts[i] * ((1 - lam) * values[i + 1] + lam * nxt)
        out[i] = nxt
    return out


class ReturnScale:
    """EMA of the imagined-return spread (5th..95th percentile); advantages
    are divided by max(1, spread) so their scale is task-independent."""

    def __init__(self, decay: float):
        self.decay = decay
        self.low: float | None = None
        self.high: float | None = None

    def update(self, returns: torch.Tensor) -> float:
        low = float(torch.quantile(returns.detach().float(), 0.05))
        high = float(torch.quantile(returns.detach().float(), 0.95))
        if self.low is None:
            self.low, self.high = low, high
        else:
            self.low = self.decay * self.low + (1 - self.decay) * low
            self.high = self.decay * self.high + (1 - self.decay) * high
        return max(1.0, self.high - self.low)


class ActorCritic(nn.Module):
    """Actor and critic MLPs over the model state (h, z)."""

    role = "policy"

    def __init__(
        self,
        latent: LatentSpec,
        config: PolicyConfig | None = None,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        self.latent = latent
        self.config = config or PolicyConfig()
        # The checkpoint header stores specs under these names for every role;
        # the policy has no observation inputs but keeps the field for parity.
        from .models.encoding import ObsSpec

        self.obs_spec = ObsSpec(window=1)
        state_size = latent.h_dim + latent.z_flat
        self.actor = mlp(state_size, latent.hidden, latent.layers, N_ACTIONS)
        self.critic = mlp(state_size, latent.hidden, latent.layers, 1)
        self.target_critic = copy.deepcopy(self.critic)
        for param in self.target_critic.parameters():
            param.requires_grad_(False)
        if dtype != torch.float32:
            self.to(dtype)
        self.opt = torch.optim.Adam(
            [
                {"params": list(self.actor.parameters()), "lr": self.config.lr},
                {"params": list(self.critic.parameters()), "lr": self.config.lr * self.config.critic_lr_scale},
            ]
        )
        self.train_steps = 0
        self.return_scale = ReturnScale(self.config.return_scale_decay)

    def action_logits(self, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        return check_finite(self.actor(torch.cat([h, z], dim=-1)), "action logits")

    def value(self, h: torch.Tensor, z: torch.Tensor, target: bool = False) -> torch.Tensor:
        net = self.target_critic if target else self.critic
        return net(torch.cat([h, z], dim=-1)).squeeze(-1)

    @torch.no_grad()
    def act(
        self,
        h: torch.Tensor,
        z: torch.Tensor,
        mode: str = "sample",
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Action indices: softmax samples, or the argmax (lowest index wins ties)."""
        logits = self.action_logits(h, z)
        if mode == "greedy":
            return logits.argmax(dim=-1)
        if mode == "sample":
            probs = torch.softmax(logits, dim=-1)
            return torch.multinomial(probs, 1, generator=generator).squeeze(-1)
        raise ValueError(f"unknown act mode {mode!r}")

    def policy_loss(
        self,
        logits: torch.Tensor,
        action_values: torch.Tensor,
        weights: torch.Tensor,
    ) -> torch.Tensor:
        """Policy-improvement loss: cross-entropy toward the Boltzmann
        distribution over per-action lookahead values, minus an entropy
        bonus, weighted by trajectory liveness. Unlike a sampled policy
        gradient, its gradient (pi - target) stays strong on actions the
        collapsed policy no longer samples."""
        target = torch.softmax(action_values.detach() / self.config.improve_temp, dim=-1)
        log_pi = torch.log_softmax(logits, dim=-1)
        ce = -(target * log_pi).sum(-1)
        entropy = -(log_pi.exp() * log_pi).sum(-1)
        return ((ce - self.config.entropy_coef * entropy) * weights).mean()

    def _expectile(self, pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
        """Per-element expectile regression loss on (target - pred)."""
        err = target - pred
        tau = self.config.value_expectile
        weight = torch.where(err > 0, torch.full_like(err, tau), torch.full_like(err, 1 - tau))
        return weight * err**2

    def _clip(self, x: torch.Tensor) -> torch.Tensor:
        """Bound imagined quantities to the achievable return range; a model
        hallucinating value beyond the task ceiling otherwise feeds a
        bootstrap runaway in which finishing the task looks like a loss."""
        if self.config.value_clip > 0:
            return x.clamp(0.0, self.config.value_clip)
        return x

    @torch.no_grad()
    def lookahead_values(self, fwm, h: torch.Tensor, z: torch.Tensor) -> torch.Tensor:
        """One-step imagined Q for every action: reward on arrival plus the
        discounted slow-target value, gated by the continue probability."""
        batch = h.shape[0]
        n_actions = N_ACTIONS
        h_rep = h.repeat_interleave(n_actions, dim=0)
        z_rep = z.repeat_interleave(n_actions, dim=0)
        actions = torch.arange(n_actions).repeat(batch)
        h_next = fwm.sequence_step(h_rep, z_rep, fwm.action_onehot(actions))
        from .models.nets import sample_latent

        z_next = sample_latent(fwm.dynamics_prior(h_next), self.config.imagination_latents)
        rewards = self._clip(fwm.predict_reward(h_next, z_next))
        conts = fwm.predict_continue(h_next, z_next)
        values = self._clip(self.value(h_next, z_next, target=True))
        q = rewards + self.config.discount * conts * values
        return q.reshape(batch, n_actions)

    def critic_replay_update(
        self,
        h: torch.Tensor,
        z: torch.Tensor,
        returns_to_go: torch.Tensor,
    ) -> dict[str, float]:
        """Critic regression onto exact discounted return-to-go along
        replayed chunks.

        Imagination rollouts only reveal rewards the current policy reaches;
        replayed episodes (demonstrations included) carry observed returns
        with no bootstrap error, so this grounds the value function along
        trajectories that actually solved the task. With an upper expectile
        the critic tracks the best observed outcome per state rather than
        the behavior mixture's average.
        """
        cfg = self.config
        dtype = next(self.critic.parameters()).dtype
        targets = self._clip(returns_to_go.to(dtype))
        pred = self.value(h.detach(), z.detach())
        loss = self._expectile(pred, targets).mean()
        self.opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.parameters(), cfg.grad_clip)
        self.opt.step()
        return {"replay_critic": float(loss.detach())}

    def actor_clone_update(
        self,
        h: torch.Tensor,
        z: torch.Tensor,
        actions: torch.Tensor,
    ) -> dict[str, float]:
        """Clone demonstration actions on replayed scripted chunks: the agent
        is deliberately overfit to the reference trajectory (noise steps in
        the demos are uniform, so the greedy argmax stays the optimal act)."""
        mask = actions < N_ACTIONS  # drop the terminal no-action marker
        logits = self.action_logits(h[mask].detach(), z[mask].detach())
        loss = self.config.bc_weight * F.cross_entropy(logits, actions[mask])
        self.opt.zero_grad()
        loss.backward()
        nn.utils.clip_grad_norm_(self.parameters(), self.config.grad_clip)
        self.opt.step()
        return {"bc": float(loss.detach())}

    def imagine_update(
        self,
        fwm: ForwardWorldModel,
        start_h: torch.Tensor,
        start_z: torch.Tensor,
        generator: torch.Generator | None = None,
        start_cont: torch.Tensor | None = None,
    ) -> dict[str, float]:
        """One actor-critic update from imagined rollouts starting at the
        given (detached) model states. Terminal states are excluded as starts:
        no transition out of them exists in replay, so imagining from them
        only manufactures junk targets."""
        cfg = self.config
        flat_h = start_h.reshape(-1, start_h.shape[-1])
        flat_z = start_z.reshape(-1, start_z.shape[-1])
        terminal_h = terminal_z = None
        if start_cont is not None:
            live = start_cont.reshape(-1) > 0.5
            terminal_h, terminal_z = flat_h[~live].detach(), flat_z[~live].detach()
            if live.any():
                flat_h, flat_z = flat_h[live], flat_z[live]
        if flat_h.shape[0] > cfg.max_starts:
            idx = torch.randperm(flat_h.shape[0], generator=generator)[: cfg.max_starts]
            flat_h, flat_z = flat_h[idx], flat_z[idx]

        def policy_fn(h, z):
            return self.act(h, z, "sample", generator)

        rollout = fwm.rollout_imagination(
            flat_h, flat_z, policy_fn, cfg.horizon, generator, latent_mode=cfg.imagination_latents
        )

        with torch.no_grad():
            values = self._clip(self.value(rollout.h, rollout.z, target=True))  # (H+1, B)
            returns = self._clip(
                lambda_returns(self._clip(rollout.rewards), rollout.conts, values, cfg.discount, cfg.lam)
            )
            if cfg.return_scale_decay > 0:
                self.return_scale.update(returns)  # tracked for metrics/scaling consumers
            # Down-weight steps after a predicted episode end.
            live = torch.cat([torch.ones_like(rollout.conts[:1]), rollout.conts[:-1]], dim=0)
            weights = torch.cumprod(live, dim=0)

        states_h = rollout.h[:-1].reshape(-1, rollout.h.shape[-1])
        states_z = rollout.z[:-1].reshape(-1, rollout.z.shape[-1])
        q_values = self.lookahead_values(fwm, states_h, states_z)
        logits = self.action_logits(states_h, states_z)
        actor_loss = self.policy_loss(logits, q_values, weights.reshape(-1))
        with torch.no_grad():
            log_pi = torch.log_softmax(logits, dim=-1)
            entropy = -(log_pi.exp() * log_pi).sum(-1)

        online_values = self.value(states_h.detach(), states_z.detach()).reshape(cfg.horizon, -1)
        critic_loss = (weights * self._expectile(online_values, returns.detach())).mean()
        if terminal_h is not None and terminal_h.shape[0] > 0:
            # Boundary condition: no future reward at terminal states.
            critic_loss = critic_loss + (self.value(terminal_h, terminal_z) ** 2).mean()

        total = actor_loss + critic_loss
        if not torch.isfinite(total):
            raise ModelError(f"non-finite policy loss: actor={actor_loss}, critic={critic_loss}")
        self.opt.zero_grad()
        total.backward()
        nn.utils.clip_grad_norm_(self.parameters(), cfg.grad_clip)
        self.opt.step()
        self.train_steps += 1
        if self.train_steps % cfg.target_interval == 0:
            self.target_critic.load_state_dict(self.critic.state_dict())
        return {
            "actor": float(actor_loss.detach()),
            "critic": float(critic_loss.detach()),
            "entropy": float(entropy.mean().detach()),
            "imagined_return": float(returns.mean().detach()),
        }
