"""Network building blocks: MLPs, categorical latents, and the RSSM core."""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class ModelError(RuntimeError):
    """Non-finite values or contract violations inside a model."""


@dataclass(frozen=True)
class LatentSpec:
    """Sizes of the recurrent/latent state and the MLP trunks."""

    h_dim: int = 128
    z_groups: int = 8
    z_classes: int = 8
    hidden: int = 256
    layers: int = 2

    def __post_init__(self):
        if min(self.h_dim, self.z_groups, self.z_classes, self.hidden, self.layers) < 1:
            raise ValueError("all latent sizes must be positive")

    @property
    def z_flat(self) -> int:
        return self.z_groups * self.z_classes


def mlp(in_dim: int, hidden: int, layers: int, out_dim: int) -> nn.Sequential:
    dims = [in_dim] + [hidden] * layers
    blocks: list[nn.Module] = []
    for a, b in zip(dims[:-1], dims[1:]):
        blocks += [nn.Linear(a, b), nn.SiLU()]
    blocks.append(nn.Linear(dims[-1], out_dim))
    return nn.Sequential(*blocks)


def check_finite(tensor: torch.Tensor, what: str) -> torch.Tensor:
    if not torch.isfinite(tensor).all():
        raise ModelError(f"non-finite values in {what}")
    return tensor


def sample_latent(
    logits: torch.Tensor,
    mode: str = "sample",
    generator: torch.Generator | None = None,
) -> torch.Tensor:
    """Latent from per-group categorical logits (..., groups, classes).

    'sample': straight-through one-hot (gradients flow through the softmax),
    'mode':   greedy one-hot, 'soft': the softmax probabilities themselves
    (used where the loss must be smooth, e.g. finite-difference checks).
    Returns a flat (..., groups*classes) tensor.
    """
    probs = torch.softmax(logits, dim=-1)
    if mode == "soft":
        return probs.reshape(*logits.shape[:-2], -1)
    if mode == "mode":
        idx = logits.argmax(dim=-1)
        hard = F.one_hot(idx, logits.shape[-1]).to(logits.dtype)
        return hard.reshape(*logits.shape[:-2], -1)
    if mode == "sample":
        flat = probs.reshape(-1, logits.shape[-1])
        idx = torch.multinomial(flat, 1, generator=generator).reshape(logits.shape[:-1])
        hard = F.one_hot(idx, logits.shape[-1]).to(logits.dtype)
        # Parenthesized so the forward value is exactly one-hot; the gradient
        # still flows through the softmax term.
        st = hard + (probs - probs.detach())
        return st.reshape(*logits.shape[:-2], -1)
    raise ValueError(f"unknown latent mode {mode!r}")


def categorical_kl(p_logits: torch.Tensor, q_logits: torch.Tensor) -> torch.Tensor:
    """KL(p || q) per categorical group; inputs (..., groups, classes)."""
    p_log = torch.log_softmax(p_logits, dim=-1)
    q_log = torch.log_softmax(q_logits, dim=-1)
    return (p_log.exp() * (p_log - q_log)).sum(-1)


def kl_balance(
    post_logits: torch.Tensor,
    prior_logits: torch.Tensor,
    beta_dyn: float,
    beta_rep: float,
    free_bits: float,
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Dynamics and representation KL terms with a per-group free-bits floor.

    Returns (weighted total, kl_dyn, kl_rep); the kl_* values are the clamped
    per-group sums averaged over the batch.
    """
    kl_dyn = categorical_kl(post_logits.detach(), prior_logits)
    kl_rep = categorical_kl(post_logits, prior_logits.detach())
    if free_bits > 0:
        floor = torch.full_like(kl_dyn, free_bits)
        kl_dyn = torch.maximum(kl_dyn, floor)
        kl_rep = torch.maximum(kl_rep, floor)
    kl_dyn = kl_dyn.sum(-1).mean()
    kl_rep = kl_rep.sum(-1).mean()
    return beta_dyn * kl_dyn + beta_rep * kl_rep, kl_dyn, kl_rep


class RSSM(nn.Module):
    """Recurrent state-space core: sequence model, encoder, dynamics prior,
    decoder. The forward and reverse world models share this architecture."""

    def __init__(self, obs_vec_size: int, latent: LatentSpec, n_action_inputs: int):
        super().__init__()
        self.latent = latent
        self.obs_vec_size = obs_vec_size
        self.n_action_inputs = n_action_inputs
        z_logit_size = latent.z_groups * latent.z_classes
        self.input_proj = nn.Linear(latent.z_flat + n_action_inputs, latent.hidden)
        self.cell = nn.GRUCell(latent.hidden, latent.h_dim)
        self.encoder = mlp(latent.h_dim + obs_vec_size, latent.hidden, latent.layers, z_logit_size)
        self.prior_net = mlp(latent.h_dim, latent.hidden, latent.layers, z_logit_size)
        self.decoder = mlp(latent.h_dim + latent.z_flat, latent.hidden, latent.layers, obs_vec_size)

    def params_dtype(self) -> torch.dtype:
        return self.input_proj.weight.dtype

    def initial_state(self, batch: int) -> tuple[torch.Tensor, torch.Tensor]:
        dtype = self.params_dtype()
        h = torch.zeros(batch, self.latent.h_dim, dtype=dtype)
        z = torch.zeros(batch, self.latent.z_flat, dtype=dtype)
        return h, z

    def sequence_step(self, h: torch.Tensor, z_flat: torch.Tensor, action_onehot: torch.Tensor) -> torch.Tensor:
        x = F.silu(self.input_proj(torch.cat([z_flat, action_onehot], dim=-1)))
        return check_finite(self.cell(x, h), "sequence model output")

    def encode(self, h: torch.Tensor, obs_vec: torch.Tensor) -> torch.Tensor:
        logits = self.encoder(torch.cat([h, obs_vec], dim=-1))
        out = logits.reshape(*logits.shape[:-1], self.latent.z_groups, self.latent.z_classes)
        return check_finite(out, "encoder logits")

    def dynamics_prior(self, h: torch.Tensor) -> torch.Tensor:
        logits = self.prior_net(h)
        out = logits.reshape(*logits.shape[:-1], self.latent.z_groups, self.latent.z_classes)
        return check_finite(out, "dynamics prior logits")

    def decode(self, h: torch.Tensor, z_flat: torch.Tensor) -> torch.Tensor:
        return check_finite(self.decoder(torch.cat([h, z_flat], dim=-1)), "decoder logits")
