"""Finite-difference gradient checks on tiny float64 configurations.

The losses are evaluated in their smooth mode: soft latents (the softmax
itself rather than straight-through samples, whose hard forward value is
piecewise constant) and no free-bits clamp. The KL terms carry stop-gradients
by design, so the checked scalar holds those branches frozen at their
base-point values; the test first asserts that the frozen surrogate's
autograd equals the actual training loss's autograd, then matches that
gradient against central differences.
"""
import numpy as np
import pytest
import torch

from hindsight.agent import ActorCritic, PolicyConfig
from hindsight.env import reset, step
from hindsight.models import (
    ForwardWorldModel,
    LatentSpec,
    ObsSpec,
    ReverseWorldModel,
    WorldModelConfig,
)
from hindsight.replay import EpisodeBuilder, ReplayBuffer, reverse_transform

from tests.fdcheck import relative_gradient_error

TINY = LatentSpec(h_dim=4, z_groups=2, z_classes=3, hidden=6, layers=1)
SMOOTH = WorldModelConfig(free_bits=0.0)

MODEL_TOLERANCE = 1e-4
POLICY_TOLERANCE = 1e-3


@pytest.fixture(scope="module")
def tiny_chunks():
    # 3x3 room with a cow: small window keeps the parameter count low enough
    # for full-coordinate central differences, while interact still produces
    # inventory and reward variety in the data.
    from tests.test_env import make_room
    from hindsight.env import Ingredient, Recipe, RecipeStep, Tile

    recipe = Recipe(steps=(RecipeStep((Ingredient.MILK,), Tile.STOVE, 1.0),))
    world = make_room(size=3, tiles={(1, 0): Tile.COW, (2, 2): Tile.STOVE}, recipe=recipe, max_steps=30)
    rng = np.random.default_rng(3)
    builder = EpisodeBuilder("tiny-room", 0, world.observe())
    sim, cont = world, True
    while cont:
        action = int(rng.integers(0, 6))
        sim, obs, reward, cont = step(sim, action)
        builder.add(action, reward, cont, obs)
    buf = ReplayBuffer()
    buf.append(builder.finish(truncated=sim.truncated))
    return buf.sample_chunks(1, 4, seed=0), ObsSpec.for_world(world)


def _chunk_arrays(chunks):
    windows = np.stack([c.windows for c in chunks])
    inventories = np.stack([c.inventories for c in chunks])
    facings = np.stack([c.facings for c in chunks])
    actions = torch.as_tensor(np.stack([c.actions for c in chunks]), dtype=torch.long)
    return windows, inventories, facings, actions


def _frozen_kl_loss(model, chunks, frozen: dict):
    """The training loss with the stop-gradient KL branches pinned to the
    tensors captured at the base point; identical gradients, FD-checkable."""
    from hindsight.models import categorical_kl

    windows, inventories, facings, actions = _chunk_arrays(chunks)
    seq = model.observe_sequence(windows, inventories, facings, actions, latent_mode="soft")
    decoded = model.decode(seq["h"], seq["z"])
    loss = model.obs_spec.reconstruction_loss(decoded, windows, inventories, facings)
    if model.role == "forward":
        rewards = torch.as_tensor(np.stack([c.rewards for c in chunks]), dtype=torch.float64)
        conts = torch.as_tensor(np.stack([c.conts for c in chunks]).astype(np.float64))
        loss = loss + torch.nn.functional.mse_loss(model.predict_reward(seq["h"], seq["z"]), rewards)
        cont_logit = model.continue_head(torch.cat([seq["h"], seq["z"]], dim=-1)).squeeze(-1)
        loss = loss + torch.nn.functional.binary_cross_entropy_with_logits(cont_logit, conts)
    kl_dyn = categorical_kl(frozen["post"], seq["prior_logits"]).sum(-1).mean()
    kl_rep = categorical_kl(seq["post_logits"], frozen["prior"]).sum(-1).mean()
    return loss + model.config.beta_dyn * kl_dyn + model.config.beta_rep * kl_rep


def _grads(model, loss):
    model.zero_grad()
    loss.backward()
    return torch.cat(
        [(p.grad if p.grad is not None else torch.zeros_like(p)).reshape(-1) for p in model.parameters()]
    ).clone()


def _check_model(model, chunks):
    windows, inventories, facings, actions = _chunk_arrays(chunks)
    with torch.no_grad():
        base_seq = model.observe_sequence(windows, inventories, facings, actions, latent_mode="soft")
    frozen = {"post": base_seq["post_logits"], "prior": base_seq["prior_logits"]}

    # The frozen surrogate must reproduce the training loss's gradient exactly.
    training_grad = _grads(model, model.loss(chunks, latent_mode="soft")[0])
    surrogate_grad = _grads(model, _frozen_kl_loss(model, chunks, frozen))
    assert torch.allclose(training_grad, surrogate_grad, atol=1e-12), "stop-gradient structure changed"

    err = relative_gradient_error(model, lambda: _frozen_kl_loss(model, chunks, frozen))
    return err


def test_world_model_gradients_match_finite_differences(tiny_chunks):
    chunks, obs_spec = tiny_chunks
    torch.manual_seed(0)
    model = ForwardWorldModel(obs_spec, TINY, SMOOTH, dtype=torch.float64)
    err = _check_model(model, chunks)
    assert err < MODEL_TOLERANCE, f"world-model gradient relative error {err:.3e}"


def test_reverse_model_gradients_match_finite_differences(tiny_chunks):
    chunks, obs_spec = tiny_chunks
    torch.manual_seed(1)
    model = ReverseWorldModel(obs_spec, TINY, SMOOTH, dtype=torch.float64)
    reversed_chunks = [reverse_transform(c) for c in chunks]
    err = _check_model(model, reversed_chunks)
    assert err < MODEL_TOLERANCE, f"reverse-model gradient relative error {err:.3e}"


def test_policy_gradients_match_finite_differences():
    # Two-state latent bandit: fixed states, per-action lookahead values, and
    # critic regression targets; actor improvement loss plus critic MSE.
    torch.manual_seed(2)
    policy = ActorCritic(TINY, PolicyConfig(), dtype=torch.float64)
    states_h = torch.tensor([[0.3, -1.0, 0.5, 2.0], [0.0, 1.5, -0.7, 0.1]], dtype=torch.float64)
    states_z = torch.tensor(
        [[1.0, 0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 1.0, 0.0, 1.0, 0.0]], dtype=torch.float64
    )
    action_values = torch.tensor(
        [[0.5, 1.7, -0.2, 0.0, 3.1, 0.4], [11.0, 0.0, 0.3, -1.0, 0.2, 0.1]], dtype=torch.float64
    )
    weights = torch.tensor([1.0, 0.8], dtype=torch.float64)
    targets = torch.tensor([0.9, -2.0], dtype=torch.float64)

    def loss_fn():
        logits = policy.action_logits(states_h, states_z)
        actor_loss = policy.policy_loss(logits, action_values, weights)
        critic_loss = ((policy.value(states_h, states_z) - targets) ** 2).mean()
        return actor_loss + critic_loss

    err = relative_gradient_error(policy, loss_fn)
    assert err < POLICY_TOLERANCE, f"policy gradient relative error {err:.3e}"
