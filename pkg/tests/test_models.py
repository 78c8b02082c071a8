"""Forward/reverse world model unit tests: shapes, fixed points, sampling,
KL properties, determinism, checkpoint round trips, and architecture parity."""
import dataclasses

import numpy as np
import pytest
import torch

from hindsight.env import Action, N_ACTION_INPUTS, NO_PREDECESSOR, reset, step
from hindsight.models import (
    ForwardWorldModel,
    LatentSpec,
    ModelError,
    ObsSpec,
    ReverseWorldModel,
    WorldModelConfig,
    categorical_kl,
    generate_prior_state,
    load_model,
    sample_latent,
    save_model,
)
from hindsight.replay import EpisodeBuilder, ReplayBuffer, reverse_transform

TINY = LatentSpec(h_dim=8, z_groups=3, z_classes=4, hidden=16, layers=1)


@pytest.fixture(scope="module")
def micro_world(registry):
    world, _ = reset(registry.scenario("micro-static"), 0, registry)
    return world


@pytest.fixture(scope="module")
def micro_episode(registry):
    scenario = registry.scenario("micro-static")
    world, obs = reset(scenario, 0, registry)
    rng = np.random.default_rng(5)
    builder = EpisodeBuilder("micro-static", 0, obs)
    cont = True
    while cont:
        action = int(rng.integers(0, 6))
        world, obs, reward, cont = step(world, action)
        builder.add(action, reward, cont, obs)
    return builder.finish(truncated=world.truncated)


@pytest.fixture()
def fwm(micro_world):
    torch.manual_seed(0)
    return ForwardWorldModel(ObsSpec.for_world(micro_world), TINY)


@pytest.fixture()
def rwm(micro_world):
    torch.manual_seed(1)
    return ReverseWorldModel(ObsSpec.for_world(micro_world), TINY)


def chunks_from(episode, n, length, seed=0):
    buf = ReplayBuffer()
    buf.append(episode)
    return buf.sample_chunks(n, length, seed=seed)


class TestShapes:
    def test_encode_logits_shape(self, fwm, micro_world):
        obs_vec = fwm.obs_spec.obs_to_vec(micro_world.observe())
        h = torch.zeros(1, TINY.h_dim)
        logits = fwm.encode(h, obs_vec)
        assert logits.shape == (1, TINY.z_groups, TINY.z_classes)

    def test_prior_matches_encoder_shape(self, fwm):
        h = torch.randn(5, TINY.h_dim)
        assert fwm.dynamics_prior(h).shape == (5, TINY.z_groups, TINY.z_classes)

    def test_decode_covers_every_cell_and_class(self, fwm):
        h = torch.randn(2, TINY.h_dim)
        z = torch.randn(2, TINY.z_flat)
        tiles, inv, facing = fwm.obs_spec.split_logits(fwm.decode(h, z))
        assert tiles.shape == (2, fwm.obs_spec.n_cells, fwm.obs_spec.n_tile_classes)
        assert inv.shape == (2, fwm.obs_spec.n_ingredients, fwm.obs_spec.inventory_buckets)
        assert facing.shape == (2, fwm.obs_spec.n_facings)

    def test_sequence_step_output_dim(self, fwm):
        h = torch.randn(3, TINY.h_dim)
        z = torch.randn(3, TINY.z_flat)
        a = fwm.action_onehot(torch.tensor([0, 3, 5]))
        assert fwm.sequence_step(h, z, a).shape == (3, TINY.h_dim)

    def test_continue_is_probability(self, fwm):
        h, z = torch.randn(10, TINY.h_dim), torch.randn(10, TINY.z_flat)
        c = fwm.predict_continue(h, z)
        assert ((c >= 0) & (c <= 1)).all()

    def test_batch_of_8x65_consumes_520_state_updates(self, fwm):
        ep_len = 80
        windows = np.zeros((ep_len, 5, 5), dtype=np.int16)
        inventories = np.zeros((ep_len, 8), dtype=np.int16)
        facings = np.zeros(ep_len, dtype=np.int16)
        actions = torch.zeros(8, 65, dtype=torch.long)
        seq = fwm.observe_sequence(
            np.tile(windows[None, :65], (8, 1, 1, 1)),
            np.tile(inventories[None, :65], (8, 1, 1)),
            np.tile(facings[None, :65], (8, 1)),
            actions,
            latent_mode="mode",
        )
        assert seq["h"].shape[:2] == (8, 65)
        assert seq["h"].shape[0] * seq["h"].shape[1] == 520


class TestZeroFixedPoint:
    def test_zero_params_zero_state(self, fwm):
        with torch.no_grad():
            for p in fwm.parameters():
                p.zero_()
        h = torch.zeros(1, TINY.h_dim)
        z = torch.zeros(1, TINY.z_flat)
        a = fwm.action_onehot(torch.tensor([int(Action.NOOP)]))
        out = fwm.sequence_step(h, z, a)
        assert torch.equal(out, torch.zeros_like(out))

    def test_zero_params_uniform_logits(self, fwm, micro_world):
        with torch.no_grad():
            for p in fwm.parameters():
                p.zero_()
        obs_vec = fwm.obs_spec.obs_to_vec(micro_world.observe())
        logits = fwm.encode(torch.zeros(1, TINY.h_dim), obs_vec)
        assert torch.allclose(logits, torch.zeros_like(logits))

    def test_reverse_model_shares_fixed_point(self, rwm):
        with torch.no_grad():
            for p in rwm.parameters():
                p.zero_()
        h, z = rwm.rssm.initial_state(1)
        h_rev, logits = rwm.reverse_step(h, z, rwm.initial_input(1))
        assert torch.equal(h_rev, torch.zeros_like(h_rev))
        assert torch.allclose(logits, torch.zeros_like(logits))


class TestLatentSampling:
    def test_straight_through_one_hot_per_group(self):
        logits = torch.randn(7, 4, 5)
        z = sample_latent(logits, "sample", torch.Generator().manual_seed(0))
        grouped = z.reshape(7, 4, 5)
        assert torch.allclose(grouped.sum(-1), torch.ones(7, 4))
        assert ((grouped == 0) | (grouped == 1)).all()

    def test_mode_is_argmax(self):
        logits = torch.randn(3, 2, 6)
        z = sample_latent(logits, "mode").reshape(3, 2, 6)
        assert torch.equal(z.argmax(-1), logits.argmax(-1))

    def test_soft_probs_normalized(self):
        logits = torch.randn(3, 2, 6)
        z = sample_latent(logits, "soft").reshape(3, 2, 6)
        assert torch.allclose(z.sum(-1), torch.ones(3, 2))

    def test_gradient_flows_through_sample(self):
        logits = torch.randn(2, 3, 4, requires_grad=True)
        z = sample_latent(logits, "sample", torch.Generator().manual_seed(0))
        z.sum().backward()
        assert logits.grad is not None


class TestKl:
    def test_kl_nonnegative_and_zero_on_equal(self):
        p = torch.randn(10, 4, 6)
        assert (categorical_kl(p, torch.randn(10, 4, 6)) >= 0).all()
        assert torch.allclose(categorical_kl(p, p), torch.zeros(10, 4))


class TestTraining:
    def test_loss_decreases_on_fixed_dataset(self, fwm, micro_episode):
        chunks = chunks_from(micro_episode, 8, 10)
        gen = torch.Generator().manual_seed(0)
        first = fwm.train_batch(chunks, gen)[0]["loss"]
        for _ in range(60):
            last = fwm.train_batch(chunks, gen)[0]["loss"]
        assert last < first

    def test_kl_floor_by_construction(self, fwm, micro_episode):
        chunks = chunks_from(micro_episode, 2, 8)
        parts = fwm.train_batch(chunks)[0]
        floor = fwm.config.free_bits * TINY.z_groups
        assert parts["kl_dyn"] >= floor - 1e-6
        assert parts["kl_rep"] >= floor - 1e-6

    def test_reverse_loss_components_and_decrease(self, rwm, micro_episode):
        chunks = [reverse_transform(c) for c in chunks_from(micro_episode, 8, 10)]
        gen = torch.Generator().manual_seed(0)
        parts = rwm.train_batch_reverse(chunks, gen)
        assert set(parts) == {"loss", "recon", "kl_dyn", "kl_rep"}
        first = parts["loss"]
        for _ in range(60):
            last = rwm.train_batch_reverse(chunks, gen)["loss"]
        assert last < first

    def test_reverse_model_rejects_forward_chunks(self, rwm, micro_episode):
        with pytest.raises(ModelError):
            rwm.train_batch_reverse(chunks_from(micro_episode, 1, 6))

    def test_forward_model_rejects_reversed_chunks(self, fwm, micro_episode):
        with pytest.raises(ModelError):
            fwm.train_batch([reverse_transform(c) for c in chunks_from(micro_episode, 1, 6)])

    def test_fixed_seed_bit_stable_losses(self, micro_world, micro_episode):
        def run():
            torch.manual_seed(7)
            model = ForwardWorldModel(ObsSpec.for_world(micro_world), TINY)
            gen = torch.Generator().manual_seed(7)
            chunks = chunks_from(micro_episode, 4, 8, seed=3)
            return [model.train_batch(chunks, gen)[0]["loss"] for _ in range(5)]

        assert run() == run()


class TestRollout:
    def test_horizon_one_single_transition(self, fwm):
        h = torch.zeros(2, TINY.h_dim)
        z = torch.zeros(2, TINY.z_flat)
        roll = fwm.rollout_imagination(h, z, lambda h, z: torch.zeros(2, dtype=torch.long), 1)
        assert roll.horizon == 1
        assert roll.h.shape[0] == 2 and roll.actions.shape == (1, 2)

    def test_greedy_rollout_repeats_identically(self, fwm):
        h = torch.randn(3, TINY.h_dim)
        z = sample_latent(torch.randn(3, TINY.z_groups, TINY.z_classes), "mode")
        policy = lambda h, z: torch.ones(h.shape[0], dtype=torch.long)
        a = fwm.rollout_imagination(h, z, policy, 5, latent_mode="mode")
        b = fwm.rollout_imagination(h, z, policy, 5, latent_mode="mode")
        assert torch.equal(a.h, b.h) and torch.equal(a.rewards, b.rewards)

    def test_horizon_zero_rejected(self, fwm):
        h, z = fwm.rssm.initial_state(1)
        with pytest.raises(ValueError):
            fwm.rollout_imagination(h, z, lambda h, z: torch.zeros(1, dtype=torch.long), 0)


class TestArchitectureParity:
    def test_rwm_shapes_equal_fwm_minus_reward_continue(self, fwm, rwm):
        fwm_shapes = {k: tuple(v.shape) for k, v in fwm.state_dict().items()}
        rwm_shapes = {k: tuple(v.shape) for k, v in rwm.state_dict().items()}
        dropped = {k for k in fwm_shapes if k.startswith(("reward_head", "continue_head"))}
        assert set(fwm_shapes) - dropped == set(rwm_shapes)
        for key in rwm_shapes:
            assert rwm_shapes[key] == fwm_shapes[key]

    def test_rwm_has_no_reward_or_continue_heads(self, rwm):
        assert not hasattr(rwm, "reward_head")
        assert not hasattr(rwm, "continue_head")


class TestCounterfactualPipeline:
    def test_generate_prior_state_contract(self, fwm, rwm, micro_episode):
        result = generate_prior_state(fwm, rwm, micro_episode, t=2, a_cf=int(Action.MOVE_EAST))
        assert result.expected_obs.window.shape == (5, 5)
        assert result.diff_mask.shape == (5, 5)
        assert result.expected_image.size == (80, 80)
        assert result.same_as_actual == (int(micro_episode.actions[2]) == int(Action.MOVE_EAST))

    def test_deterministic_given_models(self, fwm, rwm, micro_episode):
        a = generate_prior_state(fwm, rwm, micro_episode, 3, 1)
        b = generate_prior_state(fwm, rwm, micro_episode, 3, 1)
        assert np.array_equal(a.expected_obs.window, b.expected_obs.window)
        assert a.expected_image.tobytes() == b.expected_image.tobytes()

    def test_bad_index_and_action_rejected(self, fwm, rwm, micro_episode):
        with pytest.raises(ValueError):
            generate_prior_state(fwm, rwm, micro_episode, len(micro_episode) - 1, 0)
        with pytest.raises(ValueError):
            generate_prior_state(fwm, rwm, micro_episode, 0, NO_PREDECESSOR)

    def test_prior_anchor_path_runs(self, fwm, rwm, micro_episode):
        result = generate_prior_state(fwm, rwm, micro_episode, 1, 2, successor_anchor="prior")
        assert result.expected_obs.window.shape == (5, 5)


class TestCheckpoints:
    def test_round_trip_forward(self, fwm, micro_episode, tmp_path):
        fwm.train_batch(chunks_from(micro_episode, 2, 6))
        path = tmp_path / "fwm.ckpt"
        save_model(path, fwm)
        loaded = load_model(path, "forward")
        assert loaded.train_steps == fwm.train_steps
        for (ka, va), (kb, vb) in zip(fwm.state_dict().items(), loaded.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)
        # Optimizer moments restored too: one more step matches exactly.
        gen_a, gen_b = torch.Generator().manual_seed(0), torch.Generator().manual_seed(0)
        chunks = chunks_from(micro_episode, 2, 6, seed=9)
        la = fwm.train_batch(chunks, gen_a)[0]["loss"]
        lb = loaded.train_batch(chunks, gen_b)[0]["loss"]
        assert la == pytest.approx(lb, rel=0, abs=0)

    def test_role_mismatch_rejected(self, rwm, tmp_path):
        from hindsight.models import CheckpointError

        path = tmp_path / "rwm.ckpt"
        save_model(path, rwm)
        with pytest.raises(CheckpointError):
            load_model(path, "forward")

    def test_policy_round_trip(self, tmp_path):
        from hindsight.agent import ActorCritic

        policy = ActorCritic(TINY)
        path = tmp_path / "policy.ckpt"
        save_model(path, policy)
        loaded = load_model(path, "policy")
        for (ka, va), (kb, vb) in zip(policy.state_dict().items(), loaded.state_dict().items()):
            assert ka == kb and torch.equal(va, vb)
