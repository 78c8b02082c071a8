"""Tabular dynamics and Bayes-inverted reverse posterior tests."""
import numpy as np
import pytest

from hindsight.env import Action, Facing, N_ACTIONS, reset, step
from hindsight.models import LatentSpec, ObsSpec, ReverseWorldModel
from hindsight.oracle import (
    OracleError,
    build_tabular,
    compare_rwm,
    dump_tabular,
    reverse_posterior,
)
from hindsight.replay import EpisodeBuilder


def collect_random_episodes(registry, scenario_id, n, seed, p=None):
    episodes = []
    rng = np.random.default_rng(seed)
    scenario = registry.scenario(scenario_id)
    for i in range(n):
        world, obs = reset(scenario, seed + i, registry)
        builder = EpisodeBuilder(scenario_id, seed + i, obs)
        cont = True
        while cont:
            action = int(rng.choice(N_ACTIONS, p=p))
            world, obs, reward, cont = step(world, action)
            builder.add(action, reward, cont, obs)
        episodes.append(builder.finish(truncated=world.truncated))
    return episodes


class TestBuildTabular:
    def test_empty_room_full_table(self, registry):
        from tests.test_env import make_room

        mdp = build_tabular(make_room(size=3), max_inventory=0)
        assert mdp.n_states == 36
        assert mdp.transition.shape == (36, 6)
        assert (mdp.transition >= 0).all()  # no terminal states without a recipe

    def test_deterministic_rows_have_one_successor(self, registry):
        mdp = build_tabular(registry.base_world("corridor"))
        live = mdp.transition >= 0
        assert live.all(axis=1).sum() == mdp.n_states  # every state has all actions

    def test_occupancy_normalized(self, registry):
        episodes = collect_random_episodes(registry, "corridor", 5, seed=0)
        mdp = build_tabular(registry.base_world("corridor"), episodes, registry)
        assert abs(mdp.occupancy.sum() - 1.0) < 1e-12


class TestReversePosterior:
    def test_unique_deterministic_predecessor(self, registry):
        # Corridor cells A,B,C in a row: arriving at C facing east via
        # move-east means either advancing from B (already facing east) or
        # turning in place at C. With occupancy restricted to east-moving
        # traffic from B, the posterior is a point mass on B.
        world = registry.base_world("corridor")
        mdp = build_tabular(world)
        b = world.copy()
        b.agent_pos, b.agent_facing = (2, 1), Facing.EAST
        c = world.copy()
        c.agent_pos, c.agent_facing = (3, 1), Facing.EAST
        b_idx, c_idx = mdp.state_index(b), mdp.state_index(c)

        post = reverse_posterior(mdp, c_idx, int(Action.MOVE_EAST))
        assert b_idx in post.support  # advancing from B is always a candidate
        assert np.all(mdp.transition[post.support, int(Action.MOVE_EAST)] == c_idx)

        mdp.occupancy[:] = 0.0
        mdp.occupancy[b_idx, int(Action.MOVE_EAST)] = 1.0
        post = reverse_posterior(mdp, c_idx, int(Action.MOVE_EAST))
        assert post.support.tolist() == [b_idx]
        assert post.probs.tolist() == [1.0]

    def test_equal_occupancy_splits_half(self):
        from tests.test_env import make_room

        # In a 2-wide room, (x, facing south) via move-south has two candidate
        # predecessors: arriving from the north, or turning in place. Uniform
        # occupancy weights them equally.
        mdp = build_tabular(make_room(size=2, agent=(0, 0)), max_inventory=0)
        target = None
        for i, s in enumerate(mdp.states):
            if s.agent_pos == (0, 1) and s.agent_facing == Facing.SOUTH:
                target = i
        post = reverse_posterior(mdp, target, int(Action.MOVE_SOUTH))
        # Predecessors: (0,0) facing S (moved) and (0,1) facing != S (turned)... the
        # turn-in-place ones land on the same position with facing changed to S.
        assert len(post.support) >= 2
        assert np.allclose(post.probs, 1.0 / len(post.support))

    def test_empty_support_for_unobserved_pair(self, registry):
        episodes = collect_random_episodes(registry, "corridor", 1, seed=1)
        mdp = build_tabular(registry.base_world("corridor"), episodes, registry)
        # Find a (s_next, a) pair whose predecessors were never visited.
        for s_next in range(mdp.n_states):
            for a in range(N_ACTIONS):
                preds = mdp.predecessors(s_next, a)
                if len(preds) and np.all(mdp.occupancy[preds, a] == 0):
                    post = reverse_posterior(mdp, s_next, a)
                    assert post.empty
                    with pytest.raises(OracleError):
                        post.argmax()
                    return
        pytest.skip("single short episode unexpectedly covered every pair")

    def test_bayes_consistency_all_pairs(self, registry):
        episodes = collect_random_episodes(registry, "corridor", 20, seed=2)
        mdp = build_tabular(registry.base_world("corridor"), episodes, registry)
        checked = 0
        for s_next in range(mdp.n_states):
            for a in range(N_ACTIONS):
                post = reverse_posterior(mdp, s_next, a)
                if not post.empty:
                    assert abs(post.probs.sum() - 1.0) < 1e-12
                    # Forward-reverse identity on the deterministic env.
                    assert np.all(mdp.transition[post.support, a] == s_next)
                    checked += 1
        assert checked > 30

    def test_matches_empirical_triple_counts(self, registry):
        # The occupancy-weighted posterior must equal frequency counts of
        # (s_prev, a, s_next) triples from the same logged steps.
        episodes = collect_random_episodes(registry, "corridor", 60, seed=3)
        mdp = build_tabular(registry.base_world("corridor"), episodes, registry)

        from hindsight.replay import replay_episode_worlds

        triples: dict[tuple, dict[int, int]] = {}
        for ep in episodes:
            worlds = replay_episode_worlds(ep, registry)
            for t in range(len(ep) - 1):
                s_prev = mdp.state_index(worlds[t])
                s_next = mdp.state_index(worlds[t + 1])
                a = int(ep.actions[t])
                triples.setdefault((s_next, a), {}).setdefault(s_prev, 0)
                triples[(s_next, a)][s_prev] += 1

        worst_tv = 0.0
        for (s_next, a), counts in triples.items():
            post = reverse_posterior(mdp, s_next, a)
            empirical = np.zeros(len(post.support))
            lookup = {s: i for i, s in enumerate(post.support)}
            for s_prev, c in counts.items():
                empirical[lookup[s_prev]] = c
            empirical /= empirical.sum()
            worst_tv = max(worst_tv, 0.5 * np.abs(empirical - post.probs).sum())
        assert worst_tv <= 0.02

    def test_dump_is_parseable_text(self, registry):
        mdp = build_tabular(registry.base_world("corridor"))
        text = dump_tabular(mdp)
        assert text.startswith("states: 32")
        assert len(text.splitlines()) == mdp.n_states + 2


class TestCompareRwm:
    def test_untrained_rwm_reports_low_accuracy(self, registry):
        world = registry.base_world("corridor")
        episodes = collect_random_episodes(registry, "corridor", 10, seed=4)
        mdp = build_tabular(world, episodes, registry)
        spec = ObsSpec.for_world(world)
        rwm = ReverseWorldModel(spec, LatentSpec(h_dim=16, z_groups=2, z_classes=4, hidden=16, layers=1))
        result = compare_rwm(mdp, rwm, spec, samples=40, seed=0)
        assert result.n_scored + result.n_empty_support == 40
        assert 0.0 <= result.top1_accuracy <= 0.5  # chance-level, reported not asserted tightly
        assert 0.0 <= result.mean_tv_proxy <= 1.0
