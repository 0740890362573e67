import numpy as np
import pytest

from oracles import random_game_tensors, random_policy
from zsmail.environments import ExpertMixSpec, LowerBoundSpec, build_lower_bound_expert, build_lower_bound_game
from zsmail.equilibrium import nash_gap
from zsmail.expert_data import (
    Dataset,
    ExpertOracle,
    Player,
    behavior_cloning,
    collect_dataset,
    load_dataset,
    query_expert_action,
    save_dataset,
)
from zsmail.game import PolicyPair, TabularPolicy, Trajectory, ZeroSumGame
from zsmail.rng import make_rng

LB = LowerBoundSpec()


def random_setup(seed, S=4, A=3, B=2):
    rng = np.random.default_rng(seed)
    P, r, g, d0 = random_game_tensors(rng, S, A, B, 0.9)
    pair = PolicyPair(TabularPolicy(random_policy(rng, S, A)), TabularPolicy(random_policy(rng, S, B)))
    return ZeroSumGame(P, r, g, d0), pair


class TestOracle:
    def test_deterministic_expert(self):
        oracle = ExpertOracle(PolicyPair(TabularPolicy.deterministic([2, 0], 3), TabularPolicy.deterministic([1, 1], 2)))
        rng = make_rng(0)
        assert [query_expert_action(oracle, Player.MAX, 0, rng) for _ in range(5)] == [2] * 5
        assert query_expert_action(oracle, "min", 1, rng) == 1
        assert oracle.queries == 6

    def test_uniform_frequencies(self):
        oracle = ExpertOracle(PolicyPair(TabularPolicy.uniform(1, 3), TabularPolicy.uniform(1, 3)))
        rng = make_rng(1)
        n = 30_000
        counts = np.bincount([oracle.sample(Player.MAX, 0, rng) for _ in range(n)], minlength=3)
        sigma = np.sqrt(n * (1 / 3) * (2 / 3))
        assert np.all(np.abs(counts - n / 3) <= 3 * sigma)
        assert oracle.queries == n

    def test_shared_seed_gives_identical_draws(self):
        _, pair = random_setup(2)
        draws = []
        for _ in range(2):
            oracle, rng = ExpertOracle(pair), make_rng(42)
            draws.append([oracle.sample(Player.MIN, s % 4, rng) for s in range(100)])
        assert draws[0] == draws[1]

    def test_fast_sampler_matches_sample(self):
        _, pair = random_setup(3)
        slow, fast = ExpertOracle(pair), ExpertOracle(pair)
        draw = fast.fast_sampler(Player.MAX)
        r1, r2 = make_rng(5), make_rng(5)
        assert [slow.sample(Player.MAX, s % 4, r1) for s in range(200)] == [draw(s % 4, r2.random()) for s in range(200)]
        assert fast.queries == 200

    def test_bad_state_and_negative_charge(self):
        _, pair = random_setup(4)
        oracle = ExpertOracle(pair)
        with pytest.raises(IndexError):
            oracle.sample(Player.MAX, 9, make_rng(0))
        with pytest.raises(ValueError):
            oracle.charge(-1)
        assert oracle.queries == 0


class TestCollection:
    def test_empty_request(self):
        game, pair = random_setup(5)
        oracle = ExpertOracle(pair)
        data = collect_dataset(game, oracle, 0, make_rng(0))
        assert len(data) == 0 and oracle.queries == 0
        assert data.state_counts.sum() == 0

    def test_queries_and_length(self):
        game, pair = random_setup(6)
        oracle = ExpertOracle(pair)
        data = collect_dataset(game, oracle, 1000, make_rng(1))
        assert len(data) == 1000
        assert oracle.queries == 2 * sum(len(t) for t in data.trajectories) == 2 * data.total_steps
        sigma = np.sqrt(1000 * 0.9) / 0.1
        assert abs(data.total_steps - 9000) <= 3 * sigma
        assert data.counts_consistent()

    def test_counts_equal_recount(self):
        game, pair = random_setup(7)
        data = collect_dataset(game, ExpertOracle(pair), 200, make_rng(2))
        steps = np.concatenate([t.steps for t in data.trajectories])
        assert np.array_equal(data.state_counts, np.bincount(steps[:, 0], minlength=4))
        for s, a in {(int(s), int(a)) for s, a, _ in steps}:
            assert data.max_action_counts[s, a] == np.sum((steps[:, 0] == s) & (steps[:, 1] == a))

    def test_lower_bound_expert_stays_on_its_path(self):
        game = build_lower_bound_game(LB)
        data = collect_dataset(game, ExpertOracle(build_lower_bound_expert(LB, ExpertMixSpec(1.0))), 500, make_rng(3))
        assert np.all(data.state_counts[[1, 4, 5, 6]] == 0)


class TestBehaviorCloning:
    def test_empty_dataset_gives_uniform(self):
        data = Dataset.from_trajectories([], 3, 2, 4)
        pair = behavior_cloning(data, 2, 4)
        np.testing.assert_array_equal(pair.max_policy.probs, 0.5)
        np.testing.assert_array_equal(pair.min_policy.probs, 0.25)

    def test_degenerate_counts(self):
        data = Dataset.from_trajectories([Trajectory(np.tile([0, 2, 1], (10, 1)))], 2, 3, 3)
        pair = behavior_cloning(data, 3, 3)
        assert pair.max_policy.probs[0, 2] == 1.0
        np.testing.assert_array_equal(pair.max_policy.probs[1], 1 / 3)

    def test_exact_ratios(self):
        steps = np.array([[0, 0, 1], [0, 1, 1], [0, 1, 0], [1, 0, 0]])
        pair = behavior_cloning(Dataset.from_trajectories([Trajectory(steps)], 2, 2, 2), 2, 2)
        np.testing.assert_array_equal(pair.max_policy.probs[0], [1 / 3, 2 / 3])
        np.testing.assert_array_equal(pair.min_policy.probs[0], [1 / 3, 2 / 3])
        np.testing.assert_array_equal(pair.max_policy.probs[1], [1, 0])

    def test_inconsistent_counts_rejected(self):
        data = Dataset.from_trajectories([Trajectory(np.array([[0, 0, 0]]))], 1, 2, 2)
        broken = Dataset(data.trajectories, np.array([2]), data.max_action_counts, data.min_action_counts)
        with pytest.raises(ValueError, match="inconsistent counts"):
            behavior_cloning(broken, 2, 2)

    def test_permutation_invariance(self):
        game, pair = random_setup(8)
        data = collect_dataset(game, ExpertOracle(pair), 100, make_rng(4))
        perm = np.random.default_rng(0).permutation(100)
        shuffled = Dataset.from_trajectories([data.trajectories[i] for i in perm], 4, 3, 2)
        a, b = behavior_cloning(data, 3, 2), behavior_cloning(shuffled, 3, 2)
        assert a.max_policy.probs.tobytes() == b.max_policy.probs.tobytes()
        assert a.min_policy.probs.tobytes() == b.min_policy.probs.tobytes()

    def test_lower_bound_case_d_plateau(self):
        game = build_lower_bound_game(LB)
        expert = build_lower_bound_expert(LB, ExpertMixSpec(1.0))
        data = collect_dataset(game, ExpertOracle(expert), 10_000, make_rng(5))
        clone = behavior_cloning(data, 3, 3)
        np.testing.assert_array_equal(clone.max_policy.probs[0], expert.max_policy.probs[0])
        assert data.state_counts[2] > 0
        np.testing.assert_array_equal(clone.max_policy.probs[1], 1 / 3)
        assert nash_gap(game, clone).gap == pytest.approx(0.54, abs=1e-12)

    def test_error_shrinks_with_more_data(self):
        game, pair = random_setup(9, S=3, A=2, B=2)
        errors = []
        for n in (500, 2000, 8000):
            clone = behavior_cloning(collect_dataset(game, ExpertOracle(pair), n, make_rng(n)), 2, 2)
            errors.append(0.5 * np.abs(clone.max_policy.probs - pair.max_policy.probs).sum(axis=1).max())
        # 4x more data should roughly halve the error; allow 50% slack either way
        assert errors[1] <= 0.75 * errors[0] or errors[2] <= 0.75 * errors[1]
        assert errors[2] < errors[0]


class TestSerialization:
    def test_round_trip(self, tmp_path):
        game, pair = random_setup(10)
        data = collect_dataset(game, ExpertOracle(pair), 50, make_rng(6))
        path = tmp_path / "data.csv"
        save_dataset(data, path)
        loaded = load_dataset(path, 4, 3, 2, n_trajectories=50)
        assert len(loaded) == 50
        for a, b in zip(data.trajectories, loaded.trajectories):
            np.testing.assert_array_equal(a.steps.reshape(-1, 3), b.steps.reshape(-1, 3))
        np.testing.assert_array_equal(loaded.max_action_counts, data.max_action_counts)

    @pytest.mark.parametrize(
        "text, message",
        [("0,0,0,0\n", "five unsigned"), ("0,0,9,0,0\n", "out of range"), ("0,1,0,0,0\n", "out of order"), ("0,0,-1,0,0\n", "five unsigned")],
    )
    def test_malformed_files(self, tmp_path, text, message):
        path = tmp_path / "bad.csv"
        path.write_text(text)
        with pytest.raises(ValueError, match=message):
            load_dataset(path, 4, 3, 2)

    def test_counts_recomputed_not_trusted(self, tmp_path):
        path = tmp_path / "d.csv"
        path.write_text("0,0,1,2,0\n0,1,1,2,1\n2,0,3,0,0\n")
        data = load_dataset(path, 4, 3, 2)
        assert len(data) == 3
        assert data.state_counts.tolist() == [0, 2, 0, 1]
        assert data.max_action_counts[1, 2] == 2
