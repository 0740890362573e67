import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
import pytest

from oracles import concentrability_by_enumeration, enumerate_best_value, maximin_grid_2x2, random_game_tensors, random_policy
from zsmail.environments import (
    ExpertMixSpec,
    LowerBoundSpec,
    TransitionMap,
    build_lower_bound_expert,
    build_lower_bound_game,
    build_random_zero_sum,
)
from zsmail.equilibrium import (
    ConcentrabilityMode,
    MatrixGameSolution,
    best_response_max,
    best_response_min,
    expert_concentrability,
    nash_gap,
    shapley_value_iteration,
    solve_matrix_game,
)
from zsmail.game import PolicyPair, TabularPolicy, ZeroSumGame, value_of_pair

LB = LowerBoundSpec()


def lb_pair_uniform_at_s1():
    expert = build_lower_bound_expert(LB, ExpertMixSpec(1.0))
    probs = expert.max_policy.probs.copy()
    probs[1] = 1.0 / 3
    return expert, TabularPolicy(probs)


class TestMatrixGames:
    def test_zero_matrix(self):
        sol = solve_matrix_game(np.zeros((3, 2)))
        assert sol.value == 0.0
        assert sol.row_strategy.sum() == pytest.approx(1.0)

    def test_matching_pennies(self):
        sol = solve_matrix_game([[1, -1], [-1, 1]])
        assert sol.value == pytest.approx(0.0, abs=1e-12)
        np.testing.assert_allclose(sol.row_strategy, [0.5, 0.5], atol=1e-10)
        np.testing.assert_allclose(sol.col_strategy, [0.5, 0.5], atol=1e-10)

    def test_diagonal_two_by_two(self):
        M = [[2, 0], [0, 1]]
        sol = solve_matrix_game(M)
        grid_value, grid_row = maximin_grid_2x2(M)
        assert sol.value == pytest.approx(2 / 3, abs=1e-10)
        assert abs(sol.value - grid_value) < 1e-5
        np.testing.assert_allclose(sol.row_strategy, [1 / 3, 2 / 3], atol=1e-10)
        np.testing.assert_allclose(sol.row_strategy, grid_row, atol=1e-5)
        np.testing.assert_allclose(sol.col_strategy, [1 / 3, 2 / 3], atol=1e-10)

    def test_pure_saddle(self):
        sol = solve_matrix_game([[3, 1], [4, 2]])
        assert sol.value == pytest.approx(2.0)
        np.testing.assert_allclose(sol.row_strategy, [0, 1])

    @pytest.mark.parametrize("seed", range(20))
    def test_random_matrices_are_certified(self, seed):
        rng = np.random.default_rng(seed)
        M = rng.uniform(-1, 1, size=(rng.integers(1, 6), rng.integers(1, 6)))
        sol = solve_matrix_game(M)
        assert sol.deviation_slack(M) <= 1e-9
        assert np.all(sol.row_strategy >= 0) and sol.row_strategy.sum() == pytest.approx(1.0)

    def test_wrong_hint_is_harmless(self):
        M = np.array([[2.0, 0.0], [0.0, 1.0]])
        wrong = MatrixGameSolution(np.array([1.0, 0.0]), np.array([0.0, 1.0]), 0.0)
        sol = solve_matrix_game(M, hint=wrong)
        assert sol.value == pytest.approx(2 / 3, abs=1e-10)


class TestShapley:
    def test_one_state_constant_reward(self):
        game = ZeroSumGame(np.ones((1, 2, 2, 1)), np.ones((1, 2, 2)), 0.9, [1.0])
        result = shapley_value_iteration(game)
        assert result.converged
        np.testing.assert_allclose(result.values, [10.0], atol=1e-7)

    @pytest.mark.parametrize("transition_map", list(TransitionMap))
    def test_lower_bound_equilibrium(self, transition_map):
        game = build_lower_bound_game(LowerBoundSpec(transition_map=transition_map))
        pair, values = shapley_value_iteration(game, tolerance=1e-8)
        assert nash_gap(game, pair).gap <= 1e-6
        assert abs(values[0]) <= 1e-7

    def test_random_ten_state_game(self):
        game = build_random_zero_sum(10, 3, 3, 0.9, 0)
        result = shapley_value_iteration(game, tolerance=1e-8, max_iters=2000)
        assert result.converged and result.iterations <= 2000
        assert nash_gap(game, result.pair).gap <= 1e-6

    def test_exhausted_iterations_are_flagged(self):
        game = build_random_zero_sum(4, 2, 2, 0.99, 1)
        with pytest.warns(UserWarning, match="stopping rule"):
            result = shapley_value_iteration(game, tolerance=1e-12, max_iters=3)
        assert not result.converged


class TestBestResponses:
    def test_single_action_is_policy_evaluation(self):
        P, r, g, d0 = random_game_tensors(np.random.default_rng(0), 3, 1, 2, 0.9)
        game = ZeroSumGame(P, r, g, d0)
        nu = TabularPolicy(random_policy(np.random.default_rng(1), 3, 2))
        br, V = best_response_max(game, nu)
        np.testing.assert_array_equal(br.greedy_actions(), 0)
        np.testing.assert_allclose(V, value_of_pair(game, PolicyPair(TabularPolicy.uniform(3, 1), nu)), atol=1e-12)

    def test_lower_bound_max_best_response_is_zero(self):
        game = build_lower_bound_game(LB)
        _, uniform_s1 = lb_pair_uniform_at_s1()
        _, V = best_response_max(game, uniform_s1)
        scores, _ = enumerate_best_value(game.transition, game.reward, 0.9, game.initial_dist, uniform_s1.probs, "max")
        assert game.initial_dist @ V == pytest.approx(0.0, abs=1e-12)
        assert max(scores.values()) == pytest.approx(0.0, abs=1e-12)

    def test_lower_bound_min_best_response(self):
        game = build_lower_bound_game(LB)
        _, uniform_s1 = lb_pair_uniform_at_s1()
        _, V = best_response_min(game, uniform_s1)
        expected = -(2 / 3) * 0.1 * 0.9**2 / 0.1
        scores, _ = enumerate_best_value(game.transition, game.reward, 0.9, game.initial_dist, uniform_s1.probs, "min")
        assert game.initial_dist @ V == pytest.approx(expected, abs=1e-12)
        assert min(scores.values()) == pytest.approx(expected, abs=1e-12)
        assert expected == pytest.approx(-0.54)

    @pytest.mark.parametrize("seed", range(12))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(100 + seed)
        S, A, B = int(rng.integers(1, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        P, r, g, d0 = random_game_tensors(rng, S, A, B, 0.9)
        game = ZeroSumGame(P, r, g, d0)
        mu, nu = random_policy(rng, S, A), random_policy(rng, S, B)
        _, Vmax = best_response_max(game, TabularPolicy(nu))
        _, best_states = enumerate_best_value(P, r, g, d0, nu, "max")
        np.testing.assert_allclose(Vmax, best_states, atol=1e-9)
        _, Vmin = best_response_min(game, TabularPolicy(mu))
        _, best_states = enumerate_best_value(P, r, g, d0, mu, "min")
        np.testing.assert_allclose(Vmin, best_states, atol=1e-9)

    def test_ties_broken_toward_lowest_index(self):
        game = ZeroSumGame(np.ones((1, 3, 1, 1)), np.zeros((1, 3, 1)), 0.5, [1.0])
        br, _ = best_response_max(game, TabularPolicy.uniform(1, 1))
        assert br.greedy_actions().tolist() == [0]


class TestNashGap:
    def test_lower_bound_pair(self):
        game = build_lower_bound_game(LB)
        expert, uniform_s1 = lb_pair_uniform_at_s1()
        report = nash_gap(game, PolicyPair(uniform_s1, uniform_s1))
        assert report.gap == pytest.approx(0.54, abs=1e-12)
        assert nash_gap(game, expert).gap == pytest.approx(0.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(200 + seed)
        S, A, B = int(rng.integers(1, 5)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        P, r, g, d0 = random_game_tensors(rng, S, A, B, 0.8)
        game = ZeroSumGame(P, r, g, d0)
        mu, nu = random_policy(rng, S, A), random_policy(rng, S, B)
        best_max, _ = enumerate_best_value(P, r, g, d0, nu, "max")
        best_min, _ = enumerate_best_value(P, r, g, d0, mu, "min")
        expected = max(best_max.values()) - min(best_min.values())
        report = nash_gap(game, PolicyPair(TabularPolicy(mu), TabularPolicy(nu)))
        assert report.gap == pytest.approx(expected, abs=1e-10)
        assert report.gap >= 0


class TestConcentrability:
    def test_pure_expert_is_infinite(self):
        game = build_lower_bound_game(LB)
        report = expert_concentrability(game, build_lower_bound_expert(LB, ExpertMixSpec(1.0)))
        assert report.infinite
        assert report.witness_state == 1
        assert report.lower_bound_only

    # frozen from the enumeration oracle; for p near 1 they equal 1 / (1 - p^2)
    @pytest.mark.parametrize("p, expected", [(0.0, 1.0), (0.5, 2.0), (0.999, 1 / (1 - 0.999**2)), (0.9999, 1 / (1 - 0.9999**2))])
    def test_mixed_experts_are_finite(self, p, expected):
        game = build_lower_bound_game(LB)
        expert = build_lower_bound_expert(LB, ExpertMixSpec(p))
        report = expert_concentrability(game, expert)
        oracle = concentrability_by_enumeration(
            game.transition, game.reward, 0.9, game.initial_dist, expert.max_policy.probs, expert.min_policy.probs
        )
        assert report.value == pytest.approx(oracle, rel=1e-9)
        assert report.value == pytest.approx(expected, rel=1e-9)

    def test_single_state_game_is_one(self):
        game = ZeroSumGame(np.ones((1, 2, 2, 1)), np.array([[[1.0, 0.0], [0.0, 0.5]]]), 0.9, [1.0])
        expert = shapley_value_iteration(game).pair
        for mode in ConcentrabilityMode:
            assert expert_concentrability(game, expert, mode).value == pytest.approx(1.0)

    def test_canonical_never_exceeds_enumeration(self):
        game = build_lower_bound_game(LB)
        expert = build_lower_bound_expert(LB, ExpertMixSpec(0.5))
        canonical = expert_concentrability(game, expert, ConcentrabilityMode.CANONICAL_GREEDY)
        enumerated = expert_concentrability(game, expert, ConcentrabilityMode.ENUMERATED_DETERMINISTIC)
        assert canonical.value <= enumerated.value
        assert enumerated.deviations_checked >= canonical.deviations_checked
        assert math.isfinite(enumerated.value)


@settings(max_examples=150, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 5), st.integers(1, 5)), elements=st.floats(-1, 1)))
def test_matrix_solutions_are_certified(M):
    sol = solve_matrix_game(M)
    assert sol.deviation_slack(M) <= 1e-9
    assert sol.row_strategy.sum() == pytest.approx(1.0) and sol.col_strategy.sum() == pytest.approx(1.0)


def test_badly_scaled_matrix_is_solved_exactly():
    M = np.array([[0.0, 1e-8], [1.0, 0.0]])
    sol = solve_matrix_game(M)
    assert sol.deviation_slack(M) <= 1e-12
    assert sol.value == pytest.approx(1e-8 / (1 + 1e-8), rel=1e-9)
